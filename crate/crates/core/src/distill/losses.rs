use super::identifiers::{LogitIdentifier, RepIdentifier};
use super::DistillError;
use crate::numkit::{log_softmax_rows, softmax_rows, Binding, DenseMatrix, Tape, Var};

/// Teacher and student representations of one graph as tape handles.
///
/// `h_*` are `n x d` node embeddings and `s_*` are `1 x d` summaries.
#[derive(Debug, Clone, Copy)]
pub struct DeView {
    pub h_t: Var,
    pub h_s: Var,
    pub s_t: Var,
    pub s_s: Var,
}

/// Pre-sigmoid scores of every pair the representation identifier judges.
#[derive(Debug, Clone, Copy)]
pub struct DeScores {
    /// Teacher-teacher and student-student edge pairs; absent without edges.
    pub local: Option<(Var, Var)>,
    /// `(h_T, s_T)`, `(h_S, s_T)`, `(h_S, s_S)`, `(h_T, s_S)`.
    pub global: [Var; 4],
}

/// Targets of the four global pair groups, in [`DeScores::global`] order.
pub const GLOBAL_TARGETS: [f32; 4] = [1.0, 0.0, 1.0, 0.0];

/// Scores every pair with the identifier bound in `bind`.
pub fn de_scores(
    tape: &mut Tape<'_>,
    view: &DeView,
    edges: &[(usize, usize)],
    ident: &RepIdentifier,
    bind: &Binding,
) -> Result<DeScores, DistillError> {
    let (ht, hs) = (tape.value(view.h_t), tape.value(view.h_s));
    if ht.shape() != hs.shape() {
        return Err(DistillError::Dim(format!("teacher {:?} vs student {:?} embeddings", ht.shape(), hs.shape())));
    }
    let (n, d) = ht.shape();
    if d != ident.dim() {
        return Err(DistillError::Dim(format!("embedding dim {d} vs identifier dim {}", ident.dim())));
    }
    for s in [view.s_t, view.s_s] {
        if tape.value(s).shape() != (1, d) {
            return Err(DistillError::Dim(format!("summary must be 1x{d}, got {:?}", tape.value(s).shape())));
        }
    }
    if let Some(&(v, u)) = edges.iter().find(|&&(v, u)| v >= n || u >= n) {
        return Err(DistillError::Dim(format!("edge ({v}, {u}) outside {n} nodes")));
    }
    let (wl, wg) = (bind[ident.local_id()], bind[ident.global_id()]);
    let local = if edges.is_empty() {
        None
    } else {
        let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let mut side = |h: Var| -> Result<Var, DistillError> {
            let a = tape.select_rows(h, &src)?;
            let b = tape.select_rows(h, &dst)?;
            Ok(tape.diag_bilinear(a, wl, b)?)
        };
        let t = side(view.h_t)?;
        let s = side(view.h_s)?;
        Some((t, s))
    };
    let st = tape.repeat_rows(view.s_t, n)?;
    let ss = tape.repeat_rows(view.s_s, n)?;
    let global = [
        tape.diag_bilinear(view.h_t, wg, st)?,
        tape.diag_bilinear(view.h_s, wg, st)?,
        tape.diag_bilinear(view.h_s, wg, ss)?,
        tape.diag_bilinear(view.h_t, wg, ss)?,
    ];
    Ok(DeScores { local, global })
}

fn bce_const(tape: &mut Tape<'_>, scores: Var, target: f32) -> Result<Var, DistillError> {
    let n = tape.value(scores).len();
    Ok(tape.bce_with_logits(scores, &vec![target; n])?)
}

fn weighted_sum(tape: &mut Tape<'_>, terms: &[(Var, f32)]) -> Result<Var, DistillError> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let scaled = if w == 1.0 { v } else { tape.scale(v, w)? };
        acc = Some(match acc {
            Some(a) => tape.add(a, scaled)?,
            None => scaled,
        });
    }
    acc.ok_or_else(|| DistillError::Contract("empty loss sum".into()))
}

/// Negative log-likelihood the representation identifier minimizes: the
/// mean edge-pair cross-entropy plus the mean node-summary cross-entropy.
pub fn de_discriminator_from_scores(tape: &mut Tape<'_>, sc: &DeScores) -> Result<Var, DistillError> {
    let mut terms = Vec::with_capacity(6);
    if let Some((t, s)) = sc.local {
        terms.push((bce_const(tape, t, 1.0)?, 0.5));
        terms.push((bce_const(tape, s, 0.0)?, 0.5));
    }
    for (&g, &target) in sc.global.iter().zip(&GLOBAL_TARGETS) {
        terms.push((bce_const(tape, g, target)?, 0.25));
    }
    weighted_sum(tape, &terms)
}

/// Generator side of the same game. The saturating form is the exact
/// negation of the discriminator loss; the non-saturating form flips the
/// targets of every student-dependent pair and drops the teacher-only one.
pub fn de_generator_from_scores(tape: &mut Tape<'_>, sc: &DeScores, non_saturating: bool) -> Result<Var, DistillError> {
    if !non_saturating {
        let d = de_discriminator_from_scores(tape, sc)?;
        return Ok(tape.scale(d, -1.0)?);
    }
    let mut terms = Vec::with_capacity(4);
    if let Some((_, s)) = sc.local {
        terms.push((bce_const(tape, s, 1.0)?, 0.5));
    }
    for (&g, &target) in sc.global.iter().zip(&GLOBAL_TARGETS).skip(1) {
        terms.push((bce_const(tape, g, 1.0 - target)?, 0.25));
    }
    weighted_sum(tape, &terms)
}

pub fn de_discriminator_loss(
    tape: &mut Tape<'_>,
    view: &DeView,
    edges: &[(usize, usize)],
    ident: &RepIdentifier,
    bind: &Binding,
) -> Result<Var, DistillError> {
    let sc = de_scores(tape, view, edges, ident, bind)?;
    de_discriminator_from_scores(tape, &sc)
}

pub fn de_generator_loss(
    tape: &mut Tape<'_>,
    view: &DeView,
    edges: &[(usize, usize)],
    ident: &RepIdentifier,
    bind: &Binding,
    non_saturating: bool,
) -> Result<Var, DistillError> {
    let sc = de_scores(tape, view, edges, ident, bind)?;
    de_generator_from_scores(tape, &sc, non_saturating)
}

/// Labelled rows of a logit matrix with their class labels.
#[derive(Debug, Clone, Copy)]
pub struct Supervision<'s> {
    pub rows: &'s [usize],
    pub labels: &'s [usize],
}

impl Supervision<'_> {
    fn check(&self, n: usize, classes: usize) -> Result<(), DistillError> {
        if self.rows.len() != self.labels.len() {
            return Err(DistillError::Dim(format!(
                "{} supervised rows vs {} labels",
                self.rows.len(),
                self.labels.len()
            )));
        }
        if let Some(&r) = self.rows.iter().find(|&&r| r >= n) {
            return Err(DistillError::Dim(format!("supervised row {r} outside {n} rows")));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(DistillError::Dim(format!("label {l} outside {classes} classes")));
        }
        Ok(())
    }
}

/// Identifier outputs for teacher and student logits.
#[derive(Debug, Clone, Copy)]
pub struct DlOutputs {
    pub class_t: Var,
    pub rf_t: Var,
    pub class_s: Var,
    pub rf_s: Var,
}

pub fn dl_outputs(
    tape: &mut Tape<'_>,
    z_t: Var,
    z_s: Var,
    ident: &LogitIdentifier,
    bind: &Binding,
) -> Result<DlOutputs, DistillError> {
    if tape.value(z_t).shape() != tape.value(z_s).shape() {
        return Err(DistillError::Dim(format!(
            "teacher {:?} vs student {:?} logits",
            tape.value(z_t).shape(),
            tape.value(z_s).shape()
        )));
    }
    let (class_t, rf_t) = ident.forward(tape, bind, z_t)?;
    let (class_s, rf_s) = ident.forward(tape, bind, z_s)?;
    Ok(DlOutputs {
        class_t,
        rf_t,
        class_s,
        rf_s,
    })
}

fn label_ce(tape: &mut Tape<'_>, logits: Var, sup: &Supervision<'_>) -> Result<Var, DistillError> {
    let sel = tape.select_rows(logits, sup.rows)?;
    Ok(tape.softmax_cross_entropy(sel, sup.labels)?)
}

/// Real/Fake cross-entropy over all rows plus, unless `plain`, label
/// cross-entropy of both parties on the supervised rows.
pub fn dl_discriminator_from_outputs(
    tape: &mut Tape<'_>,
    out: &DlOutputs,
    sup: &Supervision<'_>,
    plain: bool,
) -> Result<Var, DistillError> {
    let mut terms = vec![(bce_const(tape, out.rf_t, 1.0)?, 1.0), (bce_const(tape, out.rf_s, 0.0)?, 1.0)];
    if !plain && !sup.rows.is_empty() {
        terms.push((label_ce(tape, out.class_t, sup)?, 1.0));
        terms.push((label_ce(tape, out.class_s, sup)?, 1.0));
    }
    weighted_sum(tape, &terms)
}

/// Student objective against the logit identifier:
/// `-bce(rf_T,1) - bce(rf_S,0) + ce_T + ce_S + l1(Z_S, Z_T)`.
///
/// The non-saturating form is `bce(rf_S,1) + ce_S + l1(Z_S, Z_T)`.
pub fn dl_generator_from_outputs(
    tape: &mut Tape<'_>,
    out: &DlOutputs,
    z_t: Var,
    z_s: Var,
    sup: &Supervision<'_>,
    non_saturating: bool,
) -> Result<Var, DistillError> {
    let mut terms = Vec::with_capacity(5);
    if non_saturating {
        terms.push((bce_const(tape, out.rf_s, 1.0)?, 1.0));
    } else {
        terms.push((bce_const(tape, out.rf_t, 1.0)?, -1.0));
        terms.push((bce_const(tape, out.rf_s, 0.0)?, -1.0));
    }
    if !sup.rows.is_empty() {
        if !non_saturating {
            terms.push((label_ce(tape, out.class_t, sup)?, 1.0));
        }
        terms.push((label_ce(tape, out.class_s, sup)?, 1.0));
    }
    terms.push((tape.l1_loss(z_s, z_t)?, 1.0));
    weighted_sum(tape, &terms)
}

pub fn dl_discriminator_loss(
    tape: &mut Tape<'_>,
    z_t: Var,
    z_s: Var,
    sup: &Supervision<'_>,
    ident: &LogitIdentifier,
    bind: &Binding,
    plain: bool,
) -> Result<Var, DistillError> {
    sup.check(tape.value(z_t).rows(), ident.num_classes())?;
    let out = dl_outputs(tape, z_t, z_s, ident, bind)?;
    dl_discriminator_from_outputs(tape, &out, sup, plain)
}

pub fn dl_generator_loss(
    tape: &mut Tape<'_>,
    z_s: Var,
    z_t: Var,
    sup: &Supervision<'_>,
    ident: &LogitIdentifier,
    bind: &Binding,
    non_saturating: bool,
) -> Result<Var, DistillError> {
    sup.check(tape.value(z_t).rows(), ident.num_classes())?;
    let out = dl_outputs(tape, z_t, z_s, ident, bind)?;
    dl_generator_from_outputs(tape, &out, z_t, z_s, sup, non_saturating)
}

/// `T² · mean_rows KL(softmax(Z_T/T) ‖ softmax(Z_S/T))` with `Z_T` constant.
pub fn kd_loss(tape: &mut Tape<'_>, z_s: Var, z_t: &DenseMatrix, temperature: f32) -> Result<Var, DistillError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DistillError::Config(format!("temperature must be positive, got {temperature}")));
    }
    let zs = tape.value(z_s);
    if zs.shape() != z_t.shape() {
        return Err(DistillError::Dim(format!("student {:?} vs teacher {:?} logits", zs.shape(), z_t.shape())));
    }
    let n = zs.rows();
    if n == 0 {
        return Err(DistillError::Contract("kd loss over zero rows".into()));
    }
    let inv_t = 1.0 / temperature;
    let t_scaled = z_t.map(|v| v * inv_t);
    let p_t = softmax_rows(&t_scaled);
    let log_p_t = log_softmax_rows(&t_scaled);
    let entropy_part: f64 = p_t
        .data()
        .iter()
        .zip(log_p_t.data())
        .map(|(&p, &lp)| p as f64 * lp as f64)
        .sum();
    let t2 = temperature * temperature;
    let scaled = tape.scale(z_s, inv_t)?;
    let log_q = tape.row_log_softmax(scaled)?;
    let p_const = tape.constant(p_t);
    let weighted = tape.mul(log_q, p_const)?;
    let cross = tape.sum(weighted)?;
    let cross = tape.scale(cross, -t2 / n as f32)?;
    let offset = tape.constant(DenseMatrix::scalar((t2 as f64 * entropy_part / n as f64) as f32));
    Ok(tape.add(cross, offset)?)
}

/// Mean squared difference over all embedding entries.
pub fn fitnet_loss(tape: &mut Tape<'_>, h_s: Var, h_t: Var) -> Result<Var, DistillError> {
    Ok(tape.mse_loss(h_s, h_t)?)
}

/// Share of scored pairs the identifier classifies on the right side of 0.
pub fn de_accuracy(tape: &Tape<'_>, sc: &DeScores) -> (usize, usize) {
    let mut hit = 0;
    let mut total = 0;
    let mut tally = |v: Var, target: f32| {
        for &x in tape.value(v).data() {
            total += 1;
            if (x > 0.0) == (target == 1.0) {
                hit += 1;
            }
        }
    };
    if let Some((t, s)) = sc.local {
        tally(t, 1.0);
        tally(s, 0.0);
    }
    for (&g, &target) in sc.global.iter().zip(&GLOBAL_TARGETS) {
        tally(g, target);
    }
    (hit, total)
}

/// Real/Fake hits of the logit identifier.
pub fn dl_accuracy(tape: &Tape<'_>, out: &DlOutputs) -> (usize, usize) {
    let t = tape.value(out.rf_t).data();
    let s = tape.value(out.rf_s).data();
    let hit = t.iter().filter(|&&x| x > 0.0).count() + s.iter().filter(|&&x| x <= 0.0).count();
    (hit, t.len() + s.len())
}
