use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::identifiers::{LogitIdentifier, RepIdentifier};
use super::losses::{
    de_accuracy, de_discriminator_from_scores, de_generator_from_scores, de_scores, dl_accuracy,
    dl_discriminator_from_outputs, dl_generator_from_outputs, dl_outputs, fitnet_loss, kd_loss, DeView, Supervision,
};
use super::report::{EpochRecord, FinalRecord, TrainReport};
use super::{DistillConfig, DistillError, Mode};
use crate::graphio::{gcn_normalize, Graph, GraphSet, Split};
use crate::metrics::{accuracy, roc_auc};
use crate::models::{count_params, node_forward_values, GinModel, KnowledgeLevel, NodeModel, TeacherKnowledge};
use crate::numkit::{adam_step, softmax_rows, AdamState, DenseMatrix, Tape, Var};

/// Plain cross-entropy training, used for teachers and vanilla students.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub lr: f32,
    /// Seeds the per-epoch graph order of graph-level training.
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.01,
            seed: 0,
        }
    }
}

impl SupervisedConfig {
    fn validate(&self) -> Result<(), DistillError> {
        if self.epochs == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DistillError::Config("need positive epochs and learning rate".into()));
        }
        Ok(())
    }
}

/// Accuracy of argmax predictions on `rows`, absent for an empty mask.
pub fn node_accuracy(logits: &DenseMatrix, labels: &[usize], rows: &[usize]) -> Option<f64> {
    let pred = logits.argmax_rows();
    let p: Vec<usize> = rows.iter().map(|&r| pred[r]).collect();
    let t: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    accuracy(&p, &t).ok()
}

/// ROC-AUC of the class-1 probability for two classes, accuracy otherwise;
/// absent when undefined on `rows`.
pub fn graph_metric(logits: &DenseMatrix, labels: &[usize], rows: &[usize]) -> Option<f64> {
    if logits.cols() == 2 {
        let probs = softmax_rows(logits);
        let scores: Vec<f64> = rows.iter().map(|&r| probs.get(r, 1) as f64).collect();
        let truth: Vec<bool> = rows.iter().map(|&r| labels[r] == 1).collect();
        roc_auc(&scores, &truth).ok()
    } else {
        node_accuracy(logits, labels, rows)
    }
}

fn graph_metric_name(classes: usize) -> &'static str {
    if classes == 2 {
        "roc_auc"
    } else {
        "accuracy"
    }
}

struct Masks {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl Masks {
    fn of_graph(g: &Graph) -> Self {
        Self {
            train: g.mask(Split::Train),
            val: g.mask(Split::Val),
            test: g.mask(Split::Test),
        }
    }

    fn of_set(s: &GraphSet) -> Self {
        Self {
            train: s.mask(Split::Train),
            val: s.mask(Split::Val),
            test: s.mask(Split::Test),
        }
    }

    fn score(&self, f: impl Fn(&[usize]) -> Option<f64>) -> [Option<f64>; 3] {
        [f(&self.train), f(&self.val), f(&self.test)]
    }
}

fn record(epoch: usize, gen_loss: f64, distill: Option<f64>, disc: Option<(f64, f64)>, m: [Option<f64>; 3]) -> EpochRecord {
    EpochRecord {
        epoch,
        gen_loss,
        distill_loss: distill,
        disc_loss: disc.map(|d| d.0),
        disc_accuracy: disc.map(|d| d.1),
        train_metric: m[0],
        val_metric: m[1],
        test_metric: m[2],
    }
}

fn sum_vars(tape: &mut Tape<'_>, vars: &[Var]) -> Result<Option<Var>, DistillError> {
    let mut acc: Option<Var> = None;
    for &v in vars {
        acc = Some(match acc {
            Some(a) => tape.add(a, v)?,
            None => v,
        });
    }
    Ok(acc)
}

fn single_labels(g: &Graph) -> Result<&[usize], DistillError> {
    g.labels()
        .as_single()
        .ok_or_else(|| DistillError::Contract("training needs single-label targets".into()))
}

fn check_node_model(model: &dyn NodeModel, g: &Graph) -> Result<(), DistillError> {
    if model.in_dim() != g.feature_dim() || model.num_classes() != g.num_classes() {
        return Err(DistillError::Dim(format!(
            "model {}->{} classes vs graph with {} features and {} classes",
            model.in_dim(),
            model.num_classes(),
            g.feature_dim(),
            g.num_classes()
        )));
    }
    Ok(())
}

fn check_identifiers(mode: Mode, d: usize, c: usize, e: &RepIdentifier, l: &LogitIdentifier) -> Result<(), DistillError> {
    if mode.uses_de() && e.dim() != d {
        return Err(DistillError::Dim(format!("representation identifier dim {} vs embeddings {d}", e.dim())));
    }
    if mode.uses_dl() && l.num_classes() != c {
        return Err(DistillError::Dim(format!("logit identifier over {} classes vs {c}", l.num_classes())));
    }
    Ok(())
}

fn weighted_task(tape: &mut Tape<'_>, logits: Var, sup: &Supervision<'_>, w: f32) -> Result<Option<Var>, DistillError> {
    if w == 0.0 {
        return Ok(None);
    }
    let sel = tape.select_rows(logits, sup.rows)?;
    let ce = tape.softmax_cross_entropy(sel, sup.labels)?;
    Ok(Some(if w == 1.0 { ce } else { tape.scale(ce, w)? }))
}

/// Teacher-side constants for one graph.
struct TeacherSide<'k> {
    h: &'k DenseMatrix,
    s: DenseMatrix,
    z: &'k DenseMatrix,
}

/// Student-side tape handles for one graph.
struct StudentSide {
    h: Var,
    s: Var,
    z: Var,
}

/// Distillation terms of the generator objective; returns their sum.
#[allow(clippy::too_many_arguments)]
fn generator_terms(
    tape: &mut Tape<'_>,
    cfg: &DistillConfig,
    teacher: &TeacherSide<'_>,
    student: &StudentSide,
    edges: &[(usize, usize)],
    sup: &Supervision<'_>,
    ident_e: &RepIdentifier,
    ident_l: &LogitIdentifier,
) -> Result<Option<Var>, DistillError> {
    let mut terms = Vec::new();
    if cfg.mode.uses_de() {
        let eb = ident_e.params().bind(tape, false);
        let view = DeView {
            h_t: tape.constant(teacher.h.clone()),
            h_s: student.h,
            s_t: tape.constant(teacher.s.clone()),
            s_s: student.s,
        };
        let sc = de_scores(tape, &view, edges, ident_e, &eb)?;
        terms.push(de_generator_from_scores(tape, &sc, cfg.non_saturating)?);
    }
    if cfg.mode.uses_dl() {
        let lb = ident_l.params().bind(tape, false);
        let zt = tape.constant(teacher.z.clone());
        let out = dl_outputs(tape, zt, student.z, ident_l, &lb)?;
        terms.push(dl_generator_from_outputs(tape, &out, zt, student.z, sup, cfg.non_saturating)?);
    }
    match cfg.mode {
        Mode::Kd => terms.push(kd_loss(tape, student.z, teacher.z, cfg.kd_temperature)?),
        Mode::Fitnet => {
            let ht = tape.constant(teacher.h.clone());
            terms.push(fitnet_loss(tape, student.h, ht)?);
        }
        _ => {}
    }
    sum_vars(tape, &terms)
}

/// One discriminator update from fixed student outputs; returns the loss
/// value and the Real/Fake accuracy.
#[allow(clippy::too_many_arguments)]
fn discriminator_step(
    cfg: &DistillConfig,
    teacher: &TeacherSide<'_>,
    student: (&DenseMatrix, &DenseMatrix, &DenseMatrix),
    edges: &[(usize, usize)],
    sup: &Supervision<'_>,
    ident_e: &mut RepIdentifier,
    ident_l: &mut LogitIdentifier,
    opt_e: &mut AdamState,
    opt_l: &mut AdamState,
) -> Result<(f64, f64), DistillError> {
    let (hs, ss, zs) = student;
    let mut tape = Tape::new();
    let mut terms = Vec::new();
    let (mut hit, mut total) = (0, 0);
    let mut eb = None;
    let mut lb = None;
    if cfg.mode.uses_de() {
        let b = ident_e.params().bind(&mut tape, true);
        let view = DeView {
            h_t: tape.constant(teacher.h.clone()),
            h_s: tape.constant(hs.clone()),
            s_t: tape.constant(teacher.s.clone()),
            s_s: tape.constant(ss.clone()),
        };
        let sc = de_scores(&mut tape, &view, edges, ident_e, &b)?;
        let (h, t) = de_accuracy(&tape, &sc);
        hit += h;
        total += t;
        terms.push(de_discriminator_from_scores(&mut tape, &sc)?);
        eb = Some(b);
    }
    if cfg.mode.uses_dl() {
        let b = ident_l.params().bind(&mut tape, true);
        let zt = tape.constant(teacher.z.clone());
        let zsv = tape.constant(zs.clone());
        let out = dl_outputs(&mut tape, zt, zsv, ident_l, &b)?;
        let (h, t) = dl_accuracy(&tape, &out);
        hit += h;
        total += t;
        terms.push(dl_discriminator_from_outputs(&mut tape, &out, sup, cfg.plain)?);
        lb = Some(b);
    }
    let loss = sum_vars(&mut tape, &terms)?.ok_or_else(|| DistillError::Contract("no discriminator in mode".into()))?;
    let grads = tape.backward(loss)?;
    if let Some(b) = eb {
        adam_step(ident_e.params_mut(), &b.gradients(&grads), opt_e)?;
    }
    if let Some(b) = lb {
        adam_step(ident_l.params_mut(), &b.gradients(&grads), opt_l)?;
    }
    Ok((tape.scalar(loss) as f64, hit as f64 / total.max(1) as f64))
}

fn finish(metric: &str, mode: Mode, gen_steps: usize, disc_steps: usize, params: usize, epochs: Vec<EpochRecord>) -> TrainReport {
    TrainReport {
        epochs,
        summary: FinalRecord {
            metric: metric.to_string(),
            mode: mode.as_str().to_string(),
            gen_steps,
            disc_steps,
            params_student: params,
            params_teacher: None,
            seconds: None,
        },
    }
}

/// Full-batch cross-entropy training of a node classifier on the train mask.
pub fn train_supervised(graph: &Graph, model: &mut dyn NodeModel, cfg: &SupervisedConfig) -> Result<TrainReport, DistillError> {
    cfg.validate()?;
    check_node_model(model, graph)?;
    let y = single_labels(graph)?;
    let adj = gcn_normalize(graph);
    let masks = Masks::of_graph(graph);
    let y_train: Vec<usize> = masks.train.iter().map(|&v| y[v]).collect();
    let mut opt = AdamState::new(cfg.lr, model.params());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (loss, grads) = {
            let mut tape = Tape::new();
            let bind = model.params().bind(&mut tape, true);
            let x = tape.constant(graph.features().clone());
            let out = model.forward(&mut tape, &bind, &adj, x)?;
            let sel = tape.select_rows(out.logits, &masks.train)?;
            let ce = tape.softmax_cross_entropy(sel, &y_train)?;
            (tape.scalar(ce) as f64, bind.gradients(&tape.backward(ce)?))
        };
        adam_step(model.params_mut(), &grads, &mut opt)?;
        let (_, z) = node_forward_values(model, &adj, graph.features())?;
        epochs.push(record(epoch, loss, None, None, masks.score(|r| node_accuracy(&z, y, r))));
    }
    Ok(finish("accuracy", Mode::None, cfg.epochs, 0, count_params(model.params()), epochs))
}

/// Alternating generator/discriminator training of a node-level student
/// against precomputed teacher outputs.
///
/// Every epoch takes one student step on the mode's objective plus the
/// weighted task cross-entropy; after every `k`-th student step, adversarial
/// modes take one step of each active identifier on fresh student outputs.
pub fn train_node_level(
    graph: &Graph,
    knowledge: &TeacherKnowledge,
    student: &mut dyn NodeModel,
    ident_e: &mut RepIdentifier,
    ident_l: &mut LogitIdentifier,
    cfg: &DistillConfig,
) -> Result<TrainReport, DistillError> {
    cfg.validate()?;
    check_node_model(student, graph)?;
    if knowledge.level() != KnowledgeLevel::Node {
        return Err(DistillError::Contract("node-level training needs node-level knowledge".into()));
    }
    let (n, d, c) = (graph.num_nodes(), student.embed_dim(), student.num_classes());
    if knowledge.num_rows() != n || knowledge.dim() != d || knowledge.num_classes() != c {
        return Err(DistillError::Dim(format!(
            "knowledge {}x{} with {} classes vs graph of {n} nodes, student dim {d}, {c} classes",
            knowledge.num_rows(),
            knowledge.dim(),
            knowledge.num_classes()
        )));
    }
    check_identifiers(cfg.mode, d, c, ident_e, ident_l)?;
    let y = single_labels(graph)?;
    let adj = gcn_normalize(graph);
    let masks = Masks::of_graph(graph);
    let y_train: Vec<usize> = masks.train.iter().map(|&v| y[v]).collect();
    let sup = Supervision {
        rows: &masks.train,
        labels: &y_train,
    };
    let teacher = TeacherSide {
        h: knowledge.embeddings(),
        s: knowledge.embeddings().col_mean()?,
        z: knowledge.logits(),
    };
    let edges = graph.edges();

    let mut opt = AdamState::new(cfg.lr, student.params());
    let mut opt_e = AdamState::new(cfg.disc_lr, ident_e.params());
    let mut opt_l = AdamState::new(cfg.disc_lr, ident_l.params());
    let (mut gen_steps, mut disc_steps) = (0, 0);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (loss, distill, grads) = {
            let mut tape = Tape::new();
            let bind = student.params().bind(&mut tape, true);
            let x = tape.constant(graph.features().clone());
            let out = student.forward(&mut tape, &bind, &adj, x)?;
            let s_s = tape.col_mean(out.embeddings)?;
            let side = StudentSide {
                h: out.embeddings,
                s: s_s,
                z: out.logits,
            };
            let task = weighted_task(&mut tape, out.logits, &sup, cfg.task_loss_weight)?;
            let extra = generator_terms(&mut tape, cfg, &teacher, &side, edges, &sup, ident_e, ident_l)?;
            let parts: Vec<Var> = task.into_iter().chain(extra).collect();
            let total = sum_vars(&mut tape, &parts)?
                .ok_or_else(|| DistillError::Contract("generator objective is empty".into()))?;
            let grads = bind.gradients(&tape.backward(total)?);
            (tape.scalar(total) as f64, extra.map(|v| tape.scalar(v) as f64), grads)
        };
        adam_step(student.params_mut(), &grads, &mut opt)?;
        gen_steps += 1;
        let (hs, zs) = node_forward_values(student, &adj, graph.features())?;
        let metrics = masks.score(|r| node_accuracy(&zs, y, r));
        let disc = if cfg.mode.is_adversarial() && gen_steps % cfg.k == 0 {
            disc_steps += 1;
            let ss = hs.col_mean()?;
            Some(discriminator_step(
                cfg,
                &teacher,
                (&hs, &ss, &zs),
                edges,
                &sup,
                ident_e,
                ident_l,
                &mut opt_e,
                &mut opt_l,
            )?)
        } else {
            None
        };
        epochs.push(record(epoch, loss, distill, disc, metrics));
    }
    Ok(finish("accuracy", cfg.mode, gen_steps, disc_steps, count_params(student.params()), epochs))
}

fn check_graph_model(model: &GinModel, set: &GraphSet) -> Result<(), DistillError> {
    if model.in_dim() != set.feature_dim() || model.num_classes() != set.num_classes() {
        return Err(DistillError::Dim(format!(
            "GIN {}->{} classes vs graph set with {} features and {} classes",
            model.in_dim(),
            model.num_classes(),
            set.feature_dim(),
            set.num_classes()
        )));
    }
    if set.mask(Split::Train).is_empty() {
        return Err(DistillError::Contract("graph set has no training graphs".into()));
    }
    Ok(())
}

fn all_graph_logits(model: &GinModel, set: &GraphSet) -> Result<DenseMatrix, DistillError> {
    let zs: Vec<DenseMatrix> = set
        .graphs()
        .iter()
        .map(|g| model.forward_values(g).map(|(_, _, z)| z))
        .collect::<Result<_, _>>()?;
    Ok(DenseMatrix::vstack(&zs.iter().collect::<Vec<_>>())?)
}

fn gin_student<'a>(
    tape: &mut Tape<'a>,
    model: &GinModel,
    g: &'a Graph,
) -> Result<(crate::numkit::Binding, StudentSide), DistillError> {
    let bind = model.params().bind(tape, true);
    let x = tape.constant(g.features().clone());
    let out = model.forward(tape, &bind, g.adjacency(), x)?;
    Ok((
        bind,
        StudentSide {
            h: out.embeddings,
            s: out.summary,
            z: out.logits,
        },
    ))
}

/// Cross-entropy training of a GIN graph classifier, one step per training
/// graph in a seeded shuffled order.
pub fn train_graph_supervised(set: &GraphSet, model: &mut GinModel, cfg: &SupervisedConfig) -> Result<TrainReport, DistillError> {
    cfg.validate()?;
    check_graph_model(model, set)?;
    let masks = Masks::of_set(set);
    let labels = set.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamState::new(cfg.lr, model.params());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        let mut order = masks.train.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &gi in &order {
            let g = &set.graphs()[gi];
            let (loss, grads) = {
                let mut tape = Tape::new();
                let (bind, side) = gin_student(&mut tape, model, g)?;
                let ce = tape.softmax_cross_entropy(side.z, &[labels[gi]])?;
                (tape.scalar(ce) as f64, bind.gradients(&tape.backward(ce)?))
            };
            adam_step(model.params_mut(), &grads, &mut opt)?;
            steps += 1;
            loss_sum += loss;
        }
        let z = all_graph_logits(model, set)?;
        let metrics = masks.score(|r| graph_metric(&z, labels, r));
        epochs.push(record(epoch, loss_sum / order.len() as f64, None, None, metrics));
    }
    Ok(finish(graph_metric_name(set.num_classes()), Mode::None, steps, 0, count_params(model.params()), epochs))
}

/// Graph-level counterpart of [`train_node_level`]: one student step per
/// training graph, the representation identifier judging node pairs across
/// that graph's edges and nodes against its summary, and the logit
/// identifier judging the graph logits. The step counter behind the `k`
/// ratio runs across graphs and epochs.
pub fn train_graph_level(
    set: &GraphSet,
    knowledge: &TeacherKnowledge,
    student: &mut GinModel,
    ident_e: &mut RepIdentifier,
    ident_l: &mut LogitIdentifier,
    cfg: &DistillConfig,
) -> Result<TrainReport, DistillError> {
    cfg.validate()?;
    check_graph_model(student, set)?;
    if knowledge.level() != KnowledgeLevel::Graph {
        return Err(DistillError::Contract("graph-level training needs graph-level knowledge".into()));
    }
    let (d, c) = (student.embed_dim(), student.num_classes());
    if knowledge.num_graphs() != set.len()
        || knowledge.num_rows() != set.total_nodes()
        || knowledge.dim() != d
        || knowledge.num_classes() != c
    {
        return Err(DistillError::Dim(format!(
            "knowledge for {} graphs, {} rows, dim {} vs set of {} graphs, {} nodes, student dim {d}",
            knowledge.num_graphs(),
            knowledge.num_rows(),
            knowledge.dim(),
            set.len(),
            set.total_nodes()
        )));
    }
    check_identifiers(cfg.mode, d, c, ident_e, ident_l)?;
    let masks = Masks::of_set(set);
    let labels = set.labels();
    let teacher_h: Vec<DenseMatrix> = (0..set.len()).map(|i| knowledge.graph_embeddings(i)).collect();
    let teacher_z: Vec<DenseMatrix> = (0..set.len()).map(|i| knowledge.graph_logits(i)).collect();
    let teacher_s: Vec<DenseMatrix> = (0..set.len()).map(|i| knowledge.graph_summary(i)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamState::new(cfg.lr, student.params());
    let mut opt_e = AdamState::new(cfg.disc_lr, ident_e.params());
    let mut opt_l = AdamState::new(cfg.disc_lr, ident_l.params());
    let (mut gen_steps, mut disc_steps) = (0, 0);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = masks.train.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut distill_sum: Option<f64> = None;
        let mut disc_sum: Option<(f64, f64, usize)> = None;
        for &gi in &order {
            let g = &set.graphs()[gi];
            let teacher = TeacherSide {
                h: &teacher_h[gi],
                s: teacher_s[gi].clone(),
                z: &teacher_z[gi],
            };
            let label = [labels[gi]];
            let sup = Supervision {
                rows: &[0],
                labels: &label,
            };
            let (loss, distill, grads) = {
                let mut tape = Tape::new();
                let (bind, side) = gin_student(&mut tape, student, g)?;
                let task = weighted_task(&mut tape, side.z, &sup, cfg.task_loss_weight)?;
                let extra = generator_terms(&mut tape, cfg, &teacher, &side, g.edges(), &sup, ident_e, ident_l)?;
                let parts: Vec<Var> = task.into_iter().chain(extra).collect();
                let total = sum_vars(&mut tape, &parts)?
                    .ok_or_else(|| DistillError::Contract("generator objective is empty".into()))?;
                let grads = bind.gradients(&tape.backward(total)?);
                (tape.scalar(total) as f64, extra.map(|v| tape.scalar(v) as f64), grads)
            };
            adam_step(student.params_mut(), &grads, &mut opt)?;
            gen_steps += 1;
            loss_sum += loss;
            if let Some(v) = distill {
                *distill_sum.get_or_insert(0.0) += v;
            }
            if cfg.mode.is_adversarial() && gen_steps % cfg.k == 0 {
                disc_steps += 1;
                let (hs, ss, zs) = student.forward_values(g)?;
                let (l, a) = discriminator_step(
                    cfg,
                    &teacher,
                    (&hs, &ss, &zs),
                    g.edges(),
                    &sup,
                    ident_e,
                    ident_l,
                    &mut opt_e,
                    &mut opt_l,
                )?;
                let acc = disc_sum.get_or_insert((0.0, 0.0, 0));
                acc.0 += l;
                acc.1 += a;
                acc.2 += 1;
            }
        }
        let count = order.len() as f64;
        let z = all_graph_logits(student, set)?;
        let metrics = masks.score(|r| graph_metric(&z, labels, r));
        let disc = disc_sum.map(|(l, a, m)| (l / m as f64, a / m as f64));
        epochs.push(record(epoch, loss_sum / count, distill_sum.map(|v| v / count), disc, metrics));
    }
    Ok(finish(graph_metric_name(c), cfg.mode, gen_steps, disc_steps, count_params(student.params()), epochs))
}
