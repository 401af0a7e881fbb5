//! Finite-difference checks of every distillation loss: tape gradients
//! against central differences of the f64 loop oracles.

use akd_core::distill::{
    de_discriminator_loss, de_generator_loss, dl_discriminator_loss, dl_generator_loss, fitnet_loss, kd_loss,
    DeView, LogitIdentifier, RepIdentifier, Supervision,
};
use akd_core::{DenseMatrix, Tape};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::reference::{self as r, Mat};
use super::{allclose, err, flat, rng, to_f64, uniform, Check};

pub const H: f64 = 1e-3;
pub const RTOL: f64 = 1e-3;
pub const ATOL: f64 = 1e-6;
pub const SEEDS: std::ops::Range<u64> = 0..24;

fn compare(what: &str, seed: u64, analytic: &DenseMatrix, numeric: &[f64]) -> Result<(), String> {
    allclose(&format!("{what} seed {seed}"), &flat(analytic), numeric, RTOL, ATOL)
}

fn from_mat(m: &Mat) -> DenseMatrix {
    DenseMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j] as f32)
}

fn shape(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(3..=6), rng.random_range(2..=8))
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for v in 0..n {
        for u in v + 1..n {
            if rng.random_bool(0.5) {
                edges.push((v, u));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    edges
}

fn supervision(rng: &mut ChaCha8Rng, n: usize, c: usize) -> (Vec<usize>, Vec<usize>) {
    let rows: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    let rows = if rows.is_empty() { vec![0] } else { rows };
    let labels = rows.iter().map(|_| rng.random_range(0..c)).collect();
    (rows, labels)
}

fn ident_params(ident: &LogitIdentifier) -> Vec<Mat> {
    ident.params().values().iter().map(to_f64).collect()
}

/// Smallest distance of any block pre-activation from the ReLU kink.
fn relu_margin(z: &Mat, params: &[Mat]) -> f64 {
    let n_blocks = (params.len() - 2) / 2;
    let mut margin = f64::INFINITY;
    for row in z {
        let mut h = row.clone();
        for k in 0..n_blocks {
            let pre = r::affine(&h, &params[2 * k], &params[2 * k + 1][0]);
            for (j, &p) in pre.iter().enumerate() {
                margin = margin.min(p.abs());
                h[j] += p.max(0.0);
            }
        }
    }
    margin
}

fn l1_margin(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(f64::INFINITY, f64::min)
}

fn each_seed(what: &str, f: impl Fn(u64) -> Result<(), String>) -> Result<(), String> {
    for seed in SEEDS {
        f(seed).map_err(|e| format!("{what}: {e}"))?;
    }
    Ok(())
}

struct DeInstance {
    ht: DenseMatrix,
    hs: DenseMatrix,
    wl: DenseMatrix,
    wg: DenseMatrix,
    edges: Vec<(usize, usize)>,
}

fn de_instance(seed: u64) -> DeInstance {
    let mut g = rng(seed);
    let (n, d) = shape(&mut g);
    DeInstance {
        ht: uniform(&mut g, n, d, 1.0),
        hs: uniform(&mut g, n, d, 1.0),
        wl: uniform(&mut g, 1, d, 1.5),
        wg: uniform(&mut g, 1, d, 1.5),
        edges: random_edges(&mut g, n),
    }
}

pub fn de_discriminator_wrt_identifier() -> Result<(), String> {
    each_seed("de_discriminator", |seed| {
        let inst = de_instance(seed);
        let mut ident = RepIdentifier::new(inst.wl.cols()).map_err(err)?;
        ident.set_weights(inst.wl.clone(), inst.wg.clone()).map_err(err)?;
        let mut tape = Tape::new();
        let bind = ident.params().bind(&mut tape, true);
        let view = DeView {
            h_t: tape.constant(inst.ht.clone()),
            h_s: tape.constant(inst.hs.clone()),
            s_t: tape.constant(inst.ht.col_mean().map_err(err)?),
            s_s: tape.constant(inst.hs.col_mean().map_err(err)?),
        };
        let loss = de_discriminator_loss(&mut tape, &view, &inst.edges, &ident, &bind).map_err(err)?;
        let grads = bind.gradients(&tape.backward(loss).map_err(err)?);
        let (ht, hs) = (to_f64(&inst.ht), to_f64(&inst.hs));
        let (st, ss) = (r::col_mean(&ht), r::col_mean(&hs));
        let w = vec![to_f64(&inst.wl)[0].clone(), to_f64(&inst.wg)[0].clone()];
        let numeric = r::fd_gradient(&w, H, |w| r::de_disc(&r::de_scores(&ht, &hs, &st, &ss, &w[0], &w[1], &inst.edges)));
        let d = inst.wl.cols();
        compare("w_local", seed, &grads[0], &numeric[..d])?;
        compare("w_global", seed, &grads[1], &numeric[d..])
    })
}

fn de_generator_check(non_saturating: bool) -> Result<(), String> {
    each_seed("de_generator", |seed| {
        let inst = de_instance(seed);
        let mut ident = RepIdentifier::new(inst.wl.cols()).map_err(err)?;
        ident.set_weights(inst.wl.clone(), inst.wg.clone()).map_err(err)?;
        let mut tape = Tape::new();
        let bind = ident.params().bind(&mut tape, false);
        let hs = tape.param(inst.hs.clone());
        let ss = tape.col_mean(hs).map_err(err)?;
        let view = DeView {
            h_t: tape.constant(inst.ht.clone()),
            h_s: hs,
            s_t: tape.constant(inst.ht.col_mean().map_err(err)?),
            s_s: ss,
        };
        let loss = de_generator_loss(&mut tape, &view, &inst.edges, &ident, &bind, non_saturating).map_err(err)?;
        let g = tape.backward(loss).map_err(err)?.wrt(hs);
        let ht = to_f64(&inst.ht);
        let st = r::col_mean(&ht);
        let (wl, wg) = (to_f64(&inst.wl)[0].clone(), to_f64(&inst.wg)[0].clone());
        let numeric = r::fd_gradient(&to_f64(&inst.hs), H, |hs| {
            r::de_gen(&r::de_scores(&ht, hs, &st, &r::col_mean(hs), &wl, &wg, &inst.edges), non_saturating)
        });
        compare("H_S", seed, &g, &numeric)
    })
}

pub fn de_generator_wrt_student() -> Result<(), String> {
    de_generator_check(false)
}

pub fn de_generator_non_saturating_wrt_student() -> Result<(), String> {
    de_generator_check(true)
}

const CLASSES: usize = 3;

struct DlInstance {
    zt: Mat,
    zs: Mat,
    ident: LogitIdentifier,
    rows: Vec<usize>,
    labels: Vec<usize>,
}

/// Rejection-samples an instance away from the ReLU and L1 kinks.
fn dl_instance(seed: u64) -> DlInstance {
    let mut g = rng(seed);
    let n = g.random_range(3..=6);
    for attempt in 0.. {
        let ident = LogitIdentifier::new(CLASSES, 2, seed * 1000 + attempt).expect("identifier");
        let zt = to_f64(&uniform(&mut g, n, CLASSES, 2.0));
        let zs = to_f64(&uniform(&mut g, n, CLASSES, 2.0));
        let params = ident_params(&ident);
        if relu_margin(&zt, &params) > 0.02 && relu_margin(&zs, &params) > 0.02 && l1_margin(&zs, &zt) > 0.02 {
            let (rows, labels) = supervision(&mut g, n, CLASSES);
            return DlInstance {
                zt,
                zs,
                ident,
                rows,
                labels,
            };
        }
    }
    unreachable!()
}

fn dl_discriminator_check(plain: bool) -> Result<(), String> {
    each_seed("dl_discriminator", |seed| {
        let inst = dl_instance(seed);
        let mut tape = Tape::new();
        let bind = inst.ident.params().bind(&mut tape, true);
        let zt = tape.constant(from_mat(&inst.zt));
        let zs = tape.constant(from_mat(&inst.zs));
        let sup = Supervision {
            rows: &inst.rows,
            labels: &inst.labels,
        };
        let loss = dl_discriminator_loss(&mut tape, zt, zs, &sup, &inst.ident, &bind, plain).map_err(err)?;
        let grads = bind.gradients(&tape.backward(loss).map_err(err)?);
        let params = ident_params(&inst.ident);
        for (p, analytic) in grads.iter().enumerate() {
            let numeric = r::fd_gradient(&params[p], H, |m| {
                let mut ps = params.clone();
                ps[p] = m.clone();
                r::dl_disc(&inst.zt, &inst.zs, &inst.rows, &inst.labels, &ps, plain)
            });
            compare(&inst.ident.params().names()[p], seed, analytic, &numeric)?;
        }
        Ok(())
    })
}

pub fn dl_discriminator_wrt_identifier() -> Result<(), String> {
    dl_discriminator_check(false)
}

pub fn dl_discriminator_plain_wrt_identifier() -> Result<(), String> {
    dl_discriminator_check(true)
}

fn dl_generator_check(non_saturating: bool) -> Result<(), String> {
    each_seed("dl_generator", |seed| {
        let inst = dl_instance(seed);
        let mut tape = Tape::new();
        let bind = inst.ident.params().bind(&mut tape, false);
        let zt = tape.constant(from_mat(&inst.zt));
        let zs = tape.param(from_mat(&inst.zs));
        let sup = Supervision {
            rows: &inst.rows,
            labels: &inst.labels,
        };
        let loss = dl_generator_loss(&mut tape, zs, zt, &sup, &inst.ident, &bind, non_saturating).map_err(err)?;
        let g = tape.backward(loss).map_err(err)?.wrt(zs);
        let params = ident_params(&inst.ident);
        let numeric = r::fd_gradient(&inst.zs, H, |zs| {
            r::dl_gen(&inst.zt, zs, &inst.rows, &inst.labels, &params, non_saturating)
        });
        compare("Z_S", seed, &g, &numeric)
    })
}

pub fn dl_generator_wrt_student() -> Result<(), String> {
    dl_generator_check(false)
}

pub fn dl_generator_non_saturating_wrt_student() -> Result<(), String> {
    dl_generator_check(true)
}

pub fn kd_wrt_student() -> Result<(), String> {
    each_seed("kd", |seed| {
        let mut g = rng(seed);
        let (n, c) = shape(&mut g);
        let zs = uniform(&mut g, n, c, 2.0);
        let zt = uniform(&mut g, n, c, 2.0);
        let temp = [1.0f32, 2.0, 4.0][g.random_range(0..3)];
        let mut tape = Tape::new();
        let v = tape.param(zs.clone());
        let loss = kd_loss(&mut tape, v, &zt, temp).map_err(err)?;
        let analytic = tape.backward(loss).map_err(err)?.wrt(v);
        let zt64 = to_f64(&zt);
        let numeric = r::fd_gradient(&to_f64(&zs), H, |zs| r::kd(zs, &zt64, temp as f64));
        compare("Z_S", seed, &analytic, &numeric)
    })
}

pub fn fitnet_wrt_student() -> Result<(), String> {
    each_seed("fitnet", |seed| {
        let mut g = rng(seed);
        let (n, d) = shape(&mut g);
        let hs = uniform(&mut g, n, d, 1.0);
        let ht = uniform(&mut g, n, d, 1.0);
        let mut tape = Tape::new();
        let v = tape.param(hs.clone());
        let t = tape.constant(ht.clone());
        let loss = fitnet_loss(&mut tape, v, t).map_err(err)?;
        let analytic = tape.backward(loss).map_err(err)?.wrt(v);
        let ht64 = to_f64(&ht);
        let numeric = r::fd_gradient(&to_f64(&hs), H, |hs| r::mse(hs, &ht64));
        compare("H_S", seed, &analytic, &numeric)
    })
}

pub fn cross_entropy_wrt_logits() -> Result<(), String> {
    each_seed("cross_entropy", |seed| {
        let mut g = rng(seed);
        let (n, c) = shape(&mut g);
        let z = uniform(&mut g, n, c, 3.0);
        let (rows, labels) = supervision(&mut g, n, c);
        let mut tape = Tape::new();
        let v = tape.param(z.clone());
        let sel = tape.select_rows(v, &rows).map_err(err)?;
        let loss = tape.softmax_cross_entropy(sel, &labels).map_err(err)?;
        let analytic = tape.backward(loss).map_err(err)?.wrt(v);
        let numeric = r::fd_gradient(&to_f64(&z), H, |z| r::ce(z, &rows, &labels));
        compare("Z", seed, &analytic, &numeric)
    })
}

pub fn bce_wrt_logits() -> Result<(), String> {
    each_seed("bce", |seed| {
        let mut g = rng(seed);
        let (n, c) = shape(&mut g);
        let z = uniform(&mut g, n, c, 4.0);
        let targets: Vec<f32> = (0..n * c).map(|_| if g.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mut tape = Tape::new();
        let v = tape.param(z.clone());
        let loss = tape.bce_with_logits(v, &targets).map_err(err)?;
        let analytic = tape.backward(loss).map_err(err)?.wrt(v);
        let numeric = r::fd_gradient(&to_f64(&z), H, |z| {
            let xs: Vec<f64> = z.iter().flatten().cloned().collect();
            xs.iter().zip(&targets).map(|(&x, &t)| r::bce(x, t as f64)).sum::<f64>() / xs.len() as f64
        });
        compare("Z", seed, &analytic, &numeric)
    })
}

pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("de_discriminator_wrt_identifier", de_discriminator_wrt_identifier as Check),
        ("de_generator_wrt_student", de_generator_wrt_student),
        ("de_generator_non_saturating_wrt_student", de_generator_non_saturating_wrt_student),
        ("dl_discriminator_wrt_identifier", dl_discriminator_wrt_identifier),
        ("dl_discriminator_plain_wrt_identifier", dl_discriminator_plain_wrt_identifier),
        ("dl_generator_wrt_student", dl_generator_wrt_student),
        ("dl_generator_non_saturating_wrt_student", dl_generator_non_saturating_wrt_student),
        ("kd_wrt_student", kd_wrt_student),
        ("fitnet_wrt_student", fitnet_wrt_student),
        ("cross_entropy_wrt_logits", cross_entropy_wrt_logits),
        ("bce_wrt_logits", bce_wrt_logits),
    ]
}
