//! Straightforward f64 loop implementations of every loss, used as oracles.

pub type Mat = Vec<Vec<f64>>;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn bce(x: f64, t: f64) -> f64 {
    let p = sigmoid(x);
    -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
}

pub fn mean_bce(xs: &[f64], t: f64) -> f64 {
    xs.iter().map(|&x| bce(x, t)).sum::<f64>() / xs.len() as f64
}

pub fn diag_bilinear(a: &[f64], w: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * w[i] * b[i];
    }
    s
}

pub fn col_mean(h: &Mat) -> Vec<f64> {
    let d = h[0].len();
    let mut s = vec![0.0; d];
    for row in h {
        for j in 0..d {
            s[j] += row[j];
        }
    }
    s.iter().map(|x| x / h.len() as f64).collect()
}

pub struct DeRef {
    pub local_t: Vec<f64>,
    pub local_s: Vec<f64>,
    pub global: [Vec<f64>; 4],
}

pub fn de_scores(ht: &Mat, hs: &Mat, st: &[f64], ss: &[f64], wl: &[f64], wg: &[f64], edges: &[(usize, usize)]) -> DeRef {
    let mut local_t = Vec::new();
    let mut local_s = Vec::new();
    for &(v, u) in edges {
        local_t.push(diag_bilinear(&ht[v], wl, &ht[u]));
        local_s.push(diag_bilinear(&hs[v], wl, &hs[u]));
    }
    let mut global: [Vec<f64>; 4] = Default::default();
    for i in 0..ht.len() {
        global[0].push(diag_bilinear(&ht[i], wg, st));
        global[1].push(diag_bilinear(&hs[i], wg, st));
        global[2].push(diag_bilinear(&hs[i], wg, ss));
        global[3].push(diag_bilinear(&ht[i], wg, ss));
    }
    DeRef { local_t, local_s, global }
}

pub const GLOBAL_TARGETS: [f64; 4] = [1.0, 0.0, 1.0, 0.0];

pub fn de_disc(sc: &DeRef) -> f64 {
    let mut loss = 0.0;
    if !sc.local_t.is_empty() {
        loss += 0.5 * mean_bce(&sc.local_t, 1.0) + 0.5 * mean_bce(&sc.local_s, 0.0);
    }
    for g in 0..4 {
        loss += 0.25 * mean_bce(&sc.global[g], GLOBAL_TARGETS[g]);
    }
    loss
}

pub fn de_gen(sc: &DeRef, non_saturating: bool) -> f64 {
    if !non_saturating {
        return -de_disc(sc);
    }
    let mut loss = 0.0;
    if !sc.local_s.is_empty() {
        loss += 0.5 * mean_bce(&sc.local_s, 1.0);
    }
    for g in 1..4 {
        loss += 0.25 * mean_bce(&sc.global[g], 1.0 - GLOBAL_TARGETS[g]);
    }
    loss
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

pub fn ce(logits: &Mat, rows: &[usize], labels: &[usize]) -> f64 {
    let mut s = 0.0;
    for (k, &r) in rows.iter().enumerate() {
        s -= log_softmax(&logits[r])[labels[k]];
    }
    s / rows.len() as f64
}

pub fn l1(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            s += (x - y).abs();
        }
    }
    s / a.len() as f64
}

pub fn mse(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            s += (x - y) * (x - y);
            n += 1;
        }
    }
    s / n as f64
}

pub fn kd(zs: &Mat, zt: &Mat, temp: f64) -> f64 {
    let mut s = 0.0;
    for (rs, rt) in zs.iter().zip(zt) {
        let lq = log_softmax(&rs.iter().map(|x| x / temp).collect::<Vec<_>>());
        let lp = log_softmax(&rt.iter().map(|x| x / temp).collect::<Vec<_>>());
        for c in 0..lp.len() {
            s += lp[c].exp() * (lp[c] - lq[c]);
        }
    }
    temp * temp * s / zs.len() as f64
}

/// Row `x` through `x W + b`.
pub fn affine(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += xi * w[i][j];
        }
    }
    out
}

/// Logit identifier parameters in storage order: `(W, b)` per block, then the head.
pub fn dl_forward_row(z: &[f64], params: &[Mat]) -> (Vec<f64>, f64) {
    let c = z.len();
    let n_blocks = (params.len() - 2) / 2;
    let mut h = z.to_vec();
    for k in 0..n_blocks {
        let inner = affine(&h, &params[2 * k], &params[2 * k + 1][0]);
        for j in 0..c {
            h[j] += inner[j].max(0.0);
        }
    }
    let out = affine(&h, &params[2 * n_blocks], &params[2 * n_blocks + 1][0]);
    (out[..c].to_vec(), out[c])
}

pub struct DlRef {
    pub class_t: Mat,
    pub rf_t: Vec<f64>,
    pub class_s: Mat,
    pub rf_s: Vec<f64>,
}

pub fn dl_outputs(zt: &Mat, zs: &Mat, params: &[Mat]) -> DlRef {
    let (mut class_t, mut rf_t, mut class_s, mut rf_s) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (rt, rs) in zt.iter().zip(zs) {
        let (c, r) = dl_forward_row(rt, params);
        class_t.push(c);
        rf_t.push(r);
        let (c, r) = dl_forward_row(rs, params);
        class_s.push(c);
        rf_s.push(r);
    }
    DlRef { class_t, rf_t, class_s, rf_s }
}

pub fn dl_disc(zt: &Mat, zs: &Mat, rows: &[usize], labels: &[usize], params: &[Mat], plain: bool) -> f64 {
    let o = dl_outputs(zt, zs, params);
    let mut loss = mean_bce(&o.rf_t, 1.0) + mean_bce(&o.rf_s, 0.0);
    if !plain && !rows.is_empty() {
        loss += ce(&o.class_t, rows, labels) + ce(&o.class_s, rows, labels);
    }
    loss
}

pub fn dl_gen(zt: &Mat, zs: &Mat, rows: &[usize], labels: &[usize], params: &[Mat], non_saturating: bool) -> f64 {
    let o = dl_outputs(zt, zs, params);
    let mut loss = if non_saturating {
        mean_bce(&o.rf_s, 1.0)
    } else {
        -mean_bce(&o.rf_t, 1.0) - mean_bce(&o.rf_s, 0.0)
    };
    if !rows.is_empty() {
        if !non_saturating {
            loss += ce(&o.class_t, rows, labels);
        }
        loss += ce(&o.class_s, rows, labels);
    }
    loss + l1(zs, zt)
}

/// Central differences of `f` at every entry of `x`.
pub fn fd_gradient(x: &Mat, h: f64, f: impl Fn(&Mat) -> f64) -> Vec<f64> {
    let mut g = Vec::new();
    let mut work = x.clone();
    for r in 0..x.len() {
        for c in 0..x[r].len() {
            work[r][c] = x[r][c] + h;
            let up = f(&work);
            work[r][c] = x[r][c] - h;
            let down = f(&work);
            work[r][c] = x[r][c];
            g.push((up - down) / (2.0 * h));
        }
    }
    g
}
