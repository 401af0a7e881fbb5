#![allow(dead_code)]

pub mod grad_checks;
pub mod reference;

use akd_core::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = fn() -> Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

pub fn to_f64(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).iter().map(|&x| x as f64).collect()).collect()
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{what}: got {got:.10}, want {want:.10}, |diff| {:.3e} > {tol:.1e}", (got - want).abs())
    })
}

/// Element-wise `|got - want| <= atol + rtol * |want|`.
pub fn allclose(what: &str, got: &[f64], want: &[f64], rtol: f64, atol: f64) -> Result<(), String> {
    ensure(got.len() == want.len(), || format!("{what}: length {} vs {}", got.len(), want.len()))?;
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        if !((g - w).abs() <= atol + rtol * w.abs()) {
            return Err(format!("{what}[{i}]: got {g:.10}, want {w:.10}"));
        }
    }
    Ok(())
}

pub fn matrix_close(what: &str, got: &DenseMatrix, want: &[Vec<f64>], tol: f64) -> Result<(), String> {
    ensure(got.rows() == want.len(), || format!("{what}: {} rows vs {}", got.rows(), want.len()))?;
    for (r, row) in want.iter().enumerate() {
        ensure(got.cols() == row.len(), || format!("{what}: {} cols vs {}", got.cols(), row.len()))?;
        for (c, &w) in row.iter().enumerate() {
            close(&format!("{what}[{r},{c}]"), got.get(r, c) as f64, w, tol)?;
        }
    }
    Ok(())
}

pub fn flat(m: &DenseMatrix) -> Vec<f64> {
    m.data().iter().map(|&x| x as f64).collect()
}

pub fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Runs every check, printing one line each; returns the failures.
pub fn run_all(group: &str, checks: &[(&'static str, Check)]) -> Vec<String> {
    let mut failures = Vec::new();
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("  ok   {group}::{name}"),
            Err(e) => {
                println!("  FAIL {group}::{name}: {e}");
                failures.push(format!("{name}: {e}"));
            }
        }
    }
    failures
}
