//! Linear solves of the form `x = b + β·A·x` with a sparse row-substochastic
//! (or column-substochastic) matrix `A`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Chains up to this many states are solved by dense LU.
pub const DENSE_LIMIT: usize = 600;
const MAX_SWEEPS: usize = 200_000;

/// Compressed sparse rows.
#[derive(Debug, Clone)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub entries: Vec<(u32, f64)>,
}

impl Csr {
    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, s: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn transpose(&self) -> Csr {
        let n = self.n_rows();
        let mut counts = vec![0usize; n + 1];
        for &(t, _) in &self.entries {
            counts[t as usize + 1] += 1;
        }
        for k in 0..n {
            counts[k + 1] += counts[k];
        }
        let mut fill = counts.clone();
        let mut entries = vec![(0u32, 0.0); self.entries.len()];
        for s in 0..n {
            for &(t, p) in self.row(s) {
                let pos = &mut fill[t as usize];
                entries[*pos] = (s as u32, p);
                *pos += 1;
            }
        }
        Csr {
            offsets: counts,
            entries,
        }
    }

    /// `max_s |x_s − b_s − β Σ_t A_st x_t|`
    pub fn residual(&self, x: &[f64], b: &[f64], beta: f64) -> f64 {
        (0..self.n_rows())
            .map(|s| {
                let ax: f64 = self.row(s).iter().map(|&(t, p)| p * x[t as usize]).sum();
                (x[s] - b[s] - beta * ax).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Solves `x = b + β A x`. Dense LU for small systems, Gauss–Seidel sweeps
/// otherwise; the returned solution has residual at most `1e-10·max(1, ‖x‖∞)`.
pub fn solve_discounted(a: &Csr, b: &[f64], beta: f64) -> Result<Vec<f64>> {
    let n = a.n_rows();
    if n <= DENSE_LIMIT {
        let mut m = DMatrix::<f64>::identity(n, n);
        for s in 0..n {
            for &(t, p) in a.row(s) {
                m[(s, t as usize)] -= beta * p;
            }
        }
        let rhs = DVector::from_column_slice(b);
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or(Error::Solver {
                iterations: 0,
                residual: f64::INFINITY,
            })?;
        let x: Vec<f64> = x.iter().copied().collect();
        let res = a.residual(&x, b, beta);
        if !(res <= 1e-10 * scale(&x)) {
            return Err(Error::Solver {
                iterations: 0,
                residual: res,
            });
        }
        return Ok(x);
    }
    gauss_seidel(a, b, beta)
}

fn scale(x: &[f64]) -> f64 {
    x.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

pub fn gauss_seidel(a: &Csr, b: &[f64], beta: f64) -> Result<Vec<f64>> {
    let n = a.n_rows();
    let mut x = b.to_vec();
    for sweep in 1..=MAX_SWEEPS {
        let mut delta = 0.0f64;
        for s in 0..n {
            let mut acc = b[s];
            let mut diag = 0.0;
            for &(t, p) in a.row(s) {
                if t as usize == s {
                    diag += p;
                } else {
                    acc += beta * p * x[t as usize];
                }
            }
            let v = acc / (1.0 - beta * diag);
            delta = delta.max((v - x[s]).abs());
            x[s] = v;
        }
        if !delta.is_finite() {
            return Err(Error::Solver {
                iterations: sweep,
                residual: delta,
            });
        }
        if delta <= 1e-14 * scale(&x) {
            let res = a.residual(&x, b, beta);
            if res <= 1e-10 * scale(&x) {
                return Ok(x);
            }
        }
    }
    Err(Error::Solver {
        iterations: MAX_SWEEPS,
        residual: a.residual(&x, b, beta),
    })
}
