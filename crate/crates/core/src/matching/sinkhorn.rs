//! Log-domain Sinkhorn normalization, as a plain kernel and as a tape op.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{CustomOp, Graph, Tensor, Var};

pub const DEFAULT_ITERS: usize = 20;
pub const DEFAULT_EPS: f64 = 1e-9;

fn logsumexp<T: Real>(vals: impl Iterator<Item = T> + Clone) -> T {
    let m = vals.clone().fold(-T::infinity(), |a, b| if b > a { b } else { a });
    if m == -T::infinity() {
        return m;
    }
    let s = vals.fold(T::zero(), |acc, v| acc + (v - m).exp());
    m + s.ln()
}

fn normalize_rows<T: Real>(y: &mut [T], n: usize) {
    for row in y.chunks_mut(n) {
        let l = logsumexp(row.iter().copied());
        for v in row.iter_mut() {
            *v -= l;
        }
    }
}

fn normalize_cols<T: Real>(y: &mut [T], n: usize) {
    for c in 0..n {
        let l = logsumexp((0..n).map(|r| y[r * n + c]));
        for r in 0..n {
            y[r * n + c] -= l;
        }
    }
}

/// `iters` rounds of row-then-column normalization applied in place to the
/// log-domain `n × n` matrix `y`.
pub fn sinkhorn_log_in_place<T: Real>(y: &mut [T], n: usize, iters: usize) {
    for _ in 0..iters {
        normalize_rows(y, n);
        normalize_cols(y, n);
    }
}

fn check_square(len: usize, n: usize) -> Result<()> {
    if len != n * n {
        return Err(Error::Shape { op: "sinkhorn", detail: format!("{len} entries for {n}×{n}") });
    }
    Ok(())
}

/// Doubly-stochastic projection of a positive `n × n` matrix (row-major).
/// Entries below `eps` are floored to `eps` before taking logs so underflowed
/// affinities stay usable; zero, negative or non-finite entries are rejected.
pub fn sinkhorn<T: Real>(m: &[T], n: usize, iters: usize, eps: T) -> Result<Vec<T>> {
    check_square(m.len(), n)?;
    if let Some(bad) = m.iter().find(|v| !(**v > T::zero()) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("sinkhorn needs positive finite entries, found {bad}")));
    }
    let mut y: Vec<T> = m.iter().map(|&v| if v < eps { eps } else { v }.ln()).collect();
    sinkhorn_log_in_place(&mut y, n, iters);
    Ok(y.into_iter().map(|v| v.exp()).collect())
}

/// Same as [`sinkhorn`] but starting from log-affinities.
pub fn sinkhorn_from_log<T: Real>(log_m: &[T], n: usize, iters: usize) -> Result<Vec<T>> {
    check_square(log_m.len(), n)?;
    if log_m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "sinkhorn".into() });
    }
    let mut y = log_m.to_vec();
    sinkhorn_log_in_place(&mut y, n, iters);
    Ok(y.into_iter().map(|v| v.exp()).collect())
}

/// Row half-step on the log-domain `y`; writes `exp(y)` after normalizing into `p`.
fn rows_step(y: &mut [f64], p: &mut [f64], n: usize) {
    for (yr, pr) in y.chunks_mut(n).zip(p.chunks_mut(n)) {
        let m = yr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (v, e) in yr.iter().zip(pr.iter_mut()) {
            *e = (v - m).exp();
            s += *e;
        }
        let (l, inv) = (m + s.ln(), 1.0 / s);
        for (v, e) in yr.iter_mut().zip(pr.iter_mut()) {
            *v -= l;
            *e *= inv;
        }
    }
}

/// Column half-step, traversing rows for locality.
fn cols_step(y: &mut [f64], p: &mut [f64], n: usize) {
    let mut m = vec![f64::NEG_INFINITY; n];
    for yr in y.chunks(n) {
        for (mc, &v) in m.iter_mut().zip(yr) {
            *mc = mc.max(v);
        }
    }
    let mut s = vec![0.0; n];
    for (yr, pr) in y.chunks(n).zip(p.chunks_mut(n)) {
        for c in 0..n {
            pr[c] = (yr[c] - m[c]).exp();
            s[c] += pr[c];
        }
    }
    let l: Vec<f64> = m.iter().zip(&s).map(|(m, s)| m + s.ln()).collect();
    let inv: Vec<f64> = s.iter().map(|s| 1.0 / s).collect();
    for (yr, pr) in y.chunks_mut(n).zip(p.chunks_mut(n)) {
        for c in 0..n {
            yr[c] -= l[c];
            pr[c] *= inv[c];
        }
    }
}

/// Keeps every half-step's output probabilities; each one is also the softmax
/// Jacobian needed to undo that step.
struct SinkhornOp {
    n: usize,
    states: Vec<Vec<f64>>,
}

impl CustomOp for SinkhornOp {
    fn name(&self) -> &'static str {
        "sinkhorn"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let n = self.n;
        let mut g: Vec<f64> = grad_out.iter().zip(output.data()).map(|(a, b)| a * b).collect();
        let mut col = vec![0.0; n];
        for (k, p) in self.states.iter().enumerate().rev() {
            if k % 2 == 0 {
                for (gr, pr) in g.chunks_mut(n).zip(p.chunks(n)) {
                    let s: f64 = gr.iter().sum();
                    for (gv, pv) in gr.iter_mut().zip(pr) {
                        *gv -= pv * s;
                    }
                }
            } else {
                col.iter_mut().for_each(|v| *v = 0.0);
                for gr in g.chunks(n) {
                    for (c, gv) in col.iter_mut().zip(gr) {
                        *c += gv;
                    }
                }
                for (gr, pr) in g.chunks_mut(n).zip(p.chunks(n)) {
                    for c in 0..n {
                        gr[c] -= pr[c] * col[c];
                    }
                }
            }
        }
        Ok(vec![Some(g)])
    }
}

/// Differentiable Sinkhorn on the tape: input is the `n × n` log-affinity,
/// output the doubly-stochastic matrix.
pub fn sinkhorn_var(g: &mut Graph, log_m: Var, iters: usize) -> Result<Var> {
    let t = g.value(log_m);
    if t.rank() != 2 || t.shape()[0] != t.shape()[1] {
        return Err(Error::Shape { op: "sinkhorn", detail: format!("expected square matrix, got {:?}", t.shape()) });
    }
    let n = t.shape()[0];
    let mut y = t.data().to_vec();
    let mut states = Vec::with_capacity(2 * iters);
    let mut p = vec![0.0; n * n];
    if iters == 0 {
        p = y.iter().map(|v| v.exp()).collect();
    }
    for _ in 0..iters {
        rows_step(&mut y, &mut p, n);
        states.push(p.clone());
        cols_step(&mut y, &mut p, n);
        states.push(p.clone());
    }
    let out = Tensor::new(vec![n, n], p)?;
    g.custom(Box::new(SinkhornOp { n, states }), &[log_m], out)
}
