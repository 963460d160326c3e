//! Matrix-free regularized least squares.
//!
//! The design matrix `A[j,k] = exp(i nu_k . x_j)` is applied either from a
//! materialized complex matrix (when it fits a memory budget) or recomputed
//! in row blocks. The fitting objective is
//!
//! `F(v) = (1/J) |A v - y|^2 + lambda1 |v|^2 + lambda2 |v|^4`
//!
//! solved by conjugate gradient on the normal equations when `lambda2 = 0`
//! and by damped Newton on the real/imaginary coordinates otherwise.
//! A dense Cholesky solver serves as an oracle for tests.
//!
//! All reductions use fixed chunk boundaries and sequential combination so
//! results are bitwise independent of the number of threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{C64, Dataset, FrequencySet};

/// Solver parameters for one fit.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// CG stops when the normal-equation residual falls below this fraction
    /// of the initial right-hand-side norm.
    pub cg_rel_tol: f64,
    pub cg_max_iters: usize,
    /// Newton stops when the real-coordinate gradient norm falls below this.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            cg_rel_tol: 1e-3,
            cg_max_iters: 2000,
            newton_tol: 1e-10,
            newton_max_iters: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, k: usize, j: usize) -> Result<()> {
        if !(self.cg_rel_tol > 0.0) || !(self.newton_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.cg_max_iters == 0 || self.newton_max_iters == 0 {
            return Err(Error::Config("solver iteration limits must be positive".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("regularization weights must be nonnegative".into()));
        }
        if k > j && self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(Error::Config(format!(
                "over-parameterized fit (K={k} > J={j}) without regularization; set lambda1 > 0"
            )));
        }
        Ok(())
    }
}

/// Default memory budget for materializing the design matrix.
const DESIGN_BUDGET_BYTES: usize = 512 * 1024 * 1024;
/// Row-block size for block-wise construction and virtual application.
const ROW_BLOCK: usize = 1024;

/// `theta = points (m x d) . freqs^T (d x k)`, row-major, parallel over row
/// blocks. Per-entry accumulation order depends only on d, so the result is
/// independent of threading.
pub(crate) fn phase_matrix(points: &[f64], freqs: &[f64], dim: usize) -> Vec<f64> {
    let m = points.len() / dim;
    let k = freqs.len() / dim;
    let mut theta = vec![0.0f64; m * k];
    theta
        .par_chunks_mut(ROW_BLOCK * k)
        .zip(points.par_chunks(ROW_BLOCK * dim))
        .for_each(|(out, rows)| {
            phase_block(rows, freqs, dim, k, out);
        });
    theta
}

fn phase_block(rows: &[f64], freqs: &[f64], dim: usize, k: usize, out: &mut [f64]) {
    let m = rows.len() / dim;
    debug_assert_eq!(out.len(), m * k);
    if m == 0 {
        return;
    }
    // freqs is K x d row-major; its transpose has row stride 1, column stride d.
    unsafe {
        matrixmultiply::dgemm(
            m,
            dim,
            k,
            1.0,
            rows.as_ptr(),
            dim as isize,
            1,
            freqs.as_ptr(),
            1,
            dim as isize,
            0.0,
            out.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

fn cis_block(theta: &[f64], out: &mut [C64]) {
    for (t, o) in theta.iter().zip(out.iter_mut()) {
        let (s, c) = t.sin_cos();
        *o = C64::new(c, s);
    }
}

enum DesignKind {
    Materialized { a: Vec<C64> },
    Virtual { points: Vec<f64>, freqs: Vec<f64> },
}

/// The design matrix `A[j,k] = exp(i nu_k . x_j)` behind an apply/adjoint
/// interface.
pub struct Design {
    j: usize,
    k: usize,
    dim: usize,
    kind: DesignKind,
}

impl Design {
    pub fn build(points: &[f64], freqs_dense: &[f64], dim: usize) -> Self {
        Self::build_with_budget(points, freqs_dense, dim, DESIGN_BUDGET_BYTES)
    }

    /// Construction with an explicit materialization budget in bytes. Exposed
    /// so tests can force the virtual path on small instances.
    pub fn build_with_budget(
        points: &[f64],
        freqs_dense: &[f64],
        dim: usize,
        budget_bytes: usize,
    ) -> Self {
        assert!(dim > 0 && points.len() % dim == 0 && freqs_dense.len() % dim == 0);
        let j = points.len() / dim;
        let k = freqs_dense.len() / dim;
        let bytes = j
            .checked_mul(k)
            .and_then(|e| e.checked_mul(std::mem::size_of::<C64>()))
            .unwrap_or(usize::MAX);
        if bytes <= budget_bytes {
            let mut a = vec![C64::new(0.0, 0.0); j * k];
            a.par_chunks_mut(ROW_BLOCK * k)
                .zip(points.par_chunks(ROW_BLOCK * dim))
                .for_each(|(out, rows)| {
                    let mut theta = vec![0.0f64; out.len()];
                    phase_block(rows, freqs_dense, dim, k, &mut theta);
                    cis_block(&theta, out);
                });
            Design { j, k, dim, kind: DesignKind::Materialized { a } }
        } else {
            Design {
                j,
                k,
                dim,
                kind: DesignKind::Virtual {
                    points: points.to_vec(),
                    freqs: freqs_dense.to_vec(),
                },
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.j
    }

    pub fn cols(&self) -> usize {
        self.k
    }

    /// `out[j] = sum_k A[j,k] v[k]`.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.k);
        let k = self.k;
        match &self.kind {
            DesignKind::Materialized { a } => a
                .par_chunks(k)
                .map(|row| row_dot(row, v))
                .collect(),
            DesignKind::Virtual { points, freqs } => {
                let mut out = vec![C64::new(0.0, 0.0); self.j];
                out.par_chunks_mut(ROW_BLOCK)
                    .zip(points.par_chunks(ROW_BLOCK * self.dim))
                    .for_each(|(o, rows)| {
                        let m = o.len();
                        let mut theta = vec![0.0f64; m * k];
                        phase_block(rows, freqs, self.dim, k, &mut theta);
                        let mut arow = vec![C64::new(0.0, 0.0); k];
                        for (oi, trow) in o.iter_mut().zip(theta.chunks(k)) {
                            cis_block(trow, &mut arow);
                            *oi = row_dot(&arow, v);
                        }
                    });
                out
            }
        }
    }

    /// `out[k] = sum_j conj(A[j,k]) r[j]`.
    pub fn adjoint_apply(&self, r: &[C64]) -> Vec<C64> {
        assert_eq!(r.len(), self.j);
        let k = self.k;
        let partials: Vec<Vec<C64>> = match &self.kind {
            DesignKind::Materialized { a } => a
                .par_chunks(ROW_BLOCK * k)
                .zip(r.par_chunks(ROW_BLOCK))
                .map(|(rows, rv)| {
                    let mut acc = vec![C64::new(0.0, 0.0); k];
                    for (row, &rj) in rows.chunks(k).zip(rv) {
                        conj_axpy(row, rj, &mut acc);
                    }
                    acc
                })
                .collect(),
            DesignKind::Virtual { points, freqs } => points
                .par_chunks(ROW_BLOCK * self.dim)
                .zip(r.par_chunks(ROW_BLOCK))
                .map(|(rows, rv)| {
                    let m = rv.len();
                    let mut theta = vec![0.0f64; m * k];
                    phase_block(rows, freqs, self.dim, k, &mut theta);
                    let mut acc = vec![C64::new(0.0, 0.0); k];
                    let mut arow = vec![C64::new(0.0, 0.0); k];
                    for (trow, &rj) in theta.chunks(k).zip(rv) {
                        cis_block(trow, &mut arow);
                        conj_axpy(&arow, rj, &mut acc);
                    }
                    acc
                })
                .collect(),
        };
        // Sequential combination in block order keeps the sum deterministic.
        let mut out = vec![C64::new(0.0, 0.0); k];
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }

    /// Dense row-major copy of the matrix (tests and the dense oracle).
    fn to_dense(&self) -> Vec<C64> {
        match &self.kind {
            DesignKind::Materialized { a } => a.clone(),
            DesignKind::Virtual { points, freqs } => {
                let theta = phase_matrix(points, freqs, self.dim);
                let mut a = vec![C64::new(0.0, 0.0); theta.len()];
                cis_block(&theta, &mut a);
                a
            }
        }
    }
}

#[inline]
fn row_dot(row: &[C64], v: &[C64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (a, b) in row.iter().zip(v) {
        acc += a * b;
    }
    acc
}

#[inline]
fn conj_axpy(row: &[C64], r: C64, acc: &mut [C64]) {
    for (a, o) in row.iter().zip(acc.iter_mut()) {
        *o += a.conj() * r;
    }
}

/// Real part of the conjugate inner product; the inner product of the
/// underlying real coordinate space.
pub(crate) fn re_dot(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn norm(a: &[C64]) -> f64 {
    re_dot(a, a).sqrt()
}

/// Free-function design application, `out[j] = sum_k v_k exp(i nu_k . x_j)`.
pub fn apply_design(freqs: &FrequencySet, inputs: &[f64], v: &[C64]) -> Result<Vec<C64>> {
    check_dims(freqs, inputs, v.len())?;
    let design = Design::build(inputs, &freqs.to_dense(), freqs.dim());
    Ok(design.apply(v))
}

/// Free-function adjoint application, `out[k] = sum_j conj(exp(i nu_k . x_j)) r_j`.
pub fn apply_adjoint(freqs: &FrequencySet, inputs: &[f64], r: &[C64]) -> Result<Vec<C64>> {
    let dim = freqs.dim();
    if inputs.len() % dim != 0 || inputs.len() / dim != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "inputs rows {} vs residual length {}",
            inputs.len() / dim,
            r.len()
        )));
    }
    let design = Design::build(inputs, &freqs.to_dense(), dim);
    Ok(design.adjoint_apply(r))
}

fn check_dims(freqs: &FrequencySet, inputs: &[f64], vlen: usize) -> Result<()> {
    let dim = freqs.dim();
    if inputs.len() % dim != 0 {
        return Err(Error::DimensionMismatch(
            "input length is not a multiple of the dimension".into(),
        ));
    }
    if vlen != freqs.len() {
        return Err(Error::DimensionMismatch(format!(
            "amplitude length {} vs frequency count {}",
            vlen,
            freqs.len()
        )));
    }
    Ok(())
}

/// Conjugate-gradient outcome. `converged = false` carries the final relative
/// residual so callers can decide whether to abort.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub amps: Vec<C64>,
    pub iters: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// CG on a symmetric positive definite operator over the real coordinate
/// space of `C^K`. Restarts from the true residual if the residual norm ever
/// increases; convergence is confirmed against the true residual.
pub(crate) fn cg_core<F>(op: F, b: &[C64], rel_tol: f64, max_iters: usize) -> Result<CgOutcome>
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            amps: vec![C64::new(0.0, 0.0); n],
            iters: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = re_dot(&r, &r);
    let mut iters = 0usize;
    while iters < max_iters {
        iters += 1;
        let mp = op(&p);
        let pmp = re_dot(&p, &mp);
        if !pmp.is_finite() {
            return Err(Error::Solver("CG operator produced a non-finite value".into()));
        }
        if pmp <= 0.0 {
            // Not positive definite along p; only acceptable at convergence.
            let rel = rr.sqrt() / b_norm;
            return if rel <= rel_tol {
                Ok(CgOutcome { amps: x, iters, rel_residual: rel, converged: true })
            } else {
                Err(Error::Solver(format!(
                    "CG operator not positive definite (p.Mp = {pmp:e} at relative residual {rel:e})"
                )))
            };
        }
        let alpha = rr / pmp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * mp[i];
        }
        let rr_new = re_dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::Solver("CG iterate became non-finite".into()));
        }
        if rr_new.sqrt() <= rel_tol * b_norm {
            // Confirm with the true residual before declaring victory.
            let mx = op(&x);
            let mut rt = b.to_vec();
            for i in 0..n {
                rt[i] -= mx[i];
            }
            let true_rr = re_dot(&rt, &rt);
            if true_rr.sqrt() <= rel_tol * b_norm {
                return Ok(CgOutcome {
                    amps: x,
                    iters,
                    rel_residual: true_rr.sqrt() / b_norm,
                    converged: true,
                });
            }
            r = rt;
            p = r.clone();
            rr = re_dot(&r, &r);
            continue;
        }
        if rr_new > rr {
            // Residual grew: restart the recurrence from the true residual.
            let mx = op(&x);
            r = b.to_vec();
            for i in 0..n {
                r[i] -= mx[i];
            }
            p = r.clone();
            rr = re_dot(&r, &r);
            continue;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok(CgOutcome {
        amps: x,
        iters,
        rel_residual: rr.sqrt() / b_norm,
        converged: false,
    })
}

fn normal_rhs(design: &Design, y: &[C64]) -> Vec<C64> {
    let j = design.rows() as f64;
    let mut b = design.adjoint_apply(y);
    for v in b.iter_mut() {
        *v /= j;
    }
    b
}

/// Solves the `lambda2 = 0` problem on a prebuilt design.
pub fn cg_with_design(design: &Design, y: &[C64], cfg: &SolverConfig) -> Result<CgOutcome> {
    cfg.validate(design.cols(), design.rows())?;
    let j = design.rows() as f64;
    let lambda1 = cfg.lambda1;
    let b = normal_rhs(design, y);
    let op = |v: &[C64]| {
        let av = design.apply(v);
        let mut out = design.adjoint_apply(&av);
        for (o, vi) in out.iter_mut().zip(v) {
            *o = *o / j + lambda1 * vi;
        }
        out
    };
    cg_core(op, &b, cfg.cg_rel_tol, cfg.cg_max_iters)
}

/// Matrix-free CG solve of the Tikhonov-regularized least squares problem.
pub fn cg_solve(freqs: &FrequencySet, dataset: &Dataset, cfg: &SolverConfig) -> Result<CgOutcome> {
    if dataset.dim != freqs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} vs frequency dimension {}",
            dataset.dim,
            freqs.dim()
        )));
    }
    let design = Design::build(&dataset.inputs, &freqs.to_dense(), freqs.dim());
    cg_with_design(&design, &dataset.targets, cfg)
}

/// Guard for the dense oracle.
const DENSE_MAX_K: usize = 2000;

/// Direct solve of the normal equations by complex Cholesky; test oracle.
pub fn dense_solve(freqs: &FrequencySet, dataset: &Dataset, lambda1: f64) -> Result<Vec<C64>> {
    let k = freqs.len();
    if k > DENSE_MAX_K {
        return Err(Error::Unsupported(format!(
            "dense solve limited to K <= {DENSE_MAX_K}, got K = {k}"
        )));
    }
    if dataset.dim != freqs.dim() {
        return Err(Error::DimensionMismatch("dataset/frequency dimensions differ".into()));
    }
    let j = dataset.len();
    let design = Design::build(&dataset.inputs, &freqs.to_dense(), freqs.dim());
    let a = design.to_dense();
    // G = A^H A / J + lambda1 I via row-wise rank-1 accumulation.
    let mut g = vec![C64::new(0.0, 0.0); k * k];
    for row in a.chunks(k) {
        for i in 0..k {
            let ci = row[i].conj();
            let gi = &mut g[i * k..(i + 1) * k];
            for (gij, &aj) in gi.iter_mut().zip(row) {
                *gij += ci * aj;
            }
        }
    }
    let jf = j as f64;
    for v in g.iter_mut() {
        *v /= jf;
    }
    for i in 0..k {
        g[i * k + i] += C64::new(lambda1, 0.0);
    }
    let b = normal_rhs(&design, &dataset.targets);
    chol_solve_in_place(&mut g, k, &b)
}

/// Cholesky `G = L L^H` and two triangular solves; `g` is clobbered.
fn chol_solve_in_place(g: &mut [C64], k: usize, b: &[C64]) -> Result<Vec<C64>> {
    for i in 0..k {
        for jj in 0..i {
            let mut s = g[i * k + jj];
            for t in 0..jj {
                s -= g[i * k + t] * g[jj * k + t].conj();
            }
            g[i * k + jj] = s / g[jj * k + jj].re;
        }
        let mut diag = g[i * k + i].re;
        for t in 0..i {
            diag -= g[i * k + t].norm_sqr();
        }
        if !(diag > 0.0) {
            return Err(Error::Solver(format!(
                "normal operator not positive definite at pivot {i} (value {diag:e})"
            )));
        }
        g[i * k + i] = C64::new(diag.sqrt(), 0.0);
    }
    // Forward: L z = b.
    let mut z = b.to_vec();
    for i in 0..k {
        let mut s = z[i];
        for t in 0..i {
            s -= g[i * k + t] * z[t];
        }
        z[i] = s / g[i * k + i].re;
    }
    // Backward: L^H x = z.
    let mut x = z;
    for i in (0..k).rev() {
        let mut s = x[i];
        for t in (i + 1)..k {
            s -= g[t * k + i].conj() * x[t];
        }
        x[i] = s / g[i * k + i].re;
    }
    Ok(x)
}

/// Value of the quartic objective `F` at `v`.
pub fn objective_value(design: &Design, y: &[C64], lambda1: f64, lambda2: f64, v: &[C64]) -> f64 {
    let av = design.apply(v);
    let j = design.rows() as f64;
    let fit: f64 = av.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum();
    let s: f64 = v.iter().map(|c| c.norm_sqr()).sum();
    fit / j + lambda1 * s + lambda2 * s * s
}

/// Wirtinger gradient `g = dF/d(conj v)`; the gradient with respect to the
/// real and imaginary parts of `v_k` is `(2 Re g_k, 2 Im g_k)`.
pub fn objective_gradient(
    design: &Design,
    y: &[C64],
    lambda1: f64,
    lambda2: f64,
    v: &[C64],
) -> Vec<C64> {
    let j = design.rows() as f64;
    let av = design.apply(v);
    let r: Vec<C64> = av.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut g = design.adjoint_apply(&r);
    let s: f64 = v.iter().map(|c| c.norm_sqr()).sum();
    let c = lambda1 + 2.0 * lambda2 * s;
    for (gi, vi) in g.iter_mut().zip(v) {
        *gi = *gi / j + c * vi;
    }
    g
}

/// Newton outcome for the quartic objective.
#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub amps: Vec<C64>,
    pub newton_iters: usize,
    /// Real-coordinate gradient norm at exit.
    pub grad_norm: f64,
    pub objective: f64,
    /// Total inner CG iterations across all Newton steps plus the initial fit.
    pub cg_iters: usize,
}

/// Damped Newton on the real/imaginary coordinates, initialized at the
/// `lambda2 = 0` CG solution.
pub fn newton_with_design(design: &Design, y: &[C64], cfg: &SolverConfig) -> Result<NewtonOutcome> {
    cfg.validate(design.cols(), design.rows())?;
    let (lambda1, lambda2) = (cfg.lambda1, cfg.lambda2);
    let j = design.rows() as f64;
    let init = cg_with_design(design, y, cfg)?;
    let mut cg_iters = init.iters;
    let mut v = init.amps;
    let mut objective = objective_value(design, y, lambda1, lambda2, &v);
    let mut grad_norm = f64::INFINITY;
    for it in 0..=cfg.newton_max_iters {
        let g = objective_gradient(design, y, lambda1, lambda2, &v);
        grad_norm = 2.0 * norm(&g);
        if grad_norm <= cfg.newton_tol {
            return Ok(NewtonOutcome { amps: v, newton_iters: it, grad_norm, objective, cg_iters });
        }
        if it == cfg.newton_max_iters {
            break;
        }
        let s: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        let shift = lambda1 + 2.0 * lambda2 * s;
        let vc = v.clone();
        let hess = |du: &[C64]| {
            let adu = design.apply(du);
            let mut out = design.adjoint_apply(&adu);
            let vd = re_dot(&vc, du);
            for i in 0..out.len() {
                out[i] = out[i] / j + shift * du[i] + 4.0 * lambda2 * vd * vc[i];
            }
            out
        };
        let rhs: Vec<C64> = g.iter().map(|x| -x).collect();
        let step = cg_core(hess, &rhs, 1e-10, 2 * design.cols() + 200)?;
        cg_iters += step.iters;
        // Damping: halve the step until the objective decreases. Near the
        // minimum the decrease drops below f64 roundoff while the gradient
        // still shrinks, so a roundoff-sized slack is allowed; termination
        // is governed by the gradient norm alone.
        let slack = 1e-14 * (1.0 + objective.abs());
        let mut t = 1.0f64;
        let mut accepted = false;
        for _ in 0..=30 {
            let trial: Vec<C64> =
                v.iter().zip(&step.amps).map(|(a, d)| a + t * d).collect();
            let f_trial = objective_value(design, y, lambda1, lambda2, &trial);
            if f_trial <= objective + slack {
                v = trial;
                objective = f_trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Solver(format!(
                "Newton step failed to decrease the objective at iteration {it} \
                 (gradient norm {grad_norm:e})"
            )));
        }
    }
    Err(Error::Solver(format!(
        "Newton did not converge in {} iterations (gradient norm {grad_norm:e})",
        cfg.newton_max_iters
    )))
}

/// Newton solve of the quartic problem from a frequency set and dataset.
pub fn newton_solve(
    freqs: &FrequencySet,
    dataset: &Dataset,
    cfg: &SolverConfig,
) -> Result<NewtonOutcome> {
    if dataset.dim != freqs.dim() {
        return Err(Error::DimensionMismatch("dataset/frequency dimensions differ".into()));
    }
    let design = Design::build(&dataset.inputs, &freqs.to_dense(), freqs.dim());
    newton_with_design(&design, &dataset.targets, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::evaluate_dense;
    use crate::rng::RngStream;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_instance(seed: u64, k: usize, j: usize, d: usize) -> (FrequencySet, Dataset) {
        let mut rng = RngStream::new(seed);
        let freqs: Vec<f64> = (0..k * d).map(|_| rng.standard_normal()).collect();
        let inputs: Vec<f64> = (0..j * d).map(|_| rng.standard_normal()).collect();
        let targets: Vec<C64> =
            (0..j).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        (
            FrequencySet::continuous(d, freqs),
            Dataset::new(d, inputs, targets, 0.0),
        )
    }

    fn cdot(a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn apply_matches_model_evaluation() {
        let (freqs, ds) = random_instance(3, 7, 23, 2);
        let mut rng = RngStream::new(77);
        let v: Vec<C64> =
            (0..7).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let got = apply_design(&freqs, &ds.inputs, &v).unwrap();
        let want = evaluate_dense(&freqs.to_dense(), &v, &ds.inputs, 2);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).norm() < 1e-12);
        }
    }

    #[test]
    fn scalar_design_entries() {
        let freqs = FrequencySet::zeros_continuous(1, 1);
        let v = [c(0.3, -0.4)];
        let out = apply_design(&freqs, &[0.0], &v).unwrap();
        assert!((out[0] - v[0]).norm() < 1e-15);
        let adj = apply_adjoint(&freqs, &[0.0], &[c(2.0, 1.0)]).unwrap();
        assert!((adj[0] - c(2.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn adjoint_identity() {
        let (freqs, ds) = random_instance(11, 9, 31, 3);
        let mut rng = RngStream::new(13);
        let v: Vec<C64> =
            (0..9).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let r: Vec<C64> =
            (0..31).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let av = apply_design(&freqs, &ds.inputs, &v).unwrap();
        let ar = apply_adjoint(&freqs, &ds.inputs, &r).unwrap();
        let lhs = cdot(&av, &r);
        let rhs = cdot(&v, &ar);
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn virtual_and_materialized_agree_bitwise() {
        let (freqs, ds) = random_instance(21, 8, 40, 2);
        let dense = freqs.to_dense();
        let mat = Design::build(&ds.inputs, &dense, 2);
        let virt = Design::build_with_budget(&ds.inputs, &dense, 2, 0);
        let mut rng = RngStream::new(1);
        let v: Vec<C64> =
            (0..8).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let r: Vec<C64> =
            (0..40).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        assert_eq!(mat.apply(&v), virt.apply(&v));
        assert_eq!(mat.adjoint_apply(&r), virt.adjoint_apply(&r));
    }

    #[test]
    fn cg_zero_rhs_gives_zero() {
        let (freqs, mut ds) = random_instance(31, 6, 20, 1);
        ds.targets = vec![c(0.0, 0.0); 20];
        let cfg = SolverConfig { lambda1: 0.1, ..Default::default() };
        let out = cg_solve(&freqs, &ds, &cfg).unwrap();
        assert!(out.converged);
        assert!(out.amps.iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn cg_scalar_closed_form() {
        // J=1, K=1, x=0, y=1: minimizer of |b-1|^2 + l1 |b|^2 is 1/(1+l1).
        let freqs = FrequencySet::zeros_continuous(1, 1);
        let ds = Dataset::new(1, vec![0.0], vec![c(1.0, 0.0)], 0.0);
        for l1 in [1e-3, 0.1, 1.0] {
            let cfg = SolverConfig { lambda1: l1, cg_rel_tol: 1e-14, ..Default::default() };
            let out = cg_solve(&freqs, &ds, &cfg).unwrap();
            assert!(out.converged);
            assert!((out.amps[0].re - 1.0 / (1.0 + l1)).abs() < 1e-12);
            assert!(out.amps[0].im.abs() < 1e-12);
        }
    }

    #[test]
    fn cg_matches_dense_oracle() {
        let (freqs, ds) = random_instance(41, 12, 60, 2);
        let cfg = SolverConfig { lambda1: 0.1, cg_rel_tol: 1e-12, ..Default::default() };
        let cg = cg_solve(&freqs, &ds, &cfg).unwrap();
        assert!(cg.converged);
        let dense = dense_solve(&freqs, &ds, 0.1).unwrap();
        let num: f64 = cg
            .amps
            .iter()
            .zip(&dense)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = dense.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den < 1e-8, "relative difference {}", num / den);
    }

    #[test]
    fn cg_objective_no_worse_than_zero() {
        for seed in [1u64, 2, 3, 4] {
            let (freqs, ds) = random_instance(seed, 10, 30, 2);
            let cfg = SolverConfig { lambda1: 0.05, ..Default::default() };
            let out = cg_solve(&freqs, &ds, &cfg).unwrap();
            let design = Design::build(&ds.inputs, &freqs.to_dense(), 2);
            let at_solution = objective_value(&design, &ds.targets, 0.05, 0.0, &out.amps);
            let at_zero =
                objective_value(&design, &ds.targets, 0.05, 0.0, &vec![c(0.0, 0.0); 10]);
            assert!(at_solution <= at_zero + 1e-12);
        }
    }

    #[test]
    fn overparameterized_without_regularization_refused() {
        let (freqs, ds) = random_instance(51, 30, 10, 2);
        let cfg = SolverConfig { lambda1: 0.0, lambda2: 0.0, ..Default::default() };
        assert!(matches!(cg_solve(&freqs, &ds, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn dense_duplicate_frequencies_share_amplitude() {
        let mut rng = RngStream::new(61);
        let d = 2;
        let base: Vec<f64> = (0..4 * d).map(|_| rng.standard_normal()).collect();
        // Plant: frequency 0 appears three times, frequency 1 twice.
        let mut coords = Vec::new();
        for idx in [0usize, 0, 0, 1, 1, 2, 3] {
            coords.extend_from_slice(&base[idx * d..(idx + 1) * d]);
        }
        let freqs = FrequencySet::continuous(d, coords);
        let j = 40;
        let inputs: Vec<f64> = (0..j * d).map(|_| rng.standard_normal()).collect();
        let targets: Vec<C64> =
            (0..j).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let ds = Dataset::new(d, inputs, targets, 0.0);
        let amps = dense_solve(&freqs, &ds, 0.1).unwrap();
        for group in [&[0usize, 1, 2][..], &[3, 4][..]] {
            let first = amps[group[0]];
            for &i in group.iter().skip(1) {
                assert!(
                    (amps[i] - first).norm() <= 1e-10 * first.norm(),
                    "duplicate amplitudes differ: {:?} vs {:?}",
                    amps[i],
                    first
                );
            }
        }
    }

    #[test]
    fn newton_matches_cubic_closed_form() {
        // K=1, J=1, x=0, y=1: stationarity is 2*l2*t^3 + (1+l1)*t - 1 = 0.
        let freqs = FrequencySet::zeros_continuous(1, 1);
        let ds = Dataset::new(1, vec![0.0], vec![c(1.0, 0.0)], 0.0);
        for (l1, l2) in [(0.1, 1e-3), (0.0, 1.0), (1.0, 1.0)] {
            let cfg = SolverConfig {
                lambda1: l1,
                lambda2: l2,
                cg_rel_tol: 1e-14,
                ..Default::default()
            };
            let out = newton_solve(&freqs, &ds, &cfg).unwrap();
            // Bisection on the strictly increasing cubic.
            let f = |t: f64| 2.0 * l2 * t * t * t + (1.0 + l1) * t - 1.0;
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let root = 0.5 * (lo + hi);
            assert!((out.amps[0].re - root).abs() < 1e-8, "{} vs {root}", out.amps[0].re);
            assert!(out.amps[0].im.abs() < 1e-10);
            assert!(out.grad_norm <= cfg.newton_tol);
        }
    }

    #[test]
    fn newton_tiny_lambda2_matches_cg() {
        let (freqs, ds) = random_instance(71, 8, 32, 2);
        let base = SolverConfig { lambda1: 0.2, cg_rel_tol: 1e-13, ..Default::default() };
        let cg = cg_solve(&freqs, &ds, &base).unwrap();
        let cfg = SolverConfig { lambda2: 1e-12, ..base };
        let newton = newton_solve(&freqs, &ds, &cfg).unwrap();
        for (a, b) in newton.amps.iter().zip(&cg.amps) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn newton_gradient_small_and_objective_improves() {
        let (freqs, ds) = random_instance(81, 20, 80, 2);
        let cfg = SolverConfig {
            lambda1: 0.05,
            lambda2: 0.5,
            cg_rel_tol: 1e-12,
            ..Default::default()
        };
        let init = cg_solve(&freqs, &ds, &cfg).unwrap();
        let out = newton_solve(&freqs, &ds, &cfg).unwrap();
        assert!(out.grad_norm <= 1e-10);
        let design = Design::build(&ds.inputs, &freqs.to_dense(), 2);
        let f_init = objective_value(&design, &ds.targets, 0.05, 0.5, &init.amps);
        assert!(out.objective <= f_init + 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let (freqs, ds) = random_instance(91, 6, 18, 2);
        let design = Design::build(&ds.inputs, &freqs.to_dense(), 2);
        let mut rng = RngStream::new(8);
        let v: Vec<C64> =
            (0..6).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
        let (l1, l2) = (0.07, 0.3);
        let g = objective_gradient(&design, &ds.targets, l1, l2, &v);
        let h = 1e-6;
        for i in 0..v.len() {
            for part in 0..2 {
                let mut vp = v.clone();
                let mut vm = v.clone();
                if part == 0 {
                    vp[i].re += h;
                    vm[i].re -= h;
                } else {
                    vp[i].im += h;
                    vm[i].im -= h;
                }
                let fp = objective_value(&design, &ds.targets, l1, l2, &vp);
                let fm = objective_value(&design, &ds.targets, l1, l2, &vm);
                let fd = (fp - fm) / (2.0 * h);
                let analytic = if part == 0 { 2.0 * g[i].re } else { 2.0 * g[i].im };
                let scale = analytic.abs().max(1.0);
                assert!(
                    (fd - analytic).abs() <= 1e-6 * scale,
                    "component {i} part {part}: fd {fd} vs analytic {analytic}"
                );
            }
        }
    }
}
