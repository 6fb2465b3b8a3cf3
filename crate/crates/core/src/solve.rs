//! Direct reference solvers, the multilevel patch preconditioner, PCG with
//! error-reduction bookkeeping and nested iteration.

use std::time::{Duration, Instant};

use faer::prelude::*;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use crate::error::{Error, Result};
use crate::mesh::Patch;
use crate::problem::Hierarchy;
use crate::sparse::{axpy, dot, norm2, sub, CsrMatrix};

/// Dense Cholesky factor `A = L Lᵀ` for small symmetric positive definite
/// matrices (patch problems and test oracles).
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// Factors a row-major `n × n` matrix; `None` if it is not positive definite.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if !(d > 1e-14 * scale) {
                return None;
            }
            let d = d.sqrt();
            a[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = s / d;
            }
        }
        Some(DenseCholesky { n, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, l) = (self.n, &self.l);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[k * n + i] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
    }
}

/// Solves `M x = b` by dense Cholesky of the full matrix.
pub fn dense_solve(m: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.nrows();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: b.len() });
    }
    let dense: Vec<f64> = m.to_dense().into_iter().flatten().collect();
    let chol = DenseCholesky::factor(dense, n)
        .ok_or_else(|| Error::NotPositiveDefinite("dense Cholesky found a non-positive pivot".into()))?;
    let mut x = b.to_vec();
    chol.solve_in_place(&mut x);
    Ok(x)
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct SparseCholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        let n = m.nrows();
        if !m.is_symmetric() {
            return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
        }
        let trip: Vec<Triplet<usize, usize, f64>> =
            m.triplets().filter(|&(i, j, _)| i >= j).map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
            .map_err(|e| Error::NotPositiveDefinite(format!("{e:?}")))?;
        let llt = a.sp_cholesky(Side::Lower).map_err(|e| Error::NotPositiveDefinite(format!("{e:?}")))?;
        Ok(SparseCholesky { n, llt })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: b.len() });
        }
        let rhs = Col::<f64>::from_fn(self.n, |i| b[i]);
        let x = self.llt.solve(&rhs);
        Ok((0..self.n).map(|i| x[i]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceOptions {
    /// Largest dimension factored directly; above it Jacobi-CG is used.
    pub direct_threshold: usize,
    /// Relative residual target of the iterative fallback.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions { direct_threshold: 4_000_000, tolerance: 1e-12, max_iterations: 200_000 }
    }
}

/// The discrete solution treated as exact: sparse Cholesky for systems up to
/// the threshold, Jacobi-preconditioned CG otherwise.
pub fn solve_reference(m: &CsrMatrix, b: &[f64], opts: &ReferenceOptions) -> Result<Vec<f64>> {
    if b.len() != m.nrows() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), actual: b.len() });
    }
    if b.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; b.len()]);
    }
    if m.nrows() <= opts.direct_threshold {
        return SparseCholesky::factor(m)?.solve(b);
    }
    let jacobi = JacobiPreconditioner::new(m)?;
    let pcg_opts = PcgOptions {
        rule: StopRule::RelativeResidual(opts.tolerance),
        max_iterations: opts.max_iterations,
        ..Default::default()
    };
    let (x, _) = pcg(m, b, &jacobi, &vec![0.0; b.len()], &pcg_opts)?;
    Ok(x)
}

/// A symmetric positive definite approximate inverse.
pub trait Preconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

pub struct JacobiPreconditioner {
    inv_diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn new(m: &CsrMatrix) -> Result<Self> {
        let d = m.diagonal();
        if let Some(i) = d.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::NotPositiveDefinite(format!("diagonal entry {i} is {}", d[i])));
        }
        Ok(JacobiPreconditioner { inv_diag: d.iter().map(|x| 1.0 / x).collect() })
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.iter().zip(&self.inv_diag).map(|(a, b)| a * b).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreconditionerConfig {
    /// Scalar factor applied to the additive correction.
    pub damping: f64,
}

impl Default for PreconditionerConfig {
    fn default() -> Self {
        PreconditionerConfig { damping: 1.0 }
    }
}

struct PatchSolver {
    dofs: Vec<u32>,
    chol: DenseCholesky,
}

/// Additive multilevel patch preconditioner
/// `T = Σ_k P_k Σ_ω R_ωᵀ A_ω⁻¹ R_ω P_kᵀ`, where `P_k` prolongs level `k` to
/// the finest level and `A_ω` is the level-k energy matrix on the patch dofs.
pub struct MultilevelPreconditioner {
    levels: Vec<Vec<PatchSolver>>,
    prolongations: Vec<CsrMatrix>,
    dims: Vec<usize>,
    damping: f64,
}

impl MultilevelPreconditioner {
    /// `matrices[k-1]` is the level-k operator, `prolongations[k-1]` maps
    /// level k to level k+1 and `patches[k-1]` lists the level-k patches.
    pub fn new(
        matrices: &[&CsrMatrix],
        prolongations: &[&CsrMatrix],
        patches: &[Vec<Patch>],
        cfg: PreconditionerConfig,
    ) -> Result<Self> {
        let k = matrices.len();
        if k == 0 || prolongations.len() + 1 != k || patches.len() != k {
            return Err(Error::InvalidLevel(format!(
                "preconditioner needs K matrices, K-1 prolongations and K patch sets (K = {k})"
            )));
        }
        let mut levels = Vec::with_capacity(k);
        for (li, (m, ps)) in matrices.iter().zip(patches).enumerate() {
            let mut solvers = Vec::with_capacity(ps.len());
            for (pi, p) in ps.iter().enumerate() {
                if p.dofs.is_empty() {
                    continue;
                }
                let local = m.dense_submatrix(&p.dofs);
                let chol = DenseCholesky::factor(local, p.dofs.len())
                    .ok_or(Error::SingularPatch { level: li as u32 + 1, patch: pi })?;
                solvers.push(PatchSolver { dofs: p.dofs.clone(), chol });
            }
            levels.push(solvers);
        }
        Ok(MultilevelPreconditioner {
            levels,
            prolongations: prolongations.iter().map(|p| (*p).clone()).collect(),
            dims: matrices.iter().map(|m| m.nrows()).collect(),
            damping: cfg.damping,
        })
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn patch_count(&self, level: usize) -> usize {
        self.levels[level - 1].len()
    }

    fn local_correction(&self, level: usize, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dims[level]];
        let mut buf = Vec::new();
        for p in &self.levels[level] {
            buf.clear();
            buf.extend(p.dofs.iter().map(|&d| r[d as usize]));
            p.chol.solve_in_place(&mut buf);
            for (&d, &x) in p.dofs.iter().zip(&buf) {
                z[d as usize] += x;
            }
        }
        z
    }
}

impl Preconditioner for MultilevelPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let k = self.levels.len();
        let mut residuals = vec![r.to_vec()];
        for l in (0..k - 1).rev() {
            let next = self.prolongations[l].mul_vec_transpose(residuals.last().expect("nonempty")).expect("sizes");
            residuals.push(next);
        }
        residuals.reverse();
        let mut z = self.local_correction(0, &residuals[0]);
        for l in 1..k {
            let mut up = self.prolongations[l - 1].mul_vec(&z).expect("sizes");
            let local = self.local_correction(l, &residuals[l]);
            axpy(1.0, &local, &mut up);
            z = up;
        }
        if self.damping != 1.0 {
            z.iter_mut().for_each(|x| *x *= self.damping);
        }
        z
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// Exactly this many steps (fewer only on exact convergence).
    Steps(usize),
    /// `‖b − M x‖₂ ≤ tol ‖b‖₂`.
    RelativeResidual(f64),
    /// `‖x* − x‖ ≤ tol` in the error norm; needs the exact solution.
    EnergyError(f64),
}

#[derive(Clone, Debug)]
pub struct PcgOptions<'a> {
    pub rule: StopRule,
    pub max_iterations: usize,
    pub min_iterations: usize,
    /// Exact discrete solution for error tracking.
    pub exact: Option<&'a [f64]>,
    /// Matrix of the error norm; defaults to the system matrix.
    pub norm: Option<&'a CsrMatrix>,
}

impl Default for PcgOptions<'_> {
    fn default() -> Self {
        PcgOptions { rule: StopRule::RelativeResidual(1e-10), max_iterations: 10_000, min_iterations: 0, exact: None, norm: None }
    }
}

/// Iteration history of a PCG run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖x* − x^(ν)‖` for `ν = 0..=iterations` when the exact solution is known.
    pub energy_errors: Vec<f64>,
    pub reduction_factors: Vec<f64>,
    /// Geometric mean of the reduction factors.
    pub average_reduction: Option<f64>,
    /// `‖b − M x^(ν)‖₂` for `ν = 0..=iterations`.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub wall_time: Duration,
}

/// `ρ^(ν) = e_ν / e_(ν−1)` truncated at the first vanishing denominator, and
/// their geometric mean.
pub fn compute_reduction_factors(errors: &[f64]) -> (Vec<f64>, Option<f64>) {
    let mut rho = Vec::new();
    for w in errors.windows(2) {
        if w[0] == 0.0 {
            break;
        }
        rho.push(w[1] / w[0]);
    }
    if rho.is_empty() {
        return (rho, None);
    }
    let n = rho.len() as f64;
    let avg = if rho.contains(&0.0) { 0.0 } else { (rho.iter().map(|r| r.ln()).sum::<f64>() / n).exp() };
    (rho, Some(avg))
}

/// Reduction factors of an iterate history against the exact solution in
/// the norm of `norm`.
pub fn reduction_factors_of_history(history: &[Vec<f64>], exact: &[f64], norm: &CsrMatrix) -> (Vec<f64>, Option<f64>) {
    let errors: Vec<f64> = history.iter().map(|x| norm.quadratic_form(&sub(exact, x)).max(0.0).sqrt()).collect();
    compute_reduction_factors(&errors)
}

pub fn error_norm(norm: &CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    norm.quadratic_form(&sub(a, b)).max(0.0).sqrt()
}

/// Preconditioned conjugate gradients from `x0`.
pub fn pcg(
    m: &CsrMatrix,
    b: &[f64],
    precond: &dyn Preconditioner,
    x0: &[f64],
    opts: &PcgOptions<'_>,
) -> Result<(Vec<f64>, SolveReport)> {
    pcg_with_history(m, b, precond, x0, opts, |_, _| {})
}

/// PCG that also hands each iterate `(ν, x^(ν))` to `observe`.
pub fn pcg_with_history<F: FnMut(usize, &[f64])>(
    m: &CsrMatrix,
    b: &[f64],
    precond: &dyn Preconditioner,
    x0: &[f64],
    opts: &PcgOptions<'_>,
    mut observe: F,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = m.nrows();
    for len in [b.len(), x0.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, actual: len });
        }
    }
    if let Some(e) = opts.exact {
        if e.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: e.len() });
        }
    }
    if matches!(opts.rule, StopRule::EnergyError(_)) && opts.exact.is_none() {
        return Err(Error::InvalidLevel("energy-error stopping needs the exact solution".into()));
    }
    let start = Instant::now();
    let norm_m = opts.norm.unwrap_or(m);
    let err = |x: &[f64]| opts.exact.map(|e| error_norm(norm_m, e, x));
    let bnorm = norm2(b);

    let mut x = x0.to_vec();
    let mut r = sub(b, &m.mul_vec(&x)?);
    let mut report = SolveReport::default();
    report.residual_norms.push(norm2(&r));
    if let Some(e) = err(&x) {
        report.energy_errors.push(e);
    }
    observe(0, &x);

    let done = |report: &SolveReport, it: usize| -> bool {
        if it < opts.min_iterations {
            return false;
        }
        match opts.rule {
            StopRule::Steps(s) => it >= s,
            StopRule::RelativeResidual(tol) => *report.residual_norms.last().expect("nonempty") <= tol * bnorm,
            StopRule::EnergyError(tol) => *report.energy_errors.last().expect("nonempty") <= tol,
        }
    };

    let mut z = precond.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut it = 0;
    let mut converged = done(&report, 0);
    while !converged && it < opts.max_iterations {
        if rz == 0.0 || report.residual_norms.last() == Some(&0.0) {
            converged = true;
            break;
        }
        m.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("pᵀMp = {pq} at iteration {it}")));
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        it += 1;
        report.residual_norms.push(norm2(&r));
        if let Some(e) = err(&x) {
            report.energy_errors.push(e);
        }
        observe(it, &x);
        if done(&report, it) {
            converged = true;
            break;
        }
        z = precond.apply(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    report.iterations = it;
    report.converged = converged;
    let (rho, avg) = compute_reduction_factors(&report.energy_errors);
    report.reduction_factors = rho;
    report.average_reduction = avg;
    report.wall_time = start.elapsed();
    if !converged {
        return Err(Error::MaxIterations { report: Box::new(report) });
    }
    Ok((x, report))
}

/// Extreme eigenvalues of `T M` estimated from the Lanczos tridiagonal built
/// out of `steps` PCG coefficients with a random start.
pub fn estimate_preconditioned_spectrum(m: &CsrMatrix, precond: &dyn Preconditioner, steps: usize, seed: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let n = m.nrows();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut r = b;
    let mut z = precond.apply(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    for _ in 0..steps.min(n) {
        let q = m.mul_vec(&p).expect("sizes");
        let alpha = rz / dot(&p, &q);
        axpy(-alpha, &q, &mut r);
        alphas.push(alpha);
        z = precond.apply(&r);
        let rz_new = dot(&r, &z);
        if rz_new <= 1e-28 * rz {
            break;
        }
        let beta = rz_new / rz;
        betas.push(beta);
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let k = alphas.len();
    let t = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            1.0 / alphas[i] + if i > 0 { betas[i - 1] / alphas[i - 1] } else { 0.0 }
        } else if i == j + 1 {
            betas[j].sqrt() / alphas[j]
        } else if j == i + 1 {
            betas[i].sqrt() / alphas[i]
        } else {
            0.0
        }
    });
    let ev = t.self_adjoint_eigenvalues(Side::Lower).expect("tridiagonal eigenvalues");
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// How the first iterate of the nested iteration is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitialGuess {
    Zero,
    /// The level-1 reference solution.
    #[default]
    Coarse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestedOptions {
    pub initial: InitialGuess,
    /// `None`: stop once the error is below `‖ũ_(K+1) − ũ_K‖` (needs reference
    /// solutions one level beyond the last); `Some(n)`: take `n` steps per level.
    pub fixed_steps: Option<usize>,
    pub max_steps: usize,
    pub preconditioner: PreconditionerConfig,
}

impl Default for NestedOptions {
    fn default() -> Self {
        NestedOptions { initial: InitialGuess::Coarse, fixed_steps: None, max_steps: 50, preconditioner: PreconditionerConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestedLevel {
    pub level: u32,
    /// PCG steps taken (`ν₀`).
    pub steps: usize,
    /// `‖ũ_K − ũ_K^(ν₀)‖` if references are available.
    pub error: Option<f64>,
    /// `‖ũ_(K+1) − ũ_K‖` if references are available.
    pub bound: Option<f64>,
    pub report: SolveReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NestedIterationReport {
    pub levels: Vec<NestedLevel>,
}

impl NestedIterationReport {
    pub fn max_steps(&self) -> usize {
        self.levels.iter().map(|l| l.steps).max().unwrap_or(0)
    }
}

/// Nested iteration over levels `2..=last`: each level starts from the
/// prolonged final iterate of the previous one and runs multilevel PCG.
/// `references[k-1]` must hold `ũ_k` for `k = 1..=last+1` in verification mode.
pub fn nested_iteration(
    h: &Hierarchy,
    last: u32,
    references: Option<&[Vec<f64>]>,
    opts: &NestedOptions,
) -> Result<NestedIterationReport> {
    if last as usize > h.max_level() as usize {
        return Err(Error::InvalidLevel(format!("nested iteration to level {last} beyond hierarchy {}", h.max_level())));
    }
    if opts.fixed_steps.is_none() {
        let need = last as usize + 1;
        if last >= 2 && references.is_none_or(|r| r.len() < need) {
            return Err(Error::InvalidLevel(format!("verification mode needs reference solutions for levels 1..={need}")));
        }
    }
    let mut report = NestedIterationReport::default();
    if last < 2 {
        return Ok(report);
    }
    let mut x = match (opts.initial, references) {
        (InitialGuess::Coarse, Some(r)) => r[0].clone(),
        (InitialGuess::Coarse, None) => solve_reference(&h.energy(1).matrix, h.load(1), &ReferenceOptions::default())?,
        (InitialGuess::Zero, _) => vec![0.0; h.dofmap(1).total_dofs()],
    };
    for k in 2..=last {
        let x0 = h.prolong_once(&x, k - 1)?;
        let precond = h.preconditioner(k, opts.preconditioner)?;
        let exact = references.map(|r| r[k as usize - 1].as_slice());
        let bound = match references {
            Some(r) if r.len() > k as usize => {
                let up = h.prolong_once(&r[k as usize - 1], k)?;
                Some(error_norm(&h.norm(k + 1).matrix, &r[k as usize], &up))
            }
            _ => None,
        };
        let rule = match opts.fixed_steps {
            Some(s) => StopRule::Steps(s),
            None => StopRule::EnergyError(bound.expect("checked above")),
        };
        let pcg_opts = PcgOptions {
            rule,
            max_iterations: opts.max_steps,
            min_iterations: 1,
            exact,
            norm: Some(&h.norm(k).matrix),
        };
        let (xk, rep) = pcg(&h.energy(k).matrix, h.load(k), &precond, &x0, &pcg_opts)?;
        report.levels.push(NestedLevel {
            level: k,
            steps: rep.iterations,
            error: rep.energy_errors.last().copied(),
            bound,
            report: rep,
        });
        x = xk;
    }
    Ok(report)
}
