//! Norms, the heuristic homogenization error, rate fitting, and checks of the
//! inequalities and identities satisfied by the broken spaces.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{triangle_area, EnergyForm, Source};
use crate::error::{Error, Result};
use crate::mesh::{Triangulation, NONE};
use crate::problem::{Hierarchy, LevelView};
use crate::solve::{dense_solve, error_norm, solve_reference, ReferenceOptions, SparseCholesky};
use crate::sparse::{sub, CsrMatrix};

/// Squared norm `‖v‖²_{K,c}` split into its parts.
#[derive(Clone, Debug, PartialEq)]
pub struct NormBreakdown {
    /// `‖∇v‖²` over `Q∖Γ^(K)`.
    pub gradient: f64,
    /// `(1+c)^k C_k ‖⟦v⟧‖²` on `Γ_k`, stored at index `k-1`.
    pub jumps: Vec<f64>,
    pub total: f64,
    /// `‖v‖²_{L²(Q)}`.
    pub l2: f64,
}

fn dof_value(v: &[f64], d: u32) -> f64 {
    if d == NONE {
        0.0
    } else {
        v[d as usize]
    }
}

fn corner_values(view: &LevelView<'_>, v: &[f64], t: u32) -> [f64; 3] {
    view.dofmap.triangle_dofs(t).map(|d| dof_value(v, d))
}

/// Constant gradient of the affine function with corner values `u`.
fn p1_gradient(c: &[[f64; 2]; 3], u: [f64; 3]) -> [f64; 2] {
    let e1 = [c[1][0] - c[0][0], c[1][1] - c[0][1]];
    let e2 = [c[2][0] - c[0][0], c[2][1] - c[0][1]];
    let det = e1[0] * e2[1] - e1[1] * e2[0];
    let (d1, d2) = (u[1] - u[0], u[2] - u[0]);
    [(d1 * e2[1] - d2 * e1[1]) / det, (e1[0] * d2 - e2[0] * d1) / det]
}

fn check_len(view: &LevelView<'_>, v: &[f64]) -> Result<()> {
    let n = view.dofmap.total_dofs();
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: v.len() });
    }
    Ok(())
}

/// Exact per-element evaluation of all parts of `‖v‖²_{K,c}`.
pub fn norm_breakdown(view: &LevelView<'_>, form: &EnergyForm, v: &[f64]) -> Result<NormBreakdown> {
    check_len(view, v)?;
    let (mut gradient, mut l2) = (0.0, 0.0);
    for t in 0..view.mesh.triangle_count() as u32 {
        let c = view.mesh.triangle_coords(t);
        let u = corner_values(view, v, t);
        let area = triangle_area(&c);
        let g = p1_gradient(&c, u);
        gradient += area * (g[0] * g[0] + g[1] * g[1]);
        let s: f64 = u.iter().sum();
        l2 += area / 12.0 * (u.iter().map(|x| x * x).sum::<f64>() + s * s);
    }
    let mut jumps = vec![0.0; view.dofmap.level() as usize];
    for e in view.dofmap.interface_edges() {
        let j0 = dof_value(v, e.plus[0]) - dof_value(v, e.minus[0]);
        let j1 = dof_value(v, e.plus[1]) - dof_value(v, e.minus[1]);
        let w = form.weight(e.level, view.network);
        jumps[e.level as usize - 1] += w * e.length / 3.0 * (j0 * j0 + j0 * j1 + j1 * j1);
    }
    let total = gradient + jumps.iter().sum::<f64>();
    Ok(NormBreakdown { gradient, jumps, total, l2 })
}

/// `𝓔_K(v) = ½ vᵀMv − bᵀv`.
pub fn energy_value(v: &[f64], m: &CsrMatrix, b: &[f64]) -> f64 {
    0.5 * m.quadratic_form(v) - b.iter().zip(v).map(|(x, y)| x * y).sum::<f64>()
}

/// Least-squares fit `values ≈ a · factor^K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricFit {
    pub factor: f64,
    /// Root mean square residual of the fit in `log` space.
    pub residual: f64,
}

pub fn fit_geometric_factor(levels: &[u32], values: &[f64]) -> Option<GeometricFit> {
    if levels.len() != values.len() || levels.len() < 2 || values.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let n = levels.len() as f64;
    let xs: Vec<f64> = levels.iter().map(|&k| k as f64).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    Some(GeometricFit { factor: slope.exp(), residual: (rss / n).sqrt() })
}

/// Heuristic homogenization errors `e_K` and their fitted decay per level.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    pub reference_level: u32,
    /// `K = 1..=K_ref`.
    pub levels: Vec<u32>,
    pub errors: Vec<f64>,
    /// Fitted over `K = 1..K_ref`.
    pub fit_factor: f64,
    pub fit_residual: f64,
}

/// `e_K = ‖ũ_(K_ref+1) − ũ_K_ref‖ + ‖ũ_K_ref − ũ_K‖`, all differences taken
/// in the level-`(K_ref+1)` space. `references[k-1]` holds `ũ_k`.
pub fn convergence_study(h: &Hierarchy, references: &[Vec<f64>], k_ref: u32) -> Result<ConvergenceStudy> {
    if k_ref < 3 {
        return Err(Error::InvalidLevel(format!("convergence study needs K_ref >= 3, got {k_ref}")));
    }
    let top = k_ref + 1;
    if h.max_level() < top || references.len() < top as usize {
        return Err(Error::InvalidLevel(format!("convergence study with K_ref = {k_ref} needs level {top}")));
    }
    let n = &h.norm(top).matrix;
    let u_ref = h.prolong(&references[k_ref as usize - 1], k_ref, top)?;
    let tail = error_norm(n, &references[top as usize - 1], &u_ref);
    let levels: Vec<u32> = (1..=k_ref).collect();
    let mut errors = Vec::with_capacity(levels.len());
    for &k in &levels {
        let head = if k == k_ref { 0.0 } else { error_norm(n, &u_ref, &h.prolong(&references[k as usize - 1], k, top)?) };
        errors.push(tail + head);
    }
    let fit = fit_geometric_factor(&levels[..levels.len() - 1], &errors[..errors.len() - 1])
        .ok_or_else(|| Error::InvalidLevel("vanishing homogenization error".into()))?;
    Ok(ConvergenceStudy { reference_level: k_ref, levels, errors, fit_factor: fit.factor, fit_residual: fit.residual })
}

/// An inequality `lhs ≤ rhs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl InequalityCheck {
    /// `lhs / rhs`, zero for `0 ≤ 0`.
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12)
    }
}

/// `C₀ = (1 + 1/c) diam(Q) max(diam(Q), 1)` on the unit square.
pub fn poincare_constant(c: f64) -> f64 {
    let d = std::f64::consts::SQRT_2;
    (1.0 + 1.0 / c) * d * d.max(1.0)
}

/// `‖v‖²_{L²} ≤ C₀ ‖v‖²_{K,c}`.
pub fn poincare_check(view: &LevelView<'_>, form: &EnergyForm, v: &[f64]) -> Result<InequalityCheck> {
    let b = norm_breakdown(view, form, v)?;
    Ok(InequalityCheck { lhs: b.l2, rhs: poincare_constant(form.c) * b.total })
}

/// Walks straight segments through a level mesh and evaluates broken
/// functions along them exactly.
pub struct SegmentProbe<'a> {
    view: LevelView<'a>,
    interface_level: HashMap<u32, u32>,
}

/// Part of a segment inside one triangle, `x + s (y − x)` for `s ∈ [s0, s1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Piece {
    triangle: u32,
    s0: f64,
    s1: f64,
}

impl<'a> SegmentProbe<'a> {
    pub fn new(view: LevelView<'a>) -> Self {
        let interface_level = view.dofmap.interface_edges().iter().map(|e| (e.edge, e.level)).collect();
        SegmentProbe { view, interface_level }
    }

    /// Splits the segment at the grid lines, verticals and diagonals of the
    /// structured mesh. Segments through a vertex or with an endpoint on an
    /// edge are rejected.
    fn pieces(&self, x: [f64; 2], y: [f64; 2]) -> Result<Vec<Piece>> {
        let n = self.view.mesh.n() as f64;
        let (a, b) = ([x[0] * n, x[1] * n], [y[0] * n, y[1] * n]);
        // families: vertical lines X = i, horizontal Y = j, diagonals X − Y = m
        let lines = [(a[0], b[0]), (a[1], b[1]), (a[0] - a[1], b[0] - b[1])];
        let mut cuts: Vec<(f64, usize)> = Vec::new();
        for (fam, &(p, q)) in lines.iter().enumerate() {
            if p == p.round() || q == q.round() {
                return Err(Error::DegenerateSegment(format!("endpoint on a mesh line {x:?} -> {y:?}")));
            }
            if p == q {
                continue;
            }
            let (lo, hi) = (p.min(q), p.max(q));
            let mut i = lo.ceil();
            while i < hi {
                cuts.push(((i - p) / (q - p), fam));
                i += 1.0;
            }
        }
        cuts.sort_by(|u, v| u.0.total_cmp(&v.0));
        for w in cuts.windows(2) {
            if w[1].0 - w[0].0 < 1e-10 && w[0].1 != w[1].1 {
                return Err(Error::DegenerateSegment(format!("segment passes through a mesh vertex {x:?} -> {y:?}")));
            }
        }
        let mut pieces = Vec::with_capacity(cuts.len() + 1);
        let mut s0 = 0.0;
        for s1 in cuts.iter().map(|c| c.0).chain(std::iter::once(1.0)) {
            let sm = 0.5 * (s0 + s1);
            let p = [x[0] + sm * (y[0] - x[0]), x[1] + sm * (y[1] - x[1])];
            let triangle = self
                .view
                .mesh
                .locate(p)
                .ok_or_else(|| Error::DegenerateSegment(format!("segment leaves the domain at {p:?}")))?;
            pieces.push(Piece { triangle, s0, s1 });
            s0 = s1;
        }
        Ok(pieces)
    }

    /// `v` restricted to triangle `t`, evaluated at `p`.
    fn eval_in(&self, v: &[f64], t: u32, p: [f64; 2]) -> f64 {
        let c = self.view.mesh.triangle_coords(t);
        let u = corner_values(&self.view, v, t);
        let g = p1_gradient(&c, u);
        u[0] + g[0] * (p[0] - c[0][0]) + g[1] * (p[1] - c[0][1])
    }

    fn shared_interface_level(&self, s: u32, t: u32) -> Option<u32> {
        let es = self.view.mesh.triangle_edges(s);
        let et = self.view.mesh.triangle_edges(t);
        es.iter().find(|e| et.contains(e)).and_then(|e| self.interface_level.get(e).copied())
    }

    /// `|v(x) − v(y)|²` against
    /// `(1 + 1/c)(|x−y|² ∫₀¹ |∇v|² ds + Σ_k (1+c)^k C_k Σ_ξ ⟦v⟧²_{x,y}(ξ))`,
    /// where the directional jump is the trace ahead minus the trace behind.
    pub fn fundamental_estimate(&self, form: &EnergyForm, v: &[f64], x: [f64; 2], y: [f64; 2]) -> Result<InequalityCheck> {
        check_len(&self.view, v)?;
        let walk = self.walk(form, v, x, y)?;
        let len2 = (y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2);
        let rhs = (1.0 + 1.0 / form.c) * (len2 * walk.gradient_integral + walk.weighted_jumps);
        Ok(InequalityCheck { lhs: (walk.end - walk.start).powi(2), rhs })
    }

    fn walk(&self, form: &EnergyForm, v: &[f64], x: [f64; 2], y: [f64; 2]) -> Result<Walk> {
        let pieces = self.pieces(x, y)?;
        let at = |s: f64| [x[0] + s * (y[0] - x[0]), x[1] + s * (y[1] - x[1])];
        let mut w = Walk {
            start: self.eval_in(v, pieces[0].triangle, x),
            end: self.eval_in(v, pieces[pieces.len() - 1].triangle, y),
            ..Walk::default()
        };
        for p in &pieces {
            let c = self.view.mesh.triangle_coords(p.triangle);
            let g = p1_gradient(&c, corner_values(&self.view, v, p.triangle));
            w.gradient_integral += (p.s1 - p.s0) * (g[0] * g[0] + g[1] * g[1]);
            w.increment += (p.s1 - p.s0) * (g[0] * (y[0] - x[0]) + g[1] * (y[1] - x[1]));
        }
        for pair in pieces.windows(2) {
            let (behind, ahead) = (pair[0].triangle, pair[1].triangle);
            if let Some(k) = self.shared_interface_level(behind, ahead) {
                let xi = at(pair[0].s1);
                let jump = self.eval_in(v, ahead, xi) - self.eval_in(v, behind, xi);
                w.increment += jump;
                w.weighted_jumps += form.weight(k, self.view.network) * jump * jump;
            }
        }
        Ok(w)
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Walk {
    start: f64,
    end: f64,
    gradient_integral: f64,
    weighted_jumps: f64,
    /// `∫ ∇v·(y−x) ds + Σ ⟦v⟧`, equal to `end − start`.
    increment: f64,
}

/// One-shot version of [`SegmentProbe::fundamental_estimate`].
pub fn fundamental_estimate_check(
    view: &LevelView<'_>,
    form: &EnergyForm,
    v: &[f64],
    x: [f64; 2],
    y: [f64; 2],
) -> Result<InequalityCheck> {
    SegmentProbe::new(*view).fundamental_estimate(form, v, x, y)
}

/// Vector field with quadratic components; coefficients of
/// `1, x, y, x², xy, y²`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadraticField {
    pub x: [f64; 6],
    pub y: [f64; 6],
}

impl QuadraticField {
    pub fn constant(a: [f64; 2]) -> Self {
        let mut f = QuadraticField::default();
        f.x[0] = a[0];
        f.y[0] = a[1];
        f
    }

    /// Coefficients uniform in `[−1, 1]`.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        QuadraticField { x: std::array::from_fn(|_| rng.gen_range(-1.0..=1.0)), y: std::array::from_fn(|_| rng.gen_range(-1.0..=1.0)) }
    }

    fn poly(c: &[f64; 6], p: [f64; 2]) -> f64 {
        c[0] + c[1] * p[0] + c[2] * p[1] + c[3] * p[0] * p[0] + c[4] * p[0] * p[1] + c[5] * p[1] * p[1]
    }

    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        [Self::poly(&self.x, p), Self::poly(&self.y, p)]
    }

    pub fn divergence(&self, p: [f64; 2]) -> f64 {
        let (a, b) = (&self.x, &self.y);
        a[1] + 2.0 * a[3] * p[0] + a[4] * p[1] + b[2] + b[4] * p[0] + 2.0 * b[5] * p[1]
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Defect of `∫ v div φ + ∫ ∇v·φ + Σ_k ∫_{Γ_k} ⟦v⟧ φ·ν = 0` (the boundary
/// term vanishes with `v` on `∂Q`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenDefect {
    pub absolute: f64,
    /// Relative to the sum of the magnitudes of the three terms.
    pub relative: f64,
}

/// Evaluates the three integrals with rules exact for the degrees involved:
/// edge midpoints on triangles (degree 2) and Simpson on edges (degree 3).
pub fn green_identity_check(view: &LevelView<'_>, v: &[f64], phi: &QuadraticField) -> Result<GreenDefect> {
    check_len(view, v)?;
    let (mut div_term, mut grad_term, mut jump_term) = (CompensatedSum::default(), CompensatedSum::default(), CompensatedSum::default());
    for t in 0..view.mesh.triangle_count() as u32 {
        let c = view.mesh.triangle_coords(t);
        let u = corner_values(view, v, t);
        let g = p1_gradient(&c, u);
        let w = triangle_area(&c) / 3.0;
        for l in 0..3 {
            let (p, q) = (c[l], c[(l + 1) % 3]);
            let m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
            let vm = 0.5 * (u[l] + u[(l + 1) % 3]);
            let f = phi.eval(m);
            div_term.add(w * vm * phi.divergence(m));
            grad_term.add(w * (g[0] * f[0] + g[1] * f[1]));
        }
    }
    for e in view.dofmap.interface_edges() {
        let (p, q) = (view.mesh.vertex(e.vertices[0]), view.mesh.vertex(e.vertices[1]));
        let m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
        let j0 = dof_value(v, e.plus[0]) - dof_value(v, e.minus[0]);
        let j1 = dof_value(v, e.plus[1]) - dof_value(v, e.minus[1]);
        let a = e.normal_axis.index();
        let f = |x: [f64; 2]| phi.eval(x)[a];
        jump_term.add(e.length / 6.0 * (j0 * f(p) + 2.0 * (j0 + j1) * f(m) + j1 * f(q)));
    }
    let (div_term, grad_term, jump_term) = (div_term.value(), grad_term.value(), jump_term.value());
    let absolute = (div_term + grad_term + jump_term).abs();
    let scale = div_term.abs() + grad_term.abs() + jump_term.abs();
    Ok(GreenDefect { absolute, relative: if scale == 0.0 { 0.0 } else { absolute / scale } })
}

/// Galerkin orthogonality of `ũ_L − ũ_K` to the level-`K` space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GalerkinCheck {
    /// `max_i |a(ũ_L − ũ_K, φ_i)| / (‖ũ_L − ũ_K‖ ‖φ_i‖)` over level-`K` basis functions.
    pub orthogonality: f64,
    /// `|a(ũ_L,ũ_L) − a(ũ_K,ũ_K) − a(ũ_L−ũ_K,ũ_L−ũ_K)| / a(ũ_L,ũ_L)`.
    pub pythagoras: f64,
}

pub fn galerkin_orthogonality_check(h: &Hierarchy, coarse: &[f64], k: u32, fine: &[f64], l: u32) -> Result<GalerkinCheck> {
    if l < k {
        return Err(Error::InvalidLevel(format!("Galerkin check needs L >= K, got K = {k}, L = {l}")));
    }
    let up = h.prolong(coarse, k, l)?;
    let m = &h.energy(l).matrix;
    let d = sub(fine, &up);
    let md = m.mul_vec(&d)?;
    let dd: f64 = d.iter().zip(&md).map(|(a, b)| a * b).sum();
    let mut y = md;
    for j in (k..l).rev() {
        y = h.prolongation(j).mul_vec_transpose(&y)?;
    }
    let mk = &h.energy(k).matrix;
    let orthogonality = if dd <= 0.0 {
        0.0
    } else {
        let dn = dd.sqrt();
        y.iter().enumerate().map(|(i, yi)| yi.abs() / (dn * mk.get(i, i).sqrt())).fold(0.0, f64::max)
    };
    let ff = m.quadratic_form(fine);
    let pythagoras = if ff == 0.0 { 0.0 } else { (ff - m.quadratic_form(&up) - dd).abs() / ff };
    Ok(GalerkinCheck { orthogonality, pythagoras })
}

/// Relative change of `‖v‖²` when `v` is prolonged from level `from` to `to`.
pub fn prolongation_isometry_defect(h: &Hierarchy, v: &[f64], from: u32, to: u32) -> Result<f64> {
    let before = h.norm(from).quadratic_form(v);
    let after = h.norm(to).quadratic_form(&h.prolong(v, from, to)?);
    Ok(if before == 0.0 { after.abs() } else { (after - before).abs() / before })
}

/// `‖f‖_{L²(Q)}` by the edge-midpoint rule (exact for affine `f`).
pub fn source_l2_norm(mesh: &Triangulation, f: &Source) -> f64 {
    let mut s = 0.0;
    for t in 0..mesh.triangle_count() as u32 {
        let c = mesh.triangle_coords(t);
        let w = triangle_area(&c) / 3.0;
        for l in 0..3 {
            let (p, q) = (c[l], c[(l + 1) % 3]);
            s += w * f.eval([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]).powi(2);
        }
    }
    s.sqrt()
}

/// `‖ũ_K‖ ≤ C₀ 𝔞⁻¹ ‖f‖_{L²(Q)}`.
pub fn stability_check(h: &Hierarchy, k: u32, u: &[f64]) -> Result<InequalityCheck> {
    if u.len() != h.dofmap(k).total_dofs() {
        return Err(Error::DimensionMismatch { expected: h.dofmap(k).total_dofs(), actual: u.len() });
    }
    let form = h.form();
    let bound = poincare_constant(form.c) / form.lower_bound() * source_l2_norm(h.mesh(k), h.source());
    Ok(InequalityCheck { lhs: h.norm(k).quadratic_form(u).max(0.0).sqrt(), rhs: bound })
}

/// `𝔞 vᵀNv ≤ vᵀMv` and `vᵀMv ≤ 𝔄 vᵀNv`.
pub fn coercivity_sandwich(form: &EnergyForm, m: &CsrMatrix, n: &CsrMatrix, v: &[f64]) -> [InequalityCheck; 2] {
    let (vm, vn) = (m.quadratic_form(v), n.quadratic_form(v));
    [InequalityCheck { lhs: form.lower_bound() * vn, rhs: vm }, InequalityCheck { lhs: vm, rhs: form.upper_bound() * vn }]
}

/// Broken function with coefficients uniform in `[−1, 1]`.
pub fn random_broken_function<R: Rng>(rng: &mut R, dofs: usize) -> Vec<f64> {
    (0..dofs).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Segment with both endpoints uniform in the open unit square.
pub fn random_segment<R: Rng>(rng: &mut R) -> ([f64; 2], [f64; 2]) {
    let mut p = || [rng.gen_range(1e-9..1.0), rng.gen_range(1e-9..1.0)];
    (p(), p())
}

/// Configuration of the randomized property suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropertySuiteConfig {
    /// Draws per randomized check, spread over the levels.
    pub samples: usize,
    pub seed: u64,
    /// Highest level used by the checks.
    pub max_level: u32,
}

impl Default for PropertySuiteConfig {
    fn default() -> Self {
        PropertySuiteConfig { samples: 1000, seed: 2018, max_level: 5 }
    }
}

/// Worst observed value of one check against its threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyOutcome {
    pub check: String,
    pub seed: u64,
    pub samples: usize,
    pub worst: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl PropertyOutcome {
    fn new(check: &str, seed: u64, samples: usize, worst: f64, threshold: f64) -> Self {
        PropertyOutcome { check: check.into(), seed, samples, worst, threshold, pass: worst <= threshold }
    }
}

/// Runs every property check on levels `1..=min(cfg.max_level, K)` of `h`.
/// `references[k-1]` holds `ũ_k`; missing ones are computed.
pub fn run_property_suite(h: &Hierarchy, references: Option<&[Vec<f64>]>, cfg: &PropertySuiteConfig) -> Result<Vec<PropertyOutcome>> {
    let top = cfg.max_level.min(h.max_level());
    if top == 0 {
        return Err(Error::InvalidLevel("property suite needs at least one level".into()));
    }
    let computed;
    let refs: &[Vec<f64>] = match references {
        Some(r) if r.len() >= top as usize => r,
        _ => {
            computed = (1..=top)
                .map(|k| solve_reference(&h.energy(k).matrix, h.load(k), &ReferenceOptions::default()))
                .collect::<Result<Vec<_>>>()?;
            &computed
        }
    };
    let form = h.form();
    let seed = cfg.seed;
    let level_of = |i: usize| 1 + (i as u32 % top);
    let mut out = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut additivity, mut poincare, mut sandwich) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..cfg.samples {
        let k = level_of(i);
        let v = random_broken_function(&mut rng, h.dofmap(k).total_dofs());
        let b = norm_breakdown(&h.view(k), form, &v)?;
        let q = h.norm(k).quadratic_form(&v);
        let parts = b.gradient + b.jumps.iter().sum::<f64>();
        additivity = additivity.max((b.total - q).abs() / q).max((b.total - parts).abs() / b.total);
        poincare = poincare.max(poincare_check(&h.view(k), form, &v)?.ratio());
        for c in coercivity_sandwich(form, &h.energy(k).matrix, &h.norm(k).matrix, &v) {
            sandwich = sandwich.max(c.ratio());
        }
    }
    out.push(PropertyOutcome::new("norm_additivity", seed, cfg.samples, additivity, 1e-12));
    out.push(PropertyOutcome::new("poincare", seed, cfg.samples, poincare, 1.0));
    out.push(PropertyOutcome::new("coercivity_sandwich", seed, cfg.samples, sandwich, 1.0 + 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let probes: Vec<SegmentProbe<'_>> = (1..=top).map(|k| SegmentProbe::new(h.view(k))).collect();
    let mut fundamental = 0.0f64;
    for i in 0..cfg.samples {
        let k = level_of(i);
        let v = random_broken_function(&mut rng, h.dofmap(k).total_dofs());
        let check = loop {
            let (x, y) = random_segment(&mut rng);
            match probes[k as usize - 1].fundamental_estimate(form, &v, x, y) {
                Err(Error::DegenerateSegment(_)) => continue,
                r => break r?,
            }
        };
        fundamental = fundamental.max(check.ratio());
    }
    out.push(PropertyOutcome::new("fundamental_estimate", seed.wrapping_add(1), cfg.samples, fundamental, 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut green = 0.0f64;
    for i in 0..cfg.samples {
        let k = level_of(i);
        let v = random_broken_function(&mut rng, h.dofmap(k).total_dofs());
        let phi = QuadraticField::random(&mut rng);
        green = green.max(green_identity_check(&h.view(k), &v, &phi)?.relative);
    }
    out.push(PropertyOutcome::new("green_identity", seed.wrapping_add(2), cfg.samples, green, 1e-12));

    let symmetric = (1..=top).all(|k| h.energy(k).matrix.is_symmetric() && h.norm(k).matrix.is_symmetric());
    out.push(PropertyOutcome::new("symmetry", seed, top as usize, if symmetric { 0.0 } else { 1.0 }, 0.0));
    let spd_top = top.min(4);
    let spd = (1..=spd_top).all(|k| SparseCholesky::factor(&h.energy(k).matrix).is_ok());
    out.push(PropertyOutcome::new("positive_definite", seed, spd_top as usize, if spd { 0.0 } else { 1.0 }, 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let mut isometry = 0.0f64;
    let draws = if top > 1 { cfg.samples.min(100) } else { 0 };
    for i in 0..draws {
        let k = 1 + (i as u32 % (top - 1));
        let v = random_broken_function(&mut rng, h.dofmap(k).total_dofs());
        isometry = isometry.max(prolongation_isometry_defect(h, &v, k, top)?);
    }
    out.push(PropertyOutcome::new("prolongation_isometry", seed.wrapping_add(3), draws, isometry, 1e-12));

    let (mut orth, mut pyth) = (0.0f64, 0.0f64);
    for k in 1..top {
        for l in k + 1..=top {
            let g = galerkin_orthogonality_check(h, &refs[k as usize - 1], k, &refs[l as usize - 1], l)?;
            orth = orth.max(g.orthogonality);
            pyth = pyth.max(g.pythagoras);
        }
    }
    let pairs = (top as usize * (top as usize - 1)) / 2;
    out.push(PropertyOutcome::new("galerkin_orthogonality", seed, pairs, orth, 1e-10));
    out.push(PropertyOutcome::new("galerkin_pythagoras", seed, pairs, pyth, 1e-10));

    let mut stability = 0.0f64;
    for k in 1..=top {
        stability = stability.max(stability_check(h, k, &refs[k as usize - 1])?.ratio());
    }
    out.push(PropertyOutcome::new("stability", seed, top as usize, stability, 1.0));

    let oracle_top = top.min(2);
    let mut oracle = 0.0f64;
    for k in 1..=oracle_top {
        let m = &h.energy(k).matrix;
        let dense = dense_solve(m, h.load(k))?;
        let scale = m.quadratic_form(&dense).sqrt();
        let diff = error_norm(m, &refs[k as usize - 1], &dense);
        oracle = oracle.max(if scale == 0.0 { diff } else { diff / scale });
    }
    out.push(PropertyOutcome::new("dense_oracle", seed, oracle_top as usize, oracle, 1e-10));
    Ok(out)
}

/// `K,e_K,fit_factor` with a schema comment line.
pub fn write_convergence_csv<W: Write>(study: &ConvergenceStudy, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# schema: convergence v1")?;
    writeln!(w, "K,e_K,fit_factor")?;
    for (k, e) in study.levels.iter().zip(&study.errors) {
        writeln!(w, "{k},{e:.12e},{:.12e}", study.fit_factor)?;
    }
    Ok(())
}

/// `check,seed,worst_ratio,pass` with a schema comment line.
pub fn write_property_csv<W: Write>(outcomes: &[PropertyOutcome], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# schema: properties v1")?;
    writeln!(w, "check,seed,worst_ratio,pass")?;
    for o in outcomes {
        writeln!(w, "{},{},{:.12e},{}", o.check, o.seed, o.worst, o.pass)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Coefficient;
    use crate::geometry::{build_cantor_network, build_layered_network, LayeredNetworkConfig};

    fn cantor(k: u32) -> Hierarchy {
        Hierarchy::build(build_cantor_network(k), 0.5, EnergyForm::default(), Source::Constant(1.0), k).unwrap()
    }

    #[test]
    fn breakdown_matches_norm_matrix() {
        let h = cantor(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 1..=3 {
            let v = random_broken_function(&mut rng, h.dofmap(k).total_dofs());
            let b = norm_breakdown(&h.view(k), h.form(), &v).unwrap();
            let q = h.norm(k).quadratic_form(&v);
            assert!((b.total - q).abs() <= 1e-12 * q);
            assert_eq!(b.jumps.len(), k as usize);
            assert!(b.jumps.iter().all(|&j| j > 0.0));
        }
        let zero = norm_breakdown(&h.view(2), h.form(), &vec![0.0; h.dofmap(2).total_dofs()]).unwrap();
        assert_eq!((zero.total, zero.l2), (0.0, 0.0));
    }

    #[test]
    fn continuous_samples_have_no_jumps() {
        let h = cantor(3);
        let view = h.view(3);
        let v = view.dofmap.interpolate(view.mesh, |_, p| p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]));
        let b = norm_breakdown(&view, h.form(), &v).unwrap();
        assert!(b.jumps.iter().all(|&j| j == 0.0));
    }

    #[test]
    fn l2_part_matches_midpoint_quadrature() {
        // oracle: edge-midpoint rule, exact for the quadratic v²
        let h = cantor(2);
        let view = h.view(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_broken_function(&mut rng, view.dofmap.total_dofs());
        let mut oracle = 0.0;
        for t in 0..view.mesh.triangle_count() as u32 {
            let c = view.mesh.triangle_coords(t);
            let u = corner_values(&view, &v, t);
            for l in 0..3 {
                oracle += triangle_area(&c) / 3.0 * (0.5 * (u[l] + u[(l + 1) % 3])).powi(2);
            }
        }
        let b = norm_breakdown(&view, h.form(), &v).unwrap();
        assert!((b.l2 - oracle).abs() < 1e-14 * oracle);
    }

    #[test]
    fn energy_minimized_at_solution() {
        let h = cantor(3);
        let m = &h.energy(3).matrix;
        let b = h.load(3);
        let u = solve_reference(m, b, &ReferenceOptions::default()).unwrap();
        let e = energy_value(&u, m, b);
        let bu: f64 = b.iter().zip(&u).map(|(x, y)| x * y).sum();
        assert!((e + 0.5 * bu).abs() < 1e-12 * bu.abs());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = random_broken_function(&mut rng, u.len());
            let t: f64 = rng.gen_range(-1.0..1.0);
            let p: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + t * b).collect();
            assert!(e <= energy_value(&p, m, b));
        }
        assert_eq!(energy_value(&vec![0.0; u.len()], m, b), 0.0);
    }

    #[test]
    fn geometric_fit_recovers_factor() {
        let levels = [1, 2, 3, 4];
        let values: Vec<f64> = levels.iter().map(|&k| 3.0 * 0.5f64.powi(k as i32)).collect();
        let fit = fit_geometric_factor(&levels, &values).unwrap();
        assert!((fit.factor - 0.5).abs() < 1e-14 && fit.residual < 1e-14);
        assert!(fit_geometric_factor(&[1], &[1.0]).is_none());
    }

    #[test]
    fn poincare_constant_on_unit_square() {
        assert!((poincare_constant(1.0) - 4.0).abs() < 1e-14);
        let h = cantor(2);
        let c = poincare_check(&h.view(2), h.form(), &vec![0.0; h.dofmap(2).total_dofs()]).unwrap();
        assert!(c.holds() && c.ratio() == 0.0);
    }

    #[test]
    fn segment_walk_reproduces_increment() {
        for h in [cantor(4), Hierarchy::build(build_layered_network(&LayeredNetworkConfig::default(), 2).unwrap(), 1.0 / 16.0, EnergyForm::default(), Source::Constant(1.0), 2).unwrap()] {
            let k = h.max_level();
            let probe = SegmentProbe::new(h.view(k));
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..50 {
                let v = random_broken_function(&mut rng, h.dofmap(k).total_dofs());
                let (x, y) = random_segment(&mut rng);
                let w = probe.walk(h.form(), &v, x, y).unwrap();
                assert!((w.end - w.start - w.increment).abs() < 1e-11, "{} vs {}", w.end - w.start, w.increment);
            }
        }
    }

    #[test]
    fn continuous_function_satisfies_cauchy_schwarz() {
        let h = cantor(3);
        let view = h.view(3);
        let v = view.dofmap.interpolate(view.mesh, |_, p| p[0] * (1.0 - p[0]) * (1.0 + p[1]) * (1.0 - p[1]));
        let probe = SegmentProbe::new(view);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (x, y) = random_segment(&mut rng);
            let w = probe.walk(h.form(), &v, x, y).unwrap();
            assert!(w.weighted_jumps < 1e-24);
            // no jumps: the factor 1 + 1/c is pure slack over Cauchy–Schwarz
            let c = probe.fundamental_estimate(h.form(), &v, x, y).unwrap();
            assert!(c.ratio() <= 0.5 + 1e-12);
        }
        assert!(matches!(probe.fundamental_estimate(h.form(), &v, [0.0, 0.3], [0.2, 0.2]), Err(Error::DegenerateSegment(_))));
        assert!(matches!(probe.fundamental_estimate(h.form(), &v, [0.1, 0.1], [0.3, 0.3]), Err(Error::DegenerateSegment(_))));
        let zero = vec![0.0; v.len()];
        assert_eq!(probe.fundamental_estimate(h.form(), &zero, [0.11, 0.23], [0.71, 0.52]).unwrap().ratio(), 0.0);
    }

    #[test]
    fn green_identity_for_continuous_and_broken() {
        let h = cantor(3);
        let view = h.view(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_broken_function(&mut rng, view.dofmap.total_dofs());
        assert_eq!(green_identity_check(&view, &v, &QuadraticField::default()).unwrap().absolute, 0.0);
        let zero = vec![0.0; v.len()];
        assert_eq!(green_identity_check(&view, &zero, &QuadraticField::random(&mut rng)).unwrap().absolute, 0.0);
        for _ in 0..10 {
            let phi = QuadraticField::random(&mut rng);
            let d = green_identity_check(&view, &v, &phi).unwrap();
            assert!(d.relative < 1e-12, "{d:?}");
        }
        let d = green_identity_check(&view, &v, &QuadraticField::constant([1.0, -0.5])).unwrap();
        assert!(d.relative < 1e-12);
    }

    #[test]
    fn galerkin_orthogonality_on_cantor() {
        let h = cantor(3);
        let refs = h.reference_solutions(&ReferenceOptions::default()).unwrap();
        let g = galerkin_orthogonality_check(&h, &refs[1], 2, &refs[2], 3).unwrap();
        assert!(g.orthogonality < 1e-10 && g.pythagoras < 1e-10, "{g:?}");
        let same = galerkin_orthogonality_check(&h, &refs[2], 3, &refs[2], 3).unwrap();
        assert_eq!(same.orthogonality, 0.0);
        for k in 1..=3 {
            assert!(stability_check(&h, k, &refs[k as usize - 1]).unwrap().holds());
        }
    }

    #[test]
    fn sandwich_with_varying_coefficient() {
        let form = EnergyForm::new(1.0, Coefficient::PerLevel(vec![0.5, 2.0, 1.5])).unwrap();
        let h = Hierarchy::build(build_cantor_network(3), 0.5, form, Source::Constant(1.0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let v = random_broken_function(&mut rng, h.dofmap(3).total_dofs());
            for c in coercivity_sandwich(h.form(), &h.energy(3).matrix, &h.norm(3).matrix, &v) {
                assert!(c.holds());
            }
        }
    }

    #[test]
    fn small_property_suite_passes() {
        let h = cantor(3);
        let cfg = PropertySuiteConfig { samples: 60, seed: 1, max_level: 3 };
        let out = run_property_suite(&h, None, &cfg).unwrap();
        for o in &out {
            assert!(o.pass, "{o:?}");
        }
        let mut buf = Vec::new();
        write_property_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# schema: properties v1\ncheck,seed,worst_ratio,pass\n"));
    }
}
