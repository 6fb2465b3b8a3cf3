//! Assembly of the broken energy form, the norm form and the load vector.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::InterfaceNetwork;
use crate::mesh::{BrokenDofMap, Triangulation, NONE};
use crate::sparse::CsrMatrix;

/// Interface coefficient `A` in the jump term.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// `A` constant on each `Γ_k`; entry `k-1` holds the value for level `k`.
    PerLevel(Vec<f64>),
    /// `A(level, point)` with declared bounds `[lower, upper]`.
    Field {
        f: Arc<dyn Fn(u32, [f64; 2]) -> f64 + Send + Sync>,
        lower: f64,
        upper: f64,
    },
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(a) => write!(f, "Constant({a})"),
            Coefficient::PerLevel(v) => write!(f, "PerLevel({v:?})"),
            Coefficient::Field { lower, upper, .. } => write!(f, "Field([{lower}, {upper}])"),
        }
    }
}

impl Coefficient {
    /// Declared range of `A`.
    fn range(&self) -> (f64, f64) {
        match self {
            Coefficient::Constant(a) => (*a, *a),
            Coefficient::PerLevel(v) => (
                v.iter().cloned().fold(f64::INFINITY, f64::min),
                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ),
            Coefficient::Field { lower, upper, .. } => (*lower, *upper),
        }
    }

    fn value(&self, level: u32, p: [f64; 2]) -> Result<f64> {
        match self {
            Coefficient::Constant(a) => Ok(*a),
            Coefficient::PerLevel(v) => v.get(level as usize - 1).copied().ok_or(Error::MissingWeight(level)),
            Coefficient::Field { f, lower, upper } => {
                let a = f(level, p);
                if !(a >= *lower && a <= *upper) {
                    return Err(Error::CoefficientOutOfBounds { value: a, lower: *lower, upper: *upper });
                }
                Ok(a)
            }
        }
    }
}

/// The symmetric form `a_K(v, w) = ∫ ∇v·∇w + Σ_k (1+c)^k C_k ∫_{Γ_k} A [v][w]`.
#[derive(Clone, Debug)]
pub struct EnergyForm {
    pub c: f64,
    pub coefficient: Coefficient,
}

impl Default for EnergyForm {
    fn default() -> Self {
        EnergyForm { c: 1.0, coefficient: Coefficient::Constant(1.0) }
    }
}

impl EnergyForm {
    pub fn new(c: f64, coefficient: Coefficient) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::CoefficientOutOfBounds { value: c, lower: 0.0, upper: f64::INFINITY });
        }
        let (lo, hi) = coefficient.range();
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::CoefficientOutOfBounds { value: lo, lower: 0.0, upper: f64::INFINITY });
        }
        Ok(EnergyForm { c, coefficient })
    }

    /// The norm form (`A ≡ 1`) with the same material constant.
    pub fn norm(&self) -> EnergyForm {
        EnergyForm { c: self.c, coefficient: Coefficient::Constant(1.0) }
    }

    /// Coercivity constant `min(1, inf A)`.
    pub fn lower_bound(&self) -> f64 {
        self.coefficient.range().0.min(1.0)
    }

    /// Boundedness constant `max(1, sup A)`.
    pub fn upper_bound(&self) -> f64 {
        self.coefficient.range().1.max(1.0)
    }

    /// `(1+c)^k C_k`.
    pub fn weight(&self, k: u32, net: &InterfaceNetwork) -> f64 {
        (1.0 + self.c).powi(k as i32) * net.crossing_constant(k) as f64
    }

    pub fn is_unit(&self) -> bool {
        matches!(self.coefficient, Coefficient::Constant(a) if a == 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormKind {
    Energy,
    Norm,
}

/// Assembled symmetric operator with full (both triangles) storage.
#[derive(Clone, Debug)]
pub struct SymmetricSparseOperator {
    pub matrix: CsrMatrix,
    pub level: u32,
    pub kind: FormKind,
}

impl SymmetricSparseOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.matrix.mul_vec(v)
    }

    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.matrix.quadratic_form(v)
    }
}

/// Exact P1 stiffness `∫_T ∇φ_i·∇φ_j`.
pub fn local_stiffness_kernel(c: [[f64; 2]; 3]) -> Result<[[f64; 3]; 3]> {
    let e = [
        [c[2][0] - c[1][0], c[2][1] - c[1][1]],
        [c[0][0] - c[2][0], c[0][1] - c[2][1]],
        [c[1][0] - c[0][0], c[1][1] - c[0][1]],
    ];
    let twice_area = e[2][0] * (-e[1][1]) - (-e[1][0]) * e[2][1];
    let scale = c.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    if twice_area.abs() <= 1e-14 * scale * scale {
        return Err(Error::DegenerateTriangle(c));
    }
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            // grad φ_i is the rotated opposite edge over 2|T|
            k[i][j] = (e[i][0] * e[j][0] + e[i][1] * e[j][1]) / (2.0 * twice_area.abs());
        }
    }
    Ok(k)
}

/// `w A ∫_e [v][w]` for linear traces on an edge of length `L`, ordered
/// `(plus_1, plus_2, minus_1, minus_2)`.
pub fn local_jump_kernel(length: f64, weight: f64, a: f64) -> [[f64; 4]; 4] {
    let s = weight * a * length / 6.0;
    let base = [[2.0, 1.0, -2.0, -1.0], [1.0, 2.0, -1.0, -2.0], [-2.0, -1.0, 2.0, 1.0], [-1.0, -2.0, 1.0, 2.0]];
    base.map(|r| r.map(|x| s * x))
}

/// Assembles `a_K` (or the norm form when `kind == Norm`) over `dofmap`.
pub fn assemble_system(
    t: &Triangulation,
    dofmap: &BrokenDofMap,
    net: &InterfaceNetwork,
    form: &EnergyForm,
    kind: FormKind,
) -> Result<SymmetricSparseOperator> {
    let n = dofmap.total_dofs();
    let mut trip = Vec::with_capacity(9 * t.triangle_count() + 16 * dofmap.interface_edges().len());
    for tr in 0..t.triangle_count() as u32 {
        let k = local_stiffness_kernel(t.triangle_coords(tr))?;
        let d = dofmap.triangle_dofs(tr);
        for i in 0..3 {
            if d[i] == NONE {
                continue;
            }
            check_index(d[i], n)?;
            for j in 0..3 {
                if d[j] != NONE {
                    trip.push((d[i], d[j], k[i][j]));
                }
            }
        }
    }
    for e in dofmap.interface_edges() {
        let a = match kind {
            FormKind::Norm => 1.0,
            FormKind::Energy => {
                let p = t.vertex(e.vertices[0]);
                let q = t.vertex(e.vertices[1]);
                form.coefficient.value(e.level, [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0])?
            }
        };
        let w = form.weight(e.level, net);
        let kern = local_jump_kernel(e.length, w, a);
        let d = [e.plus[0], e.plus[1], e.minus[0], e.minus[1]];
        for i in 0..4 {
            if d[i] == NONE {
                continue;
            }
            check_index(d[i], n)?;
            for j in 0..4 {
                if d[j] != NONE {
                    trip.push((d[i], d[j], kern[i][j]));
                }
            }
        }
    }
    Ok(SymmetricSparseOperator { matrix: CsrMatrix::from_triplets(n, n, trip), level: dofmap.level(), kind })
}

fn check_index(d: u32, n: usize) -> Result<()> {
    if d as usize >= n {
        return Err(Error::DimensionMismatch { expected: n, actual: d as usize + 1 });
    }
    Ok(())
}

/// Right-hand side `f` of the load functional `ℓ(v) = ∫ f v`.
#[derive(Clone)]
pub enum Source {
    Constant(f64),
    /// `a + b x + c y`.
    Affine([f64; 3]),
    Callback(Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Constant(a) => write!(f, "Constant({a})"),
            Source::Affine(c) => write!(f, "Affine({c:?})"),
            Source::Callback(_) => write!(f, "Callback"),
        }
    }
}

impl Source {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match self {
            Source::Constant(a) => *a,
            Source::Affine([a, b, c]) => a + b * p[0] + c * p[1],
            Source::Callback(f) => f(p),
        }
    }

    pub fn scaled(&self, s: f64) -> Source {
        match self {
            Source::Constant(a) => Source::Constant(s * a),
            Source::Affine(c) => Source::Affine(c.map(|x| s * x)),
            Source::Callback(f) => {
                let f = f.clone();
                Source::Callback(Arc::new(move |p| s * f(p)))
            }
        }
    }
}

/// `ℓ(φ_i) = ∫_Q f φ_i`; closed form for constants, edge-midpoint rule
/// (exact for quadratic integrands) otherwise.
pub fn assemble_load(t: &Triangulation, dofmap: &BrokenDofMap, f: &Source) -> Vec<f64> {
    let mut b = vec![0.0; dofmap.total_dofs()];
    for tr in 0..t.triangle_count() as u32 {
        let c = t.triangle_coords(tr);
        let area = triangle_area(&c);
        let d = dofmap.triangle_dofs(tr);
        let local = match f {
            Source::Constant(a) => [a * area / 3.0; 3],
            _ => {
                // midpoint m_l of edge (l, l+1); φ_i is 1/2 at the two
                // midpoints of edges touching corner i
                let m: Vec<f64> = (0..3)
                    .map(|l| {
                        let (p, q) = (c[l], c[(l + 1) % 3]);
                        f.eval([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0])
                    })
                    .collect();
                [0, 1, 2].map(|i| area / 3.0 * 0.5 * (m[i] + m[(i + 2) % 3]))
            }
        };
        for i in 0..3 {
            if d[i] != NONE {
                b[d[i] as usize] += local[i];
            }
        }
    }
    b
}

pub(crate) fn triangle_area(c: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1])).abs()
}

/// Matrix Market coordinate format, `symmetric` (lower triangle stored).
pub fn write_matrix_market<W: Write>(op: &SymmetricSparseOperator, mut w: W) -> std::io::Result<()> {
    let lower: Vec<_> = op.matrix.triplets().filter(|&(i, j, _)| j <= i).collect();
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(w, "% level {} form {:?}", op.level, op.kind)?;
    writeln!(w, "{} {} {}", op.dim(), op.dim(), lower.len())?;
    for (i, j, v) in lower {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

/// Load vector as CSV `dof_id,value`.
pub fn write_vector_csv<W: Write>(v: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# schema: vector v1")?;
    writeln!(w, "dof_id,value")?;
    for (i, x) in v.iter().enumerate() {
        writeln!(w, "{i},{x:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cantor_network, compute_cell_partition};
    use crate::mesh::{build_broken_dof_map, build_initial_triangulation, refine_uniform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn right_triangle_stiffness() {
        for h in [1.0, 0.25, 1e-3] {
            let k = local_stiffness_kernel([[0.0, 0.0], [h, 0.0], [0.0, h]]).unwrap();
            let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
            for i in 0..3 {
                for j in 0..3 {
                    assert!((k[i][j] - expect[i][j]).abs() < 1e-14);
                }
            }
        }
        assert!(matches!(
            local_stiffness_kernel([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]),
            Err(Error::DegenerateTriangle(_))
        ));
    }

    #[test]
    fn stiffness_matches_gradient_integration() {
        // oracle: gradients from solving the 2x2 barycentric system directly
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let Ok(k) = local_stiffness_kernel(c) else { continue };
            let (a, b, cc, d) = (c[1][0] - c[0][0], c[2][0] - c[0][0], c[1][1] - c[0][1], c[2][1] - c[0][1]);
            let det = a * d - b * cc;
            // inverse transpose of [[a, b], [cc, d]] maps reference gradients
            let g1 = [d / det, -b / det];
            let g2 = [-cc / det, a / det];
            let g = [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2];
            let area = det.abs() / 2.0;
            for i in 0..3 {
                assert!(k[i].iter().sum::<f64>().abs() < 1e-10);
                for j in 0..3 {
                    let ex = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    assert!((k[i][j] - ex).abs() < 1e-9 * (1.0 + ex.abs()));
                }
            }
        }
    }

    #[test]
    fn jump_kernel_properties() {
        let k = local_jump_kernel(0.5, 1.0, 1.0);
        let v = [1.0, 1.0, 0.0, 0.0];
        let e: f64 = (0..4).map(|i| (0..4).map(|j| v[i] * k[i][j] * v[j]).sum::<f64>()).sum();
        assert!((e - 0.5).abs() < 1e-15);
        let same = [0.3, -0.7, 0.3, -0.7];
        let z: f64 = (0..4).map(|i| (0..4).map(|j| same[i] * k[i][j] * same[j]).sum::<f64>()).sum();
        assert_eq!(z, 0.0);
    }

    fn cantor_level(k: u32) -> (Triangulation, BrokenDofMap, crate::geometry::InterfaceNetwork) {
        let net = build_cantor_network(k.max(1));
        let mut t = build_initial_triangulation(0.5).unwrap();
        for _ in 1..k.max(1) {
            t = refine_uniform(&t);
        }
        let d = build_broken_dof_map(&t, &compute_cell_partition(&net, k).unwrap(), &net).unwrap();
        (t, d, net)
    }

    #[test]
    fn quadratic_form_matches_elementwise_sum() {
        let (t, d, net) = cantor_level(3);
        let form = EnergyForm::default();
        let m = assemble_system(&t, &d, &net, &form, FormKind::Energy).unwrap();
        assert!(m.matrix.is_symmetric());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..d.total_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let value = |i: u32| if i == NONE { 0.0 } else { v[i as usize] };
        // oracle: per-triangle gradient energy plus Simpson on each interface edge
        let mut oracle = 0.0;
        for tr in 0..t.triangle_count() as u32 {
            let c = t.triangle_coords(tr);
            let dd = d.triangle_dofs(tr);
            let u = dd.map(value);
            let (a, b, cc, dt) = (c[1][0] - c[0][0], c[2][0] - c[0][0], c[1][1] - c[0][1], c[2][1] - c[0][1]);
            let det = a * dt - b * cc;
            let (du1, du2) = (u[1] - u[0], u[2] - u[0]);
            let gx = (dt * du1 - cc * du2) / det;
            let gy = (-b * du1 + a * du2) / det;
            oracle += det.abs() / 2.0 * (gx * gx + gy * gy);
        }
        for e in d.interface_edges() {
            let j0 = value(e.plus[0]) - value(e.minus[0]);
            let j1 = value(e.plus[1]) - value(e.minus[1]);
            let jm = 0.5 * (j0 + j1);
            oracle += form.weight(e.level, &net) * e.length / 6.0 * (j0 * j0 + 4.0 * jm * jm + j1 * j1);
        }
        assert!((m.quadratic_form(&v) - oracle).abs() < 1e-10 * oracle);
    }

    #[test]
    fn unit_coefficient_equals_norm_matrix() {
        let (t, d, net) = cantor_level(2);
        let form = EnergyForm::default();
        let a = assemble_system(&t, &d, &net, &form, FormKind::Energy).unwrap();
        let n = assemble_system(&t, &d, &net, &form, FormKind::Norm).unwrap();
        assert_eq!(a.matrix, n.matrix);
    }

    #[test]
    fn level_zero_is_dirichlet_laplacian() {
        let (t, d, net) = cantor_level(0);
        let m = assemble_system(&t, &d, &net, &EnergyForm::default(), FormKind::Energy).unwrap();
        assert_eq!(m.dim(), 1);
        assert!((m.matrix.get(0, 0) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn jump_entries_scale_with_material_constant() {
        let (t, d, net) = cantor_level(2);
        let a1 = assemble_system(&t, &d, &net, &EnergyForm::default(), FormKind::Energy).unwrap();
        let f3 = EnergyForm::new(3.0, Coefficient::Constant(1.0)).unwrap();
        let a3 = assemble_system(&t, &d, &net, &f3, FormKind::Energy).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..d.total_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let val = |i: u32| if i == NONE { 0.0 } else { v[i as usize] };
        let mut grad = 0.0;
        for tr in 0..t.triangle_count() as u32 {
            let k = local_stiffness_kernel(t.triangle_coords(tr)).unwrap();
            let dd = d.triangle_dofs(tr);
            for i in 0..3 {
                for j in 0..3 {
                    grad += val(dd[i]) * k[i][j] * val(dd[j]);
                }
            }
        }
        let mut jumps = [0.0f64; 3];
        for e in d.interface_edges() {
            let kern = local_jump_kernel(e.length, 1.0, 1.0);
            let x = [val(e.plus[0]), val(e.plus[1]), val(e.minus[0]), val(e.minus[1])];
            jumps[e.level as usize] += (0..4).map(|i| (0..4).map(|j| x[i] * kern[i][j] * x[j]).sum::<f64>()).sum::<f64>();
        }
        let expect = |base: f64| grad + (1..=2u32).map(|k| base.powi(k as i32) * net.crossing_constant(k) as f64 * jumps[k as usize]).sum::<f64>();
        let (e1, e3) = (a1.quadratic_form(&v), a3.quadratic_form(&v));
        assert!((e1 - expect(2.0)).abs() < 1e-10 * e1);
        assert!((e3 - expect(4.0)).abs() < 1e-10 * e3);
    }

    #[test]
    fn coefficient_validation() {
        assert!(EnergyForm::new(0.0, Coefficient::Constant(1.0)).is_err());
        let f = EnergyForm::new(1.0, Coefficient::PerLevel(vec![2.0, 0.5])).unwrap();
        assert_eq!((f.lower_bound(), f.upper_bound()), (0.5, 2.0));
        let (t, d, net) = cantor_level(2);
        let short = EnergyForm::new(1.0, Coefficient::PerLevel(vec![2.0])).unwrap();
        assert!(matches!(assemble_system(&t, &d, &net, &short, FormKind::Energy), Err(Error::MissingWeight(2))));
        let bad = EnergyForm::new(1.0, Coefficient::Field { f: Arc::new(|_, _| 5.0), lower: 0.5, upper: 2.0 }).unwrap();
        assert!(matches!(
            assemble_system(&t, &d, &net, &bad, FormKind::Energy),
            Err(Error::CoefficientOutOfBounds { .. })
        ));
    }

    #[test]
    fn load_vectors() {
        let (t, d, _) = cantor_level(0);
        assert_eq!(assemble_load(&t, &d, &Source::Constant(0.0)), vec![0.0]);
        // hat at (1/2,1/2) on the 2x2 mesh: 6 triangles of area 1/8, each contributing area/3
        let b = assemble_load(&t, &d, &Source::Constant(1.0));
        assert!((b[0] - 0.25).abs() < 1e-15);
        let (t, d, _) = cantor_level(3);
        let b1 = assemble_load(&t, &d, &Source::Constant(1.0));
        let b2 = assemble_load(&t, &d, &Source::Affine([1.0, 0.0, 0.0]));
        let b3 = assemble_load(&t, &d, &Source::Callback(Arc::new(|_| 1.0)));
        for i in 0..b1.len() {
            assert!((b1[i] - b2[i]).abs() < 1e-15 && (b1[i] - b3[i]).abs() < 1e-15);
        }
        // sum equals ∫ Σφ_i = 1 - (contribution of boundary hats): oracle via
        // per-triangle count of non-Dirichlet corners
        let oracle: f64 = (0..t.triangle_count() as u32)
            .map(|tr| d.triangle_dofs(tr).iter().filter(|&&x| x != NONE).count() as f64 * triangle_area(&t.triangle_coords(tr)) / 3.0)
            .sum();
        assert!((b1.iter().sum::<f64>() - oracle).abs() < 1e-14);
    }

    #[test]
    fn affine_load_is_exact() {
        // oracle: ∫ (x) φ_i over the six triangles of the centre hat on the 2x2 mesh.
        // By symmetry of the hat about (1/2,1/2), ∫ x φ = 1/2 ∫ φ = 1/8.
        let (t, d, _) = cantor_level(0);
        let b = assemble_load(&t, &d, &Source::Affine([0.0, 1.0, 0.0]));
        assert!((b[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn matrix_market_header() {
        let (t, d, net) = cantor_level(1);
        let m = assemble_system(&t, &d, &net, &EnergyForm::default(), FormKind::Energy).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("%%MatrixMarket matrix coordinate real symmetric"));
        lines.next();
        let dims: Vec<usize> = lines.next().unwrap().split_whitespace().map(|s| s.parse().unwrap()).collect();
        assert_eq!(dims[0], d.total_dofs());
        assert_eq!(lines.count(), dims[2]);
    }
}
