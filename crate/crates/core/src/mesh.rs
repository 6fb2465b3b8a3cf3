//! Nested structured triangulations of the unit square, the broken P1 degree
//! of freedom map, prolongations between levels and multilevel patches.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{Axis, CellPartition, InterfaceFacet, InterfaceNetwork, UnionFind};
use crate::sparse::CsrMatrix;

/// Marker for "no dof" (Dirichlet vertex) and "no triangle" (boundary edge).
pub const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [u32; 2],
    /// Adjacent triangles; the second is [`NONE`] on `∂Q`.
    pub triangles: [u32; 2],
}

/// Uniform triangulation of `Q` by squares of side `2^-grid_exp`, each split
/// along its `(0,0)-(1,1)` diagonal. Vertex coordinates are integers in units
/// of the square side.
#[derive(Clone, Debug)]
pub struct Triangulation {
    level: u32,
    grid_exp: u32,
    vertices: Vec<[i64; 2]>,
    triangles: Vec<[u32; 3]>,
    boundary: Vec<bool>,
    edges: Vec<Edge>,
    triangle_edges: Vec<[u32; 3]>,
    grid_to_vertex: Vec<u32>,
    vertex_tri_ptr: Vec<usize>,
    vertex_tris: Vec<u32>,
    /// Endpoints of the coarse edge each new vertex bisects.
    midpoint_parents: Vec<[u32; 2]>,
    coarse_vertex_count: usize,
}

pub fn build_initial_triangulation(h1: f64) -> Result<Triangulation> {
    if !(h1 > 0.0 && h1 <= 1.0) {
        return Err(Error::NonDyadicMeshSize(h1));
    }
    let p = (-h1.log2()).round();
    if (2f64.powf(-p) - h1).abs() > 0.0 || p > 30.0 {
        return Err(Error::NonDyadicMeshSize(h1));
    }
    let p = p as u32;
    let n = 1i64 << p;
    let mut vertices = Vec::with_capacity(((n + 1) * (n + 1)) as usize);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i, j]);
        }
    }
    let id = |i: i64, j: i64| (j * (n + 1) + i) as u32;
    let mut triangles = Vec::with_capacity((2 * n * n) as usize);
    for j in 0..n {
        for i in 0..n {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Ok(Triangulation::from_parts(1, p, vertices, triangles, Vec::new(), 0))
}

/// Red refinement: triangle `t` has children `4t..4t+4`, old vertices keep
/// their indices and edge midpoints are appended.
pub fn refine_uniform(t: &Triangulation) -> Triangulation {
    let nv = t.vertices.len();
    let mut vertices: Vec<[i64; 2]> = t.vertices.iter().map(|v| [2 * v[0], 2 * v[1]]).collect();
    let mut midpoint_parents = Vec::with_capacity(t.edges.len());
    for e in &t.edges {
        let (a, b) = (vertices[e.vertices[0] as usize], vertices[e.vertices[1] as usize]);
        vertices.push([(a[0] + b[0]) / 2, (a[1] + b[1]) / 2]);
        midpoint_parents.push(e.vertices);
    }
    let mid = |e: u32| nv as u32 + e;
    let mut triangles = Vec::with_capacity(4 * t.triangles.len());
    for (ti, tri) in t.triangles.iter().enumerate() {
        let [a, b, c] = *tri;
        let [eab, ebc, eca] = t.triangle_edges[ti];
        let (mab, mbc, mca) = (mid(eab), mid(ebc), mid(eca));
        triangles.push([a, mab, mca]);
        triangles.push([mab, b, mbc]);
        triangles.push([mca, mbc, c]);
        triangles.push([mab, mbc, mca]);
    }
    Triangulation::from_parts(t.level + 1, t.grid_exp + 1, vertices, triangles, midpoint_parents, nv)
}

impl Triangulation {
    fn from_parts(
        level: u32,
        grid_exp: u32,
        vertices: Vec<[i64; 2]>,
        triangles: Vec<[u32; 3]>,
        midpoint_parents: Vec<[u32; 2]>,
        coarse_vertex_count: usize,
    ) -> Self {
        let n = 1i64 << grid_exp;
        let boundary = vertices.iter().map(|v| v[0] == 0 || v[1] == 0 || v[0] == n || v[1] == n).collect();
        let mut grid_to_vertex = vec![NONE; ((n + 1) * (n + 1)) as usize];
        for (i, v) in vertices.iter().enumerate() {
            grid_to_vertex[(v[1] * (n + 1) + v[0]) as usize] = i as u32;
        }

        let mut half: Vec<(u32, u32, u32, u8)> = Vec::with_capacity(3 * triangles.len());
        for (ti, tri) in triangles.iter().enumerate() {
            for l in 0..3 {
                let (a, b) = (tri[l], tri[(l + 1) % 3]);
                half.push((a.min(b), a.max(b), ti as u32, l as u8));
            }
        }
        half.sort_unstable();
        let mut edges = Vec::with_capacity(half.len() / 2 + n as usize * 2);
        let mut triangle_edges = vec![[NONE; 3]; triangles.len()];
        let mut i = 0;
        while i < half.len() {
            let (a, b, t0, l0) = half[i];
            let mut e = Edge { vertices: [a, b], triangles: [t0, NONE] };
            triangle_edges[t0 as usize][l0 as usize] = edges.len() as u32;
            if i + 1 < half.len() && half[i + 1].0 == a && half[i + 1].1 == b {
                let (_, _, t1, l1) = half[i + 1];
                e.triangles[1] = t1;
                triangle_edges[t1 as usize][l1 as usize] = edges.len() as u32;
                i += 2;
            } else {
                i += 1;
            }
            edges.push(e);
        }

        let mut vertex_tri_ptr = vec![0usize; vertices.len() + 1];
        for tri in &triangles {
            for &v in tri {
                vertex_tri_ptr[v as usize + 1] += 1;
            }
        }
        for v in 0..vertices.len() {
            vertex_tri_ptr[v + 1] += vertex_tri_ptr[v];
        }
        let mut fill = vertex_tri_ptr.clone();
        let mut vertex_tris = vec![0u32; vertex_tri_ptr[vertices.len()]];
        for (ti, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_tris[fill[v as usize]] = ti as u32;
                fill[v as usize] += 1;
            }
        }

        Triangulation {
            level,
            grid_exp,
            vertices,
            triangles,
            boundary,
            edges,
            triangle_edges,
            grid_to_vertex,
            vertex_tri_ptr,
            vertex_tris,
            midpoint_parents,
            coarse_vertex_count,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn grid_exp(&self) -> u32 {
        self.grid_exp
    }

    /// Squares per side.
    pub fn n(&self) -> usize {
        1usize << self.grid_exp
    }

    /// Side of the grid squares (the mesh size `h_K`).
    pub fn h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// Largest triangle diameter, `sqrt(2) h_K`.
    pub fn diameter(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.h()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_grid(&self, v: u32) -> [i64; 2] {
        self.vertices[v as usize]
    }

    pub fn vertex(&self, v: u32) -> [f64; 2] {
        let g = self.vertices[v as usize];
        let h = self.h();
        [g[0] as f64 * h, g[1] as f64 * h]
    }

    pub fn triangle(&self, t: u32) -> [u32; 3] {
        self.triangles[t as usize]
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn triangle_coords(&self, t: u32) -> [[f64; 2]; 3] {
        let tri = self.triangles[t as usize];
        [self.vertex(tri[0]), self.vertex(tri[1]), self.vertex(tri[2])]
    }

    pub fn is_boundary(&self, v: u32) -> bool {
        self.boundary[v as usize]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge ids of triangle `t`; local edge `l` joins corners `l` and `l+1`.
    pub fn triangle_edges(&self, t: u32) -> [u32; 3] {
        self.triangle_edges[t as usize]
    }

    /// Vertex at grid point `(i, j)`.
    pub fn vertex_at(&self, i: i64, j: i64) -> Option<u32> {
        let n = self.n() as i64;
        if !(0..=n).contains(&i) || !(0..=n).contains(&j) {
            return None;
        }
        let v = self.grid_to_vertex[(j * (n + 1) + i) as usize];
        (v != NONE).then_some(v)
    }

    pub fn triangles_around(&self, v: u32) -> &[u32] {
        &self.vertex_tris[self.vertex_tri_ptr[v as usize]..self.vertex_tri_ptr[v as usize + 1]]
    }

    /// Triangle of the previous level containing triangle `t`.
    pub fn parent(&self, t: u32) -> Option<u32> {
        (self.level > 1).then_some(t / 4)
    }

    pub fn children(t: u32) -> std::ops::Range<u32> {
        4 * t..4 * t + 4
    }

    /// For a vertex created by refinement, the coarse edge it bisects.
    pub fn midpoint_parents(&self, v: u32) -> Option<[u32; 2]> {
        (v as usize)
            .checked_sub(self.coarse_vertex_count)
            .and_then(|i| self.midpoint_parents.get(i).copied())
    }

    /// Grid square `(i, j)` containing triangle `t`.
    pub fn square_of(&self, t: u32) -> (usize, usize) {
        let tri = self.triangles[t as usize];
        let i = tri.iter().map(|&v| self.vertices[v as usize][0]).min().unwrap_or(0);
        let j = tri.iter().map(|&v| self.vertices[v as usize][1]).min().unwrap_or(0);
        (i as usize, j as usize)
    }

    /// Triangle containing `p` (closed triangles; ties go to the lower one).
    pub fn locate(&self, p: [f64; 2]) -> Option<u32> {
        if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
            return None;
        }
        let n = self.n();
        let x = p[0] * n as f64;
        let y = p[1] * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let j = (y.floor() as usize).min(n - 1);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let a = self.vertex_at(i as i64, j as i64)?;
        let c = self.vertex_at(i as i64 + 1, j as i64 + 1)?;
        let want_lower = fy <= fx;
        self.triangles_around(a).iter().copied().find(|&t| {
            let tri = self.triangles[t as usize];
            tri.contains(&c) && {
                let b = tri.iter().copied().find(|&v| v != a && v != c).expect("three corners");
                let lower = self.vertices[b as usize][1] == j as i64;
                lower == want_lower
            }
        })
    }
}

/// Outcome of [`check_resolves`]: the facets of `Γ^(K)` that are not unions
/// of mesh edges, as `(level, index within Γ_k)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResolveReport {
    pub violations: Vec<(u32, usize)>,
}

impl ResolveReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Unit mesh edges covered by a facet, in mesh grid coordinates, or `None`
/// if the facet endpoints are not mesh vertices.
fn facet_mesh_edges(f: &InterfaceFacet, net_scale: u32, mesh_exp: u32) -> Option<Vec<([i64; 2], [i64; 2])>> {
    if mesh_exp >= net_scale {
        let up = 1i64 << (mesh_exp - net_scale);
        let g = InterfaceFacet { start: [f.start[0] * up, f.start[1] * up], end: [f.end[0] * up, f.end[1] * up], ..*f };
        g.unit_edges(0)
    } else {
        f.unit_edges(net_scale - mesh_exp)
    }
}

pub fn check_resolves(t: &Triangulation, net: &InterfaceNetwork, k: u32) -> ResolveReport {
    let mut violations = Vec::new();
    for level in 1..=k.min(net.max_level()) {
        for (i, f) in net.facets(level).iter().enumerate() {
            if facet_mesh_edges(f, net.scale_exp(), t.grid_exp()).is_none() {
                violations.push((level, i));
            }
        }
    }
    ResolveReport { violations }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dof {
    pub cell: u32,
    pub vertex: u32,
}

/// A mesh edge on `Γ_k` with the dofs of both one-sided traces. `plus`
/// belongs to the side `ν = +e_normal_axis` points into; entries are
/// [`NONE`] at Dirichlet endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceEdge {
    pub level: u32,
    pub edge: u32,
    pub vertices: [u32; 2],
    pub plus: [u32; 2],
    pub minus: [u32; 2],
    pub plus_triangle: u32,
    pub minus_triangle: u32,
    pub length: f64,
    pub normal_axis: Axis,
}

/// Broken P1 space on a triangulation: one dof per (cell, interior vertex).
#[derive(Clone, Debug)]
pub struct BrokenDofMap {
    level: u32,
    dofs: Vec<Dof>,
    triangle_dofs: Vec<[u32; 3]>,
    triangle_cells: Vec<u32>,
    interface_edges: Vec<InterfaceEdge>,
    vertex_dof_ptr: Vec<usize>,
    vertex_dofs: Vec<u32>,
}

pub fn build_broken_dof_map(t: &Triangulation, part: &CellPartition, net: &InterfaceNetwork) -> Result<BrokenDofMap> {
    let k = part.level;
    let report = check_resolves(t, net, k);
    if !report.is_ok() {
        return Err(Error::Unresolved { violations: report.violations.len() });
    }
    if t.grid_exp() < part.grid_exp {
        return Err(Error::Unresolved { violations: usize::MAX });
    }

    let mut iface: HashMap<(u32, u32), (u32, Axis)> = HashMap::new();
    for level in 1..=k {
        for f in net.facets(level) {
            for (a, b) in facet_mesh_edges(f, net.scale_exp(), t.grid_exp()).expect("resolved") {
                let va = t.vertex_at(a[0], a[1]).expect("grid vertex");
                let vb = t.vertex_at(b[0], b[1]).expect("grid vertex");
                iface.insert((va.min(vb), va.max(vb)), (level, f.normal_axis));
            }
        }
    }

    let shift = t.grid_exp() - part.grid_exp;
    let triangle_cells: Vec<u32> = (0..t.triangle_count() as u32)
        .map(|tr| {
            let (i, j) = t.square_of(tr);
            part.label(i >> shift, j >> shift)
        })
        .collect();

    // corner slots 3t + l glued across non-interface interior edges
    let mut uf = UnionFind::new(3 * t.triangle_count());
    let slot = |tr: u32, v: u32| -> usize {
        let tri = t.triangle(tr);
        3 * tr as usize + tri.iter().position(|&x| x == v).expect("vertex of triangle")
    };
    let mut edge_is_interface = vec![false; t.edges().len()];
    for (ei, e) in t.edges().iter().enumerate() {
        if e.triangles[1] == NONE {
            continue;
        }
        let key = (e.vertices[0], e.vertices[1]);
        if iface.contains_key(&key) {
            edge_is_interface[ei] = true;
            continue;
        }
        let [t0, t1] = e.triangles;
        if triangle_cells[t0 as usize] != triangle_cells[t1 as usize] {
            return Err(Error::TriangleStraddlesCells {
                triangle: t0 as usize,
                cells: [triangle_cells[t0 as usize], triangle_cells[t1 as usize]],
            });
        }
        for &v in &e.vertices {
            uf.union(slot(t0, v), slot(t1, v));
        }
    }

    let mut root_dof: HashMap<usize, u32> = HashMap::new();
    let mut dofs = Vec::new();
    let mut triangle_dofs = vec![[NONE; 3]; t.triangle_count()];
    let mut vertex_dof_ptr = vec![0usize; t.vertex_count() + 1];
    let mut vertex_dofs = Vec::new();
    for v in 0..t.vertex_count() as u32 {
        if !t.is_boundary(v) {
            for &tr in t.triangles_around(v) {
                let s = slot(tr, v);
                let root = uf.find(s);
                let d = *root_dof.entry(root).or_insert_with(|| {
                    dofs.push(Dof { cell: triangle_cells[tr as usize], vertex: v });
                    vertex_dofs.push((dofs.len() - 1) as u32);
                    (dofs.len() - 1) as u32
                });
                triangle_dofs[tr as usize][s % 3] = d;
            }
        }
        vertex_dof_ptr[v as usize + 1] = vertex_dofs.len();
    }

    let mut interface_edges = Vec::new();
    for (ei, e) in t.edges().iter().enumerate() {
        if !edge_is_interface[ei] {
            continue;
        }
        let (level, normal_axis) = iface[&(e.vertices[0], e.vertices[1])];
        let centroid = |tr: u32| -> i64 { t.triangle(tr).iter().map(|&v| t.vertex_grid(v)[normal_axis.index()]).sum() };
        let [t0, t1] = e.triangles;
        let (tp, tm) = if centroid(t0) > centroid(t1) { (t0, t1) } else { (t1, t0) };
        let side = |tr: u32| e.vertices.map(|v| triangle_dofs[tr as usize][slot(tr, v) % 3]);
        interface_edges.push(InterfaceEdge {
            level,
            edge: ei as u32,
            vertices: e.vertices,
            plus: side(tp),
            minus: side(tm),
            plus_triangle: tp,
            minus_triangle: tm,
            length: t.h(),
            normal_axis,
        });
    }

    Ok(BrokenDofMap { level: k, dofs, triangle_dofs, triangle_cells, interface_edges, vertex_dof_ptr, vertex_dofs })
}

impl BrokenDofMap {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn total_dofs(&self) -> usize {
        self.dofs.len()
    }

    pub fn dofs(&self) -> &[Dof] {
        &self.dofs
    }

    /// Dof of each triangle corner ([`NONE`] on `∂Q`).
    pub fn triangle_dofs(&self, t: u32) -> [u32; 3] {
        self.triangle_dofs[t as usize]
    }

    pub fn triangle_cell(&self, t: u32) -> u32 {
        self.triangle_cells[t as usize]
    }

    pub fn interface_edges(&self) -> &[InterfaceEdge] {
        &self.interface_edges
    }

    pub fn vertex_dofs(&self, v: u32) -> &[u32] {
        &self.vertex_dofs[self.vertex_dof_ptr[v as usize]..self.vertex_dof_ptr[v as usize + 1]]
    }

    /// Nodal values of a function given per (triangle, corner). Dofs take the
    /// value from the first triangle that references them.
    pub fn interpolate<F: FnMut(u32, [f64; 2]) -> f64>(&self, t: &Triangulation, mut value: F) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.total_dofs()];
        for tr in 0..t.triangle_count() as u32 {
            for (l, &d) in self.triangle_dofs(tr).iter().enumerate() {
                if d != NONE && out[d as usize].is_nan() {
                    out[d as usize] = value(tr, t.vertex(t.triangle(tr)[l]));
                }
            }
        }
        out
    }
}

/// Prolongation `P: S^(k) -> S^(k+1)` by per-cell nodal interpolation.
pub fn build_prolongation(
    fine_t: &Triangulation,
    fine: &BrokenDofMap,
    coarse_t: &Triangulation,
    coarse: &BrokenDofMap,
) -> Result<CsrMatrix> {
    if fine_t.level() != coarse_t.level() + 1 || fine_t.triangle_count() != 4 * coarse_t.triangle_count() {
        return Err(Error::InvalidLevel(format!(
            "prolongation needs consecutive levels, got {} -> {}",
            coarse_t.level(),
            fine_t.level()
        )));
    }
    let mut trip = Vec::with_capacity(2 * fine.total_dofs());
    for (fd, dof) in fine.dofs().iter().enumerate() {
        let v = dof.vertex;
        let tr = fine_t
            .triangles_around(v)
            .iter()
            .copied()
            .find(|&tr| fine.triangle_dofs(tr).contains(&(fd as u32)))
            .expect("dof has a supporting triangle");
        let parent = tr / 4;
        let pc = coarse_t.triangle(parent);
        let pd = coarse.triangle_dofs(parent);
        let coarse_dof = |cv: u32| pd[pc.iter().position(|&x| x == cv).expect("corner of parent")];
        match fine_t.midpoint_parents(v) {
            None => {
                let d = coarse_dof(v);
                if d != NONE {
                    trip.push((fd as u32, d, 1.0));
                }
            }
            Some([a, b]) => {
                for cv in [a, b] {
                    let d = coarse_dof(cv);
                    if d != NONE {
                        trip.push((fd as u32, d, 0.5));
                    }
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.total_dofs(), coarse.total_dofs(), trip))
}

/// A multilevel subspace: the level-k broken functions supported strictly
/// inside the patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub level: u32,
    /// Vertex of the level-(k-1) mesh, `None` for the whole-domain patch.
    pub center: Option<u32>,
    /// Triangles of the level-(k-1) mesh forming the patch.
    pub coarse_triangles: Vec<u32>,
    pub dofs: Vec<u32>,
}

/// Patches of level `k` (1-based): one whole-domain patch for `k = 1`, one
/// per vertex of `𝒯^(k-1)` otherwise. Corner patches made of a single coarse
/// triangle have no interior vertices and therefore an empty dof set.
pub fn enumerate_patches(hierarchy: &[Triangulation], dofmaps: &[BrokenDofMap], k: u32) -> Result<Vec<Patch>> {
    if k == 0 || k as usize > hierarchy.len() || hierarchy.len() != dofmaps.len() {
        return Err(Error::InvalidLevel(format!("patch level {k} outside 1..={}", hierarchy.len())));
    }
    let fine_dofs = &dofmaps[k as usize - 1];
    if k == 1 {
        return Ok(vec![Patch {
            level: 1,
            center: None,
            coarse_triangles: (0..hierarchy[0].triangle_count() as u32).collect(),
            dofs: (0..fine_dofs.total_dofs() as u32).collect(),
        }]);
    }
    let coarse = &hierarchy[k as usize - 2];
    let fine = &hierarchy[k as usize - 1];
    let mut patches = Vec::with_capacity(coarse.vertex_count());
    let mut in_patch = vec![false; coarse.triangle_count()];
    for x in 0..coarse.vertex_count() as u32 {
        let tris = coarse.triangles_around(x).to_vec();
        for &tr in &tris {
            in_patch[tr as usize] = true;
        }
        let mut verts: Vec<u32> = tris.iter().flat_map(|&tr| Triangulation::children(tr)).flat_map(|c| fine.triangle(c)).collect();
        verts.sort_unstable();
        verts.dedup();
        let mut dofs = Vec::new();
        for v in verts {
            if fine.is_boundary(v) {
                continue;
            }
            if fine.triangles_around(v).iter().all(|&c| in_patch[(c / 4) as usize]) {
                dofs.extend_from_slice(fine_dofs.vertex_dofs(v));
            }
        }
        dofs.sort_unstable();
        for &tr in &tris {
            in_patch[tr as usize] = false;
        }
        patches.push(Patch { level: k, center: Some(x), coarse_triangles: tris, dofs });
    }
    Ok(patches)
}

/// VTK legacy ASCII unstructured grid of the mesh with the cell id of every
/// triangle as a scalar field.
pub fn write_mesh_vtk<W: Write>(t: &Triangulation, dofmap: &BrokenDofMap, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "fractal-homog mesh level {}", t.level())?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", t.vertex_count())?;
    for v in 0..t.vertex_count() as u32 {
        let p = t.vertex(v);
        writeln!(w, "{} {} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {} {}", t.triangle_count(), 4 * t.triangle_count())?;
    for tri in t.triangles() {
        writeln!(w, "3 {} {} {}", tri[0], tri[1], tri[2])?;
    }
    writeln!(w, "CELL_TYPES {}", t.triangle_count())?;
    for _ in 0..t.triangle_count() {
        writeln!(w, "5")?;
    }
    writeln!(w, "CELL_DATA {}", t.triangle_count())?;
    writeln!(w, "SCALARS cell_id int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for tr in 0..t.triangle_count() as u32 {
        writeln!(w, "{}", dofmap.triangle_cell(tr))?;
    }
    Ok(())
}

/// Dof table as CSV `dof_id,cell_id,vertex_id,x,y`.
pub fn write_dof_csv<W: Write>(t: &Triangulation, dofmap: &BrokenDofMap, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# schema: dofmap v1")?;
    writeln!(w, "dof_id,cell_id,vertex_id,x,y")?;
    for (i, d) in dofmap.dofs().iter().enumerate() {
        let p = t.vertex(d.vertex);
        writeln!(w, "{},{},{},{},{}", i, d.cell, d.vertex, p[0], p[1])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cantor_network, compute_cell_partition};

    fn hierarchy(h1: f64, levels: u32) -> Vec<Triangulation> {
        let mut out = vec![build_initial_triangulation(h1).unwrap()];
        for _ in 1..levels {
            let next = refine_uniform(out.last().unwrap());
            out.push(next);
        }
        out
    }

    #[test]
    fn initial_counts() {
        let t = build_initial_triangulation(0.5).unwrap();
        assert_eq!((t.triangle_count(), t.vertex_count()), (8, 9));
        assert_eq!(build_initial_triangulation(1.0).unwrap().triangle_count(), 2);
        assert_eq!(build_initial_triangulation(1.0 / 16.0).unwrap().triangle_count(), 512);
        assert!(matches!(build_initial_triangulation(0.3), Err(Error::NonDyadicMeshSize(_))));
        assert!(matches!(build_initial_triangulation(2.0), Err(Error::NonDyadicMeshSize(_))));
    }

    #[test]
    fn refinement_reproduces_structured_grid() {
        let ts = hierarchy(0.5, 4);
        for (k, t) in ts.iter().enumerate() {
            let n = 1usize << (k + 1);
            assert_eq!(t.vertex_count(), (n + 1) * (n + 1));
            assert_eq!(t.triangle_count(), 2 * n * n);
            assert_eq!(t.h(), 0.5 * 0.5f64.powi(k as i32));
            // every triangle is a lower or upper half of a grid square
            for tr in 0..t.triangle_count() as u32 {
                let (i, j) = (t.square_of(tr).0 as i64, t.square_of(tr).1 as i64);
                let mut corners: Vec<[i64; 2]> = t.triangle(tr).iter().map(|&v| t.vertex_grid(v)).collect();
                corners.sort_unstable();
                let lower = vec![[i, j], [i + 1, j], [i + 1, j + 1]];
                let upper = vec![[i, j], [i, j + 1], [i + 1, j + 1]];
                assert!(corners == lower || corners == upper, "{corners:?}");
                let c = t.triangle_coords(tr);
                let area = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
                assert!(area > 0.0);
            }
        }
        let direct = refine_uniform(&refine_uniform(&ts[1]));
        assert_eq!(direct.triangles(), ts[3].triangles());
    }

    #[test]
    fn locate_finds_containing_triangle() {
        let t = hierarchy(0.5, 3).pop().unwrap();
        for &(x, y) in &[(0.1, 0.05), (0.1, 0.2), (0.99, 0.01), (0.5, 0.5), (0.0, 1.0)] {
            let tr = t.locate([x, y]).unwrap();
            let c = t.triangle_coords(tr);
            let bary = barycentric(&c, [x, y]);
            assert!(bary.iter().all(|&l| l >= -1e-12), "{x},{y}: {bary:?}");
        }
    }

    pub(crate) fn barycentric(c: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
        let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
        let l1 = ((p[0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (p[1] - c[0][1])) / det;
        let l2 = ((c[1][0] - c[0][0]) * (p[1] - c[0][1]) - (p[0] - c[0][0]) * (c[1][1] - c[0][1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    #[test]
    fn resolution_check() {
        let net = build_cantor_network(3);
        let ts = hierarchy(0.5, 3);
        assert!(check_resolves(&ts[2], &net, 3).is_ok());
        assert!(!check_resolves(&ts[1], &net, 3).is_ok());
        assert!(check_resolves(&ts[0], &build_cantor_network(0), 0).is_ok());
    }

    #[test]
    fn dof_counts() {
        let net0 = build_cantor_network(0);
        let t = build_initial_triangulation(0.5).unwrap();
        let part = compute_cell_partition(&net0, 0).unwrap();
        assert_eq!(build_broken_dof_map(&t, &part, &net0).unwrap().total_dofs(), 1);

        // level 1 cantor on the 2x2 mesh: the centre vertex sees 4 cells and
        // the four edge midpoints lie on ∂Q, so 4 dofs
        let net = build_cantor_network(2);
        let part = compute_cell_partition(&net, 1).unwrap();
        let d = build_broken_dof_map(&t, &part, &net).unwrap();
        assert_eq!(d.total_dofs(), 4);
        assert_eq!(d.interface_edges().len(), 4);
    }

    #[test]
    fn dof_count_matches_incidence_oracle() {
        let net = build_cantor_network(4);
        let ts = hierarchy(0.5, 3);
        let part = compute_cell_partition(&net, 3).unwrap();
        let d = build_broken_dof_map(&ts[2], &part, &net).unwrap();
        // oracle: distinct (cell, vertex) pairs over interior vertices of the
        // structured grid, reading cells from the four incident squares
        let n = part.n() as i64;
        let mut pairs = std::collections::BTreeSet::new();
        for j in 1..n {
            for i in 1..n {
                for (di, dj) in [(-1, -1), (0, -1), (-1, 0), (0, 0)] {
                    pairs.insert((part.label((i + di) as usize, (j + dj) as usize), i, j));
                }
            }
        }
        assert_eq!(d.total_dofs(), pairs.len());
        for e in d.interface_edges() {
            let all = [e.plus[0], e.plus[1], e.minus[0], e.minus[1]];
            let on_boundary = e.vertices.iter().any(|&v| ts[2].is_boundary(v));
            if !on_boundary {
                let mut s = all.to_vec();
                s.sort_unstable();
                s.dedup();
                assert_eq!(s.len(), 4);
            }
            // plus side lies in +normal direction
            let ax = e.normal_axis.index();
            let cy = |tr: u32| ts[2].triangle_coords(tr).iter().map(|p| p[ax]).sum::<f64>();
            assert!(cy(e.plus_triangle) > cy(e.minus_triangle));
        }
    }

    #[test]
    fn interface_lengths_match_network() {
        let net = build_cantor_network(3);
        let ts = hierarchy(0.5, 3);
        let part = compute_cell_partition(&net, 3).unwrap();
        let d = build_broken_dof_map(&ts[2], &part, &net).unwrap();
        for k in 1..=3 {
            let mesh_len: f64 = d.interface_edges().iter().filter(|e| e.level == k).map(|e| e.length).sum();
            let net_len: f64 = net.facets(k).iter().map(|f| f.length(net.scale_exp())).sum();
            assert!((mesh_len - net_len).abs() < 1e-14);
        }
    }

    #[test]
    fn prolongation_preserves_values() {
        let net = build_cantor_network(3);
        let ts = hierarchy(0.5, 3);
        let maps: Vec<_> = (1..=3)
            .map(|k| build_broken_dof_map(&ts[k - 1], &compute_cell_partition(&net, k as u32).unwrap(), &net).unwrap())
            .collect();
        // a function affine on each cell with cell-dependent coefficients
        let f = |cell: u32, p: [f64; 2]| (cell as f64 + 1.0) * p[0] - 0.3 * cell as f64 * p[1] + 0.1 * cell as f64;
        for k in 0..2 {
            let p = build_prolongation(&ts[k + 1], &maps[k + 1], &ts[k], &maps[k]).unwrap();
            let coarse_cells: Vec<u32> = maps[k].dofs().iter().map(|d| d.cell).collect();
            let vc = maps[k].interpolate(&ts[k], |tr, x| f(maps[k].triangle_cell(tr), x));
            let vf = p.mul_vec(&vc).unwrap();
            // coarse cell of a fine dof: the cell of the parent triangle
            for (fd, dof) in maps[k + 1].dofs().iter().enumerate() {
                let tr = ts[k + 1].triangles_around(dof.vertex).iter().copied().find(|&t| maps[k + 1].triangle_dofs(t).contains(&(fd as u32))).unwrap();
                let cell = maps[k].triangle_cell(tr / 4);
                let x = ts[k + 1].vertex(dof.vertex);
                // Dirichlet coarse vertices carry no dof, so compare only where
                // every interpolation source is interior
                let sources = ts[k + 1].midpoint_parents(dof.vertex).map_or(vec![dof.vertex], |p| p.to_vec());
                if sources.iter().all(|&v| !ts[k].is_boundary(v)) {
                    assert!((vf[fd] - f(cell, x)).abs() < 1e-14);
                }
            }
            assert_eq!(coarse_cells.len(), vc.len());
        }
    }

    #[test]
    fn patches_cover_all_dofs() {
        let net = build_cantor_network(3);
        let ts = hierarchy(0.5, 3);
        let maps: Vec<_> = (1..=3)
            .map(|k| build_broken_dof_map(&ts[k - 1], &compute_cell_partition(&net, k as u32).unwrap(), &net).unwrap())
            .collect();
        let p1 = enumerate_patches(&ts, &maps, 1).unwrap();
        assert_eq!(p1.len(), 1);
        assert_eq!(p1[0].dofs.len(), maps[0].total_dofs());
        let p2 = enumerate_patches(&ts, &maps, 2).unwrap();
        assert_eq!(p2.len(), 9);
        for k in 2..=3u32 {
            let ps = enumerate_patches(&ts, &maps, k).unwrap();
            let mut covered = vec![false; maps[k as usize - 1].total_dofs()];
            let mut total = 0;
            for p in &ps {
                total += p.dofs.len();
                for &d in &p.dofs {
                    covered[d as usize] = true;
                }
            }
            assert!(covered.iter().all(|&c| c));
            assert!(total >= covered.len());
        }
    }

    #[test]
    fn exports_have_expected_shape() {
        let net = build_cantor_network(1);
        let t = build_initial_triangulation(0.5).unwrap();
        let d = build_broken_dof_map(&t, &compute_cell_partition(&net, 1).unwrap(), &net).unwrap();
        let mut buf = Vec::new();
        write_dof_csv(&t, &d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2 + d.total_dofs());
        let mut buf = Vec::new();
        write_mesh_vtk(&t, &d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("CELLS 8 32"));
    }
}
