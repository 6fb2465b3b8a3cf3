//! The nested sequence of discrete interface problems on levels `1..=K`.

use crate::assembly::{assemble_load, assemble_system, EnergyForm, FormKind, Source, SymmetricSparseOperator};
use crate::error::{Error, Result};
use crate::geometry::{compute_cell_partition, CellPartition, InterfaceNetwork};
use crate::mesh::{
    build_broken_dof_map, build_initial_triangulation, build_prolongation, enumerate_patches, refine_uniform,
    BrokenDofMap, Patch, Triangulation,
};
use crate::solve::{solve_reference, MultilevelPreconditioner, PreconditionerConfig, ReferenceOptions};
use crate::sparse::CsrMatrix;

/// One level of a hierarchy: what is needed to evaluate broken functions.
#[derive(Clone, Copy)]
pub struct LevelView<'a> {
    pub mesh: &'a Triangulation,
    pub dofmap: &'a BrokenDofMap,
    pub network: &'a InterfaceNetwork,
}

/// Meshes, dof maps, operators and transfer matrices for levels `1..=K`,
/// where level `k` resolves `Γ^(k)` on `𝒯^(k)`.
pub struct Hierarchy {
    network: InterfaceNetwork,
    form: EnergyForm,
    source: Source,
    meshes: Vec<Triangulation>,
    partitions: Vec<CellPartition>,
    dofmaps: Vec<BrokenDofMap>,
    energy: Vec<SymmetricSparseOperator>,
    /// Separate norm matrices, only stored when `A ≢ 1`.
    norm: Vec<SymmetricSparseOperator>,
    loads: Vec<Vec<f64>>,
    /// `prolongations[k-1]` maps level k to level k+1.
    prolongations: Vec<CsrMatrix>,
}

impl Hierarchy {
    pub fn build(network: InterfaceNetwork, h1: f64, form: EnergyForm, source: Source, max_level: u32) -> Result<Self> {
        if max_level == 0 {
            return Err(Error::InvalidLevel("hierarchy needs at least one level".into()));
        }
        if max_level > network.max_level() {
            return Err(Error::InvalidLevel(format!(
                "hierarchy level {max_level} exceeds network level {}",
                network.max_level()
            )));
        }
        let mut h = Hierarchy {
            network,
            form,
            source,
            meshes: Vec::new(),
            partitions: Vec::new(),
            dofmaps: Vec::new(),
            energy: Vec::new(),
            norm: Vec::new(),
            loads: Vec::new(),
            prolongations: Vec::new(),
        };
        let mut mesh = build_initial_triangulation(h1)?;
        for k in 1..=max_level {
            if k > 1 {
                mesh = refine_uniform(&mesh);
            }
            h.push_level(mesh.clone(), k)?;
        }
        Ok(h)
    }

    fn push_level(&mut self, mesh: Triangulation, k: u32) -> Result<()> {
        let part = compute_cell_partition(&self.network, k)?;
        let dofmap = build_broken_dof_map(&mesh, &part, &self.network)?;
        let energy = assemble_system(&mesh, &dofmap, &self.network, &self.form, FormKind::Energy)?;
        if !self.form.is_unit() {
            self.norm.push(assemble_system(&mesh, &dofmap, &self.network, &self.form, FormKind::Norm)?);
        }
        let load = assemble_load(&mesh, &dofmap, &self.source);
        if let (Some(cm), Some(cd)) = (self.meshes.last(), self.dofmaps.last()) {
            self.prolongations.push(build_prolongation(&mesh, &dofmap, cm, cd)?);
        }
        self.meshes.push(mesh);
        self.partitions.push(part);
        self.dofmaps.push(dofmap);
        self.energy.push(energy);
        self.loads.push(load);
        Ok(())
    }

    pub fn max_level(&self) -> u32 {
        self.meshes.len() as u32
    }

    pub fn network(&self) -> &InterfaceNetwork {
        &self.network
    }

    pub fn form(&self) -> &EnergyForm {
        &self.form
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    fn idx(&self, k: u32) -> usize {
        assert!(k >= 1 && k <= self.max_level(), "level {k} outside 1..={}", self.max_level());
        k as usize - 1
    }

    pub fn mesh(&self, k: u32) -> &Triangulation {
        &self.meshes[self.idx(k)]
    }

    pub fn meshes(&self) -> &[Triangulation] {
        &self.meshes
    }

    pub fn partition(&self, k: u32) -> &CellPartition {
        &self.partitions[self.idx(k)]
    }

    pub fn dofmap(&self, k: u32) -> &BrokenDofMap {
        &self.dofmaps[self.idx(k)]
    }

    pub fn dofmaps(&self) -> &[BrokenDofMap] {
        &self.dofmaps
    }

    pub fn energy(&self, k: u32) -> &SymmetricSparseOperator {
        &self.energy[self.idx(k)]
    }

    /// Norm matrix (`A ≡ 1`); the energy matrix itself when `A ≡ 1`.
    pub fn norm(&self, k: u32) -> &SymmetricSparseOperator {
        let i = self.idx(k);
        self.norm.get(i).unwrap_or(&self.energy[i])
    }

    pub fn load(&self, k: u32) -> &[f64] {
        &self.loads[self.idx(k)]
    }

    /// Prolongation from level `k` to level `k+1`.
    pub fn prolongation(&self, k: u32) -> &CsrMatrix {
        &self.prolongations[self.idx(k)]
    }

    /// Prolongs `v` from level `k` to level `k+1`.
    pub fn prolong_once(&self, v: &[f64], k: u32) -> Result<Vec<f64>> {
        if k >= self.max_level() {
            return Err(Error::InvalidLevel(format!("no level above {k}")));
        }
        self.prolongation(k).mul_vec(v)
    }

    /// Prolongs `v` from level `from` to level `to >= from`.
    pub fn prolong(&self, v: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
        if to < from || to > self.max_level() {
            return Err(Error::InvalidLevel(format!("cannot prolong from {from} to {to}")));
        }
        let mut x = v.to_vec();
        for k in from..to {
            x = self.prolongation(k).mul_vec(&x)?;
        }
        Ok(x)
    }

    /// Mesh, dof map and network of level `k` bundled for the analysis checks.
    pub fn view(&self, k: u32) -> LevelView<'_> {
        LevelView { mesh: self.mesh(k), dofmap: self.dofmap(k), network: &self.network }
    }

    pub fn patches(&self, k: u32) -> Result<Vec<Patch>> {
        enumerate_patches(&self.meshes, &self.dofmaps, k)
    }

    /// Multilevel preconditioner for the level-`k` problem.
    pub fn preconditioner(&self, k: u32, cfg: PreconditionerConfig) -> Result<MultilevelPreconditioner> {
        let mats: Vec<&CsrMatrix> = (1..=k).map(|l| &self.energy(l).matrix).collect();
        let pros: Vec<&CsrMatrix> = (1..k).map(|l| self.prolongation(l)).collect();
        let patches = (1..=k).map(|l| self.patches(l)).collect::<Result<Vec<_>>>()?;
        MultilevelPreconditioner::new(&mats, &pros, &patches, cfg)
    }

    /// Reference solutions `ũ_k` for `k = 1..=max_level`.
    pub fn reference_solutions(&self, opts: &ReferenceOptions) -> Result<Vec<Vec<f64>>> {
        (1..=self.max_level()).map(|k| solve_reference(&self.energy(k).matrix, self.load(k), opts)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_cantor_network;

    #[test]
    fn prolongation_is_isometric() {
        let h = Hierarchy::build(build_cantor_network(4), 0.5, EnergyForm::default(), Source::Constant(1.0), 4).unwrap();
        for k in 1..4 {
            let galerkin = h.prolongation(k).galerkin_product(&h.energy(k + 1).matrix);
            let m = &h.energy(k).matrix;
            for (i, j, v) in m.triplets() {
                assert!((galerkin.get(i, j) - v).abs() < 1e-12 * (1.0 + v.abs()), "level {k} entry ({i},{j})");
            }
            assert_eq!(galerkin.nnz(), m.nnz());
        }
    }

    #[test]
    fn level_one_cantor_has_one_dof_per_quadrant() {
        let h = Hierarchy::build(build_cantor_network(2), 0.5, EnergyForm::default(), Source::Constant(1.0), 2).unwrap();
        assert_eq!(h.dofmap(1).total_dofs(), 4);
        assert!(h.prolong(&[1.0; 4], 1, 2).unwrap().iter().all(|&x| x == 1.0 || x == 0.5 || x == 0.0));
    }
}
