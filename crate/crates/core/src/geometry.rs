//! Hierarchical interface networks in the unit square and the cell partitions
//! they induce.
//!
//! All facet coordinates are integers on the dyadic grid of spacing
//! `2^-scale_exp`, so set operations between levels are exact.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetworkKind {
    Cantor,
    Layered,
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::Cantor => "cantor",
            NetworkKind::Layered => "layered",
        })
    }
}

impl FromStr for NetworkKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cantor" => Ok(NetworkKind::Cantor),
            "layered" => Ok(NetworkKind::Layered),
            other => Err(format!("unknown network kind `{other}` (expected cantor | layered)")),
        }
    }
}

/// Which children of an active dyadic square stay active in the Cantor
/// construction. The remaining children become invariant cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CantorPattern {
    /// Children (0,0), (0,1), (1,1) stay active; (1,0) is invariant. This is
    /// the planar slice of the three-dimensional comminution recursion and
    /// gives `2^(k-1)` crossings for axis-parallel lines.
    #[default]
    Slice,
    /// Children (0,0), (1,1) stay active; the anti-diagonal pair is invariant.
    Diagonal,
}

impl CantorPattern {
    pub fn active_children(self) -> &'static [(i64, i64)] {
        match self {
            CantorPattern::Slice => &[(0, 0), (0, 1), (1, 1)],
            CantorPattern::Diagonal => &[(0, 0), (1, 1)],
        }
    }
}

impl fmt::Display for CantorPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CantorPattern::Slice => "slice",
            CantorPattern::Diagonal => "diagonal",
        })
    }
}

impl FromStr for CantorPattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "slice" => Ok(CantorPattern::Slice),
            "diagonal" => Ok(CantorPattern::Diagonal),
            other => Err(format!("unknown cantor pattern `{other}` (expected slice | diagonal)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X = 0,
    Y = 1,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}

/// An axis-aligned interface segment. `start < end` along the segment
/// direction; the unit normal is `+e_normal_axis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InterfaceFacet {
    pub level: u32,
    pub start: [i64; 2],
    pub end: [i64; 2],
    pub normal_axis: Axis,
    /// Connected component of same-level facets this facet belongs to.
    pub chain: u32,
}

impl InterfaceFacet {
    /// Builds a facet from two endpoints that differ in exactly one coordinate.
    pub fn new(level: u32, a: [i64; 2], b: [i64; 2]) -> Option<Self> {
        let normal_axis = match (a[0] == b[0], a[1] == b[1]) {
            (true, false) => Axis::X,
            (false, true) => Axis::Y,
            _ => return None,
        };
        let (start, end) = if a <= b { (a, b) } else { (b, a) };
        Some(InterfaceFacet { level, start, end, normal_axis, chain: 0 })
    }

    /// Direction of the segment (perpendicular to the normal).
    pub fn direction(&self) -> Axis {
        self.normal_axis.other()
    }

    /// Length in grid units of the network scale.
    pub fn grid_length(&self) -> i64 {
        let d = self.direction().index();
        self.end[d] - self.start[d]
    }

    pub fn length(&self, scale_exp: u32) -> f64 {
        self.grid_length() as f64 / (1u64 << scale_exp) as f64
    }

    /// Unit edges of this facet on a grid coarser by `shift` binary digits.
    /// Returns `None` if the facet does not lie on that grid.
    pub fn unit_edges(&self, shift: u32) -> Option<Vec<([i64; 2], [i64; 2])>> {
        let m = 1i64 << shift;
        if self.start.iter().chain(self.end.iter()).any(|c| c % m != 0) {
            return None;
        }
        let s = [self.start[0] / m, self.start[1] / m];
        let e = [self.end[0] / m, self.end[1] / m];
        let d = self.direction().index();
        let mut out = Vec::with_capacity((e[d] - s[d]) as usize);
        for t in s[d]..e[d] {
            let mut a = s;
            let mut b = s;
            a[d] = t;
            b[d] = t + 1;
            out.push((a, b));
        }
        Some(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chain {
    pub level: u32,
    /// Macro-interface family for layered networks, 0 for Cantor networks.
    pub family: u32,
}

/// Parameters of the randomized layered network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredNetworkConfig {
    pub seed: u64,
    pub macro_interface_count: u32,
    /// Half-width of the band around each macro interface, in level-1 cells.
    pub band_halfwidth_cells: u32,
    /// Level-1 grid spacing is `2^-base_exp`.
    pub base_exp: u32,
}

impl Default for LayeredNetworkConfig {
    fn default() -> Self {
        LayeredNetworkConfig { seed: 2018, macro_interface_count: 3, band_halfwidth_cells: 2, base_exp: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceNetwork {
    kind: NetworkKind,
    max_level: u32,
    base_exp: u32,
    facets: Vec<Vec<InterfaceFacet>>,
    chains: Vec<Chain>,
    crossing_constants: Vec<u64>,
    seed: Option<u64>,
    pattern: Option<CantorPattern>,
    /// Layered bands `[lo, hi]` at the network scale.
    bands: Vec<[i64; 2]>,
}

impl InterfaceNetwork {
    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn pattern(&self) -> Option<CantorPattern> {
        self.pattern
    }

    pub fn base_exp(&self) -> u32 {
        self.base_exp
    }

    /// Exponent of the dyadic grid that resolves `Γ^(k)`.
    pub fn grid_exp(&self, k: u32) -> u32 {
        (self.base_exp + k).saturating_sub(1)
    }

    /// Exponent of the integer coordinate scale of all facets.
    pub fn scale_exp(&self) -> u32 {
        self.grid_exp(self.max_level)
    }

    /// Facets of `Γ_k`; empty for `k = 0` or `k > max_level`.
    pub fn facets(&self, k: u32) -> &[InterfaceFacet] {
        if k == 0 || k > self.max_level {
            return &[];
        }
        &self.facets[(k - 1) as usize]
    }

    /// All facets of `Γ^(k)`.
    pub fn facets_up_to(&self, k: u32) -> impl Iterator<Item = &InterfaceFacet> {
        (1..=k.min(self.max_level)).flat_map(move |l| self.facets(l).iter())
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn bands(&self) -> &[[i64; 2]] {
        &self.bands
    }

    /// `C_k` used in the jump weights.
    pub fn crossing_constant(&self, k: u32) -> u64 {
        if k == 0 || k > self.max_level {
            return match self.kind {
                NetworkKind::Cantor => 1u64 << k.saturating_sub(1),
                NetworkKind::Layered => (1u64 << k) - 1,
            };
        }
        self.crossing_constants[(k - 1) as usize]
    }

    pub fn crossing_constants(&self) -> &[u64] {
        &self.crossing_constants
    }

    /// Replaces the default `C_k` (length must equal `max_level`).
    pub fn with_crossing_constants(mut self, constants: Vec<u64>) -> Result<Self> {
        if constants.len() != self.max_level as usize {
            return Err(Error::InvalidLevel(format!(
                "expected {} crossing constants, got {}",
                self.max_level,
                constants.len()
            )));
        }
        self.crossing_constants = constants;
        Ok(self)
    }

    /// The same network truncated to levels `<= level`, rescaled to its own grid.
    pub fn restrict(&self, level: u32) -> InterfaceNetwork {
        let level = level.min(self.max_level);
        let shift = self.scale_exp() - self.grid_exp(level);
        let div = 1i64 << shift;
        let facets = self.facets[..level as usize]
            .iter()
            .map(|fs| {
                fs.iter()
                    .map(|f| InterfaceFacet {
                        start: [f.start[0] / div, f.start[1] / div],
                        end: [f.end[0] / div, f.end[1] / div],
                        ..*f
                    })
                    .collect()
            })
            .collect();
        let mut net = InterfaceNetwork {
            kind: self.kind,
            max_level: level,
            base_exp: self.base_exp,
            facets,
            chains: Vec::new(),
            crossing_constants: self.crossing_constants[..level as usize].to_vec(),
            seed: self.seed,
            pattern: self.pattern,
            bands: self.bands.iter().map(|b| [b[0] / div, b[1] / div]).collect(),
        };
        net.assign_chains();
        net
    }

    pub fn facet_count(&self) -> usize {
        self.facets.iter().map(Vec::len).sum()
    }

    /// Groups same-level facets into connected chains (shared endpoints or
    /// shared midpoints) and assigns layered families by band.
    fn assign_chains(&mut self) {
        let mut chains = Vec::new();
        for (li, level_facets) in self.facets.iter_mut().enumerate() {
            let n = level_facets.len();
            let mut uf = UnionFind::new(n);
            let mut seen: HashMap<[i64; 2], usize> = HashMap::new();
            for (i, f) in level_facets.iter().enumerate() {
                let mid = [f.start[0] + f.end[0], f.start[1] + f.end[1]];
                let keys = [[2 * f.start[0], 2 * f.start[1]], [2 * f.end[0], 2 * f.end[1]], mid];
                for key in keys {
                    match seen.get(&key) {
                        Some(&j) => uf.union(i, j),
                        None => {
                            seen.insert(key, i);
                        }
                    }
                }
            }
            let mut root_chain: HashMap<usize, u32> = HashMap::new();
            for i in 0..n {
                let root = uf.find(i);
                let id = *root_chain.entry(root).or_insert_with(|| {
                    let f = &level_facets[i];
                    let family = family_of(&self.bands, f);
                    chains.push(Chain { level: li as u32 + 1, family });
                    (chains.len() - 1) as u32
                });
                level_facets[i].chain = id;
            }
        }
        self.chains = chains;
    }
}

fn family_of(bands: &[[i64; 2]], f: &InterfaceFacet) -> u32 {
    // twice the midpoint y compared against doubled band edges
    let y2 = f.start[1] + f.end[1];
    bands
        .iter()
        .position(|b| 2 * b[0] < y2 && y2 < 2 * b[1])
        .unwrap_or(0) as u32
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Two-dimensional Cantor comminution network of level `max_level` with the
/// default child pattern.
pub fn build_cantor_network(max_level: u32) -> InterfaceNetwork {
    build_cantor_network_with(max_level, CantorPattern::default())
}

pub fn build_cantor_network_with(max_level: u32, pattern: CantorPattern) -> InterfaceNetwork {
    let mut facets = Vec::with_capacity(max_level as usize);
    let mut active: Vec<(i64, i64)> = vec![(0, 0)];
    for k in 1..=max_level {
        // active squares live on the 2^(k-1) grid; the cross lives on 2^k
        let s = 1i64 << (max_level - k);
        let mut level = Vec::with_capacity(2 * active.len());
        let mut next = Vec::with_capacity(active.len() * pattern.active_children().len());
        for &(i, j) in &active {
            let (cx, cy) = ((2 * i + 1) * s, (2 * j + 1) * s);
            let (x0, x1) = (2 * i * s, (2 * i + 2) * s);
            let (y0, y1) = (2 * j * s, (2 * j + 2) * s);
            level.push(InterfaceFacet::new(k, [cx, y0], [cx, y1]).expect("vertical bar"));
            level.push(InterfaceFacet::new(k, [x0, cy], [x1, cy]).expect("horizontal bar"));
            for &(a, b) in pattern.active_children() {
                next.push((2 * i + a, 2 * j + b));
            }
        }
        next.sort_unstable();
        facets.push(level);
        active = next;
    }
    let crossing_constants = (1..=max_level).map(|k| 1u64 << (k - 1)).collect();
    let mut net = InterfaceNetwork {
        kind: NetworkKind::Cantor,
        max_level,
        base_exp: 1,
        facets,
        chains: Vec::new(),
        crossing_constants,
        seed: None,
        pattern: Some(pattern),
        bands: Vec::new(),
    };
    net.assign_chains();
    net
}

/// Randomized layered network. Level 1 holds the horizontal macro interfaces;
/// every further level inserts one x-monotone staircase polyline into each gap
/// between the interfaces (and band edges) of a macro family, so a family has
/// `2^k - 1` polylines after level `k`.
pub fn build_layered_network(cfg: &LayeredNetworkConfig, max_level: u32) -> Result<InterfaceNetwork> {
    if max_level == 0 {
        return Err(Error::InvalidLevel("layered networks need max_level >= 1".into()));
    }
    let m = cfg.macro_interface_count as i64;
    let n1 = 1i64 << cfg.base_exp;
    let hw = cfg.band_halfwidth_cells as i64;
    if m == 0 {
        return Err(Error::GeometryInfeasible("at least one macro interface is required".into()));
    }
    if hw < 1 {
        return Err(Error::GeometryInfeasible("band half-width must be at least one grid cell".into()));
    }
    let mut bands = Vec::with_capacity(m as usize);
    let mut heights = Vec::with_capacity(m as usize);
    for i in 0..m {
        let y = ((i + 1) * n1 + (m + 1) / 2) / (m + 1);
        let band = [y - hw, y + hw];
        if band[0] < 0 || band[1] > n1 {
            return Err(Error::GeometryInfeasible(format!(
                "band {:?} of macro interface {i} leaves the domain",
                band
            )));
        }
        if let Some(prev) = bands.last().map(|b: &[i64; 2]| b[1]) {
            if band[0] < prev {
                return Err(Error::GeometryInfeasible(format!(
                    "bands of macro interfaces {} and {i} overlap",
                    i - 1
                )));
            }
        }
        bands.push(band);
        heights.push(y);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // families[f] = polylines sorted bottom to top, each (level, heights per column)
    let mut families: Vec<Vec<(u32, Vec<i64>)>> =
        heights.iter().map(|&y| vec![(1u32, vec![y; n1 as usize])]).collect();
    let mut band_edges: Vec<[i64; 2]> = bands.clone();
    let mut columns = n1 as usize;

    for k in 2..=max_level {
        columns *= 2;
        for b in band_edges.iter_mut() {
            b[0] *= 2;
            b[1] *= 2;
        }
        for (fi, family) in families.iter_mut().enumerate() {
            for (_, h) in family.iter_mut() {
                *h = h.iter().flat_map(|&y| [2 * y, 2 * y]).collect();
            }
            let [lo_edge, hi_edge] = band_edges[fi];
            let mut merged = Vec::with_capacity(2 * family.len() + 1);
            let old = std::mem::take(family);
            for gap in 0..=old.len() {
                let below = gap.checked_sub(1).map(|g| old[g].1.as_slice());
                let above = old.get(gap).map(|p| p.1.as_slice());
                let walk = random_walk_between(&mut rng, columns, below, above, lo_edge, hi_edge)
                    .ok_or_else(|| {
                        Error::GeometryInfeasible(format!(
                            "no room for a level-{k} polyline in gap {gap} of family {fi}"
                        ))
                    })?;
                if gap > 0 {
                    merged.push(old[gap - 1].clone());
                }
                merged.push((k, walk));
            }
            *family = merged;
        }
    }

    let scale_exp = cfg.base_exp + max_level - 1;
    let mut facets: Vec<Vec<InterfaceFacet>> = vec![Vec::new(); max_level as usize];
    for family in &families {
        for (level, h) in family {
            // heights are at the finest (max_level) resolution already
            facets[(*level - 1) as usize].extend(staircase_facets(*level, h));
        }
    }
    for level in facets.iter_mut() {
        level.sort_by_key(|f| (f.start[1], f.start[0], f.end[1], f.end[0]));
    }
    debug_assert_eq!(columns, 1usize << scale_exp);
    let crossing_constants = (1..=max_level).map(|k| (1u64 << k) - 1).collect();
    let mut net = InterfaceNetwork {
        kind: NetworkKind::Layered,
        max_level,
        base_exp: cfg.base_exp,
        facets,
        chains: Vec::new(),
        crossing_constants,
        seed: Some(cfg.seed),
        pattern: None,
        bands: band_edges,
    };
    net.assign_chains();
    Ok(net)
}

/// Column heights `c` with `max(a[j-1..=j+1]) < c[j] < min(b[j-1..=j+1])`,
/// which keeps the staircase disjoint from both neighbours.
fn random_walk_between(
    rng: &mut ChaCha8Rng,
    columns: usize,
    below: Option<&[i64]>,
    above: Option<&[i64]>,
    lo_edge: i64,
    hi_edge: i64,
) -> Option<Vec<i64>> {
    let window = |h: &[i64], j: usize, pick: fn(i64, i64) -> i64| {
        let a = h[j.saturating_sub(1)];
        let c = h[(j + 1).min(columns - 1)];
        pick(pick(a, h[j]), c)
    };
    let mut out: Vec<i64> = Vec::with_capacity(columns);
    for j in 0..columns {
        let lo = below.map_or(lo_edge, |h| window(h, j, i64::max)) + 1;
        let hi = above.map_or(hi_edge, |h| window(h, j, i64::min)) - 1;
        if lo > hi {
            return None;
        }
        let c = match out.last() {
            None => rng.gen_range(lo..=hi),
            Some(&prev) => (prev + rng.gen_range(-1i64..=1i64)).clamp(lo, hi),
        };
        out.push(c);
    }
    Some(out)
}

fn staircase_facets(level: u32, h: &[i64]) -> Vec<InterfaceFacet> {
    let mut out = Vec::new();
    let mut run_start = 0usize;
    for j in 1..=h.len() {
        if j == h.len() || h[j] != h[run_start] {
            let y = h[run_start];
            out.push(InterfaceFacet::new(level, [run_start as i64, y], [j as i64, y]).expect("horizontal run"));
            if j < h.len() {
                out.push(InterfaceFacet::new(level, [j as i64, h[j - 1]], [j as i64, h[j]]).expect("vertical step"));
            }
            run_start = j;
        }
    }
    out
}

/// One cell of `Q \ Γ^(K)` on the level-K grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub square_count: usize,
    /// Bounding box `[x0, y0, x1, y1]` in grid units.
    pub bbox: [i64; 4],
    pub invariant: bool,
}

impl Cell {
    fn extent(&self) -> (i64, i64) {
        (self.bbox[2] - self.bbox[0], self.bbox[3] - self.bbox[1])
    }
}

/// Connected components of `Q \ Γ^(K)` labelled on the level-K grid.
#[derive(Clone, Debug)]
pub struct CellPartition {
    pub level: u32,
    pub grid_exp: u32,
    labels: Vec<u32>,
    pub cells: Vec<Cell>,
    /// Largest side of a non-invariant cell.
    pub d_k: f64,
    /// Smallest side over all cells.
    pub d_k_min: f64,
    /// Shape constant `sqrt(2) max_G d_G^max / d_G^min`.
    pub shape_constant: f64,
}

impl CellPartition {
    pub fn n(&self) -> usize {
        1usize << self.grid_exp
    }

    /// Cell label of grid square `(i, j)`.
    pub fn label(&self, i: usize, j: usize) -> u32 {
        self.labels[j * self.n() + i]
    }

    /// Cell containing a point strictly inside a grid square.
    pub fn cell_of_point(&self, p: [f64; 2]) -> u32 {
        let n = self.n();
        let i = ((p[0] * n as f64).floor() as usize).min(n - 1);
        let j = ((p[1] * n as f64).floor() as usize).min(n - 1);
        self.label(i, j)
    }

    pub fn invariant_count(&self) -> usize {
        self.cells.iter().filter(|c| c.invariant).count()
    }

    /// Lower and upper inequality of the shape regularity condition for one cell.
    pub fn shape_regular(&self, cell: usize) -> bool {
        let n = self.n() as f64;
        let (w, h) = self.cells[cell].extent();
        let dmax = w.max(h) as f64 / n;
        let dmin = w.min(h) as f64 / n;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        r * self.d_k <= dmax + 1e-15 && dmax <= r * self.shape_constant * dmin * (1.0 + 1e-12)
    }
}

struct Blocked {
    n: usize,
    /// Vertical edge at x = i between rows j..j+1: index j * (n + 1) + i.
    vertical: Vec<bool>,
    /// Horizontal edge at y = j between columns i..i+1: index j * n + i.
    horizontal: Vec<bool>,
}

impl Blocked {
    fn from_network(net: &InterfaceNetwork, level: u32, grid_exp: u32) -> Result<Self> {
        let n = 1usize << grid_exp;
        let mut b = Blocked { n, vertical: vec![false; (n + 1) * n], horizontal: vec![false; (n + 1) * n] };
        let shift = net.scale_exp() - grid_exp;
        for f in net.facets_up_to(level) {
            let edges = f.unit_edges(shift).ok_or_else(|| {
                Error::GeometryInfeasible(format!("facet {:?} is not on the level-{level} grid", f))
            })?;
            for (a, _) in edges {
                match f.normal_axis {
                    Axis::X => b.vertical[a[1] as usize * (n + 1) + a[0] as usize] = true,
                    Axis::Y => b.horizontal[a[1] as usize * n + a[0] as usize] = true,
                }
            }
        }
        Ok(b)
    }

    fn v(&self, i: usize, j: usize) -> bool {
        self.vertical[j * (self.n + 1) + i]
    }

    fn h(&self, i: usize, j: usize) -> bool {
        self.horizontal[j * self.n + i]
    }
}

fn flood_fill(net: &InterfaceNetwork, level: u32) -> Result<(Vec<u32>, Vec<Cell>, Vec<i64>)> {
    let g = net.grid_exp(level);
    let blocked = Blocked::from_network(net, level, g)?;
    let n = blocked.n;
    let mut labels = vec![u32::MAX; n * n];
    let mut cells = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n * n {
        if labels[start] != u32::MAX {
            continue;
        }
        let id = cells.len() as u32;
        labels[start] = id;
        stack.push(start);
        let mut cell = Cell { square_count: 0, bbox: [i64::MAX, i64::MAX, i64::MIN, i64::MIN], invariant: false };
        while let Some(s) = stack.pop() {
            let (i, j) = (s % n, s / n);
            cell.square_count += 1;
            cell.bbox[0] = cell.bbox[0].min(i as i64);
            cell.bbox[1] = cell.bbox[1].min(j as i64);
            cell.bbox[2] = cell.bbox[2].max(i as i64 + 1);
            cell.bbox[3] = cell.bbox[3].max(j as i64 + 1);
            let mut visit = |t: usize| {
                if labels[t] == u32::MAX {
                    labels[t] = id;
                    stack.push(t);
                }
            };
            if i > 0 && !blocked.v(i, j) {
                visit(s - 1);
            }
            if i + 1 < n && !blocked.v(i + 1, j) {
                visit(s + 1);
            }
            if j > 0 && !blocked.h(i, j) {
                visit(s - n);
            }
            if j + 1 < n && !blocked.h(i, j + 1) {
                visit(s + n);
            }
        }
        cells.push(cell);
    }

    // Euler characteristic F - E + V of each open cell; 1 iff simply connected.
    let mut euler: Vec<i64> = cells.iter().map(|c| c.square_count as i64).collect();
    for j in 0..n {
        for i in 1..n {
            if !blocked.v(i, j) {
                euler[labels[j * n + i] as usize] -= 1;
            }
        }
    }
    for j in 1..n {
        for i in 0..n {
            if !blocked.h(i, j) {
                euler[labels[j * n + i] as usize] -= 1;
            }
        }
    }
    for j in 1..n {
        for i in 1..n {
            let open = !blocked.v(i, j - 1) && !blocked.v(i, j) && !blocked.h(i - 1, j) && !blocked.h(i, j);
            if open {
                euler[labels[j * n + i] as usize] += 1;
            }
        }
    }
    Ok((labels, cells, euler))
}

/// Cells of `Q \ Γ^(K)` with invariance flags relative to `net.max_level()`.
pub fn compute_cell_partition(net: &InterfaceNetwork, level: u32) -> Result<CellPartition> {
    if level > net.max_level() {
        return Err(Error::InvalidLevel(format!(
            "partition level {level} exceeds network level {}",
            net.max_level()
        )));
    }
    let (labels, mut cells, euler) = flood_fill(net, level)?;
    if let Some((cell, &e)) = euler.iter().enumerate().find(|(_, &e)| e != 1) {
        return Err(Error::NotSimplyConnected { level, cell, euler: e });
    }
    let g = net.grid_exp(level);
    let n = 1usize << g;

    // at the deepest level no finer partition exists to compare against,
    // so every cell is reported as non-invariant
    if level < net.max_level() {
        let gmax = net.grid_exp(net.max_level());
        let (fine_labels, fine_cells, _) = flood_fill(net, net.max_level())?;
        let f = 1usize << (gmax - g);
        let nf = n * f;
        let mut candidate: Vec<Option<u32>> = vec![None; cells.len()];
        let mut consistent = vec![true; cells.len()];
        for j in 0..n {
            for i in 0..n {
                let c = labels[j * n + i] as usize;
                let fl = fine_labels[(j * f) * nf + i * f];
                match candidate[c] {
                    None => candidate[c] = Some(fl),
                    Some(prev) if prev != fl => consistent[c] = false,
                    _ => {}
                }
            }
        }
        for (c, cell) in cells.iter_mut().enumerate() {
            cell.invariant = consistent[c]
                && candidate[c].is_some_and(|fl| fine_cells[fl as usize].square_count == cell.square_count * f * f);
        }
    }

    let nf = n as f64;
    let mut d_k: f64 = 0.0;
    let mut d_k_min = f64::INFINITY;
    let mut ratio: f64 = 1.0;
    for c in &cells {
        let (w, h) = c.extent();
        let (dmax, dmin) = (w.max(h) as f64 / nf, w.min(h) as f64 / nf);
        if !c.invariant {
            d_k = d_k.max(dmax);
        }
        d_k_min = d_k_min.min(dmin);
        ratio = ratio.max(dmax / dmin);
    }
    Ok(CellPartition {
        level,
        grid_exp: g,
        labels,
        cells,
        d_k,
        d_k_min,
        shape_constant: std::f64::consts::SQRT_2 * ratio,
    })
}

/// A family of straight test lines through `Q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LineFamily {
    /// Every horizontal and vertical line at half-cell offsets of the finest
    /// network grid.
    AxisAligned,
    /// `directions × offsets` lines with generic angles and offsets.
    Dense { directions: usize, offsets: usize },
}

/// Maximal crossing numbers over a line family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CrossingCount {
    /// Intersection points with `Γ_k`.
    pub points: usize,
    /// Distinct interfaces (chains) of levels `<= k` cut, counted within one
    /// macro family.
    pub interfaces_per_family: usize,
}

/// Maximal crossing numbers of `Γ_k` over a family of lines.
pub fn count_line_crossings(net: &InterfaceNetwork, k: u32, lines: LineFamily) -> CrossingCount {
    if k == 0 || net.facet_count() == 0 {
        return CrossingCount::default();
    }
    match lines {
        LineFamily::AxisAligned => axis_aligned_crossings(net, k),
        LineFamily::Dense { directions, offsets } => dense_crossings(net, k, directions, offsets),
    }
}

/// The crossing number that plays the role of `C_k` for this network kind:
/// intersection points for Cantor networks, interfaces cut per macro family
/// for layered networks.
pub fn observed_crossing_constant(net: &InterfaceNetwork, k: u32, lines: LineFamily) -> usize {
    let c = count_line_crossings(net, k, lines);
    match net.kind() {
        NetworkKind::Cantor => c.points,
        NetworkKind::Layered => c.interfaces_per_family,
    }
}

fn axis_aligned_crossings(net: &InterfaceNetwork, k: u32) -> CrossingCount {
    let n = 1usize << net.scale_exp();
    let families = net.bands().len().max(1);
    let mut best = CrossingCount::default();
    // direction 0: vertical lines (cross horizontal facets), 1: horizontal lines
    for normal in [Axis::Y, Axis::X] {
        let along = normal.other().index();
        let mut points = vec![0i64; n + 1];
        let mut chains: Vec<Vec<u32>> = vec![Vec::new(); n];
        for f in net.facets_up_to(k).filter(|f| f.normal_axis == normal) {
            let (a, b) = (f.start[along] as usize, f.end[along] as usize);
            if f.level == k {
                points[a] += 1;
                points[b] -= 1;
            }
            for line in chains.iter_mut().take(b).skip(a) {
                line.push(f.chain);
            }
        }
        let mut running = 0i64;
        for (i, line_chains) in chains.iter_mut().enumerate() {
            running += points[i];
            best.points = best.points.max(running as usize);
            line_chains.sort_unstable();
            line_chains.dedup();
            let mut per_family = vec![0usize; families];
            for &c in line_chains.iter() {
                per_family[net.chains()[c as usize].family as usize] += 1;
            }
            best.interfaces_per_family = best.interfaces_per_family.max(per_family.into_iter().max().unwrap_or(0));
        }
    }
    best
}

fn dense_crossings(net: &InterfaceNetwork, k: u32, directions: usize, offsets: usize) -> CrossingCount {
    let scale = (1u64 << net.scale_exp()) as f64;
    let families = net.bands().len().max(1);
    let facets: Vec<&InterfaceFacet> = net.facets_up_to(k).collect();
    let golden = 0.618_033_988_749_894_9_f64;
    let mut best = CrossingCount::default();
    let mut hit_chains = Vec::new();
    for a in 0..directions {
        let theta = std::f64::consts::PI * ((a as f64 + golden) / directions as f64);
        let (dx, dy) = (theta.cos(), theta.sin());
        // lines {p : p . nrm = t}, nrm perpendicular to the direction
        let nrm = [-dy, dx];
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let proj: Vec<f64> = corners.iter().map(|c| c[0] * nrm[0] + c[1] * nrm[1]).collect();
        let tmin = proj.iter().cloned().fold(f64::INFINITY, f64::min);
        let tmax = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for o in 0..offsets {
            let frac = ((o as f64 + 0.5) + golden * 0.5) / (offsets as f64 + 1.0);
            let t = tmin + frac * (tmax - tmin);
            let mut points = 0usize;
            hit_chains.clear();
            for f in &facets {
                let s0 = (f.start[0] as f64 / scale) * nrm[0] + (f.start[1] as f64 / scale) * nrm[1] - t;
                let s1 = (f.end[0] as f64 / scale) * nrm[0] + (f.end[1] as f64 / scale) * nrm[1] - t;
                if s0 * s1 < 0.0 {
                    if f.level == k {
                        points += 1;
                    }
                    hit_chains.push(f.chain);
                }
            }
            best.points = best.points.max(points);
            hit_chains.sort_unstable();
            hit_chains.dedup();
            let mut per_family = vec![0usize; families];
            for &c in &hit_chains {
                per_family[net.chains()[c as usize].family as usize] += 1;
            }
            best.interfaces_per_family = best.interfaces_per_family.max(per_family.into_iter().max().unwrap_or(0));
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelStats {
    pub level: u32,
    pub facet_count: usize,
    pub total_length: f64,
    pub d_k: f64,
    pub crossing_constant: u64,
    pub shape_constant: f64,
    pub cell_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkStats {
    pub kind: NetworkKind,
    pub max_level: u32,
    pub levels: Vec<LevelStats>,
}

impl NetworkStats {
    pub fn total_facets(&self) -> usize {
        self.levels.iter().map(|l| l.facet_count).sum()
    }
}

pub fn network_stats(net: &InterfaceNetwork) -> Result<NetworkStats> {
    let mut levels = Vec::with_capacity(net.max_level() as usize);
    for k in 1..=net.max_level() {
        let part = compute_cell_partition(net, k)?;
        levels.push(LevelStats {
            level: k,
            facet_count: net.facets(k).len(),
            total_length: net.facets(k).iter().map(|f| f.length(net.scale_exp())).sum(),
            d_k: part.d_k,
            crossing_constant: net.crossing_constant(k),
            shape_constant: part.shape_constant,
            cell_count: part.cells.len(),
        });
    }
    Ok(NetworkStats { kind: net.kind(), max_level: net.max_level(), levels })
}

const NETWORK_HEADER: &str = "# fractal-homog interface network v1";

/// Writes the line-oriented network format: header records followed by one
/// `k x0 y0 x1 y1 axis` line per facet (integers at scale `2^-scale_exp`).
pub fn write_network<W: Write>(net: &InterfaceNetwork, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{NETWORK_HEADER}")?;
    writeln!(w, "kind {}", net.kind())?;
    writeln!(w, "max_level {}", net.max_level())?;
    writeln!(w, "base_exp {}", net.base_exp())?;
    writeln!(w, "scale_exp {}", net.scale_exp())?;
    match net.seed() {
        Some(s) => writeln!(w, "seed {s}")?,
        None => writeln!(w, "seed -")?,
    }
    if let Some(p) = net.pattern() {
        writeln!(w, "pattern {p}")?;
    }
    let cs: Vec<String> = net.crossing_constants().iter().map(u64::to_string).collect();
    writeln!(w, "crossing {}", cs.join(" "))?;
    for b in net.bands() {
        writeln!(w, "band {} {}", b[0], b[1])?;
    }
    writeln!(w, "facets {}", net.facet_count())?;
    for k in 1..=net.max_level() {
        for f in net.facets(k) {
            writeln!(w, "{} {} {} {} {} {}", k, f.start[0], f.start[1], f.end[0], f.end[1], f.normal_axis.index())?;
        }
    }
    Ok(())
}

pub fn network_to_string(net: &InterfaceNetwork) -> String {
    let mut buf = Vec::new();
    write_network(net, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("network text is ASCII")
}

pub fn parse_network(text: &str) -> Result<InterfaceNetwork> {
    let err = |line: usize, message: String| Error::Parse { line, message };
    let mut kind = None;
    let mut max_level = None;
    let mut base_exp = None;
    let mut scale_exp = None;
    let mut seed = None;
    let mut pattern = None;
    let mut crossing = None;
    let mut bands = Vec::new();
    let mut facets: Vec<Vec<InterfaceFacet>> = Vec::new();
    let mut expected_facets = None;
    let mut read_facets = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap_or_default();
        let rest: Vec<&str> = tok.collect();
        let int = |s: &str| s.parse::<i64>().map_err(|e| err(ln, format!("bad integer `{s}`: {e}")));
        match head {
            "kind" => kind = Some(rest.first().copied().unwrap_or_default().parse::<NetworkKind>().map_err(|e| err(ln, e))?),
            "max_level" => max_level = Some(int(rest.first().copied().unwrap_or_default())? as u32),
            "base_exp" => base_exp = Some(int(rest.first().copied().unwrap_or_default())? as u32),
            "scale_exp" => scale_exp = Some(int(rest.first().copied().unwrap_or_default())? as u32),
            "seed" => {
                seed = match rest.first().copied() {
                    Some("-") | None => None,
                    Some(s) => Some(s.parse::<u64>().map_err(|e| err(ln, format!("bad seed: {e}")))?),
                }
            }
            "pattern" => pattern = Some(rest.first().copied().unwrap_or_default().parse::<CantorPattern>().map_err(|e| err(ln, e))?),
            "crossing" => {
                crossing = Some(
                    rest.iter()
                        .map(|s| s.parse::<u64>().map_err(|e| err(ln, format!("bad crossing constant: {e}"))))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "band" => {
                if rest.len() != 2 {
                    return Err(err(ln, "band needs two integers".into()));
                }
                bands.push([int(rest[0])?, int(rest[1])?]);
            }
            "facets" => {
                expected_facets = Some(int(rest.first().copied().unwrap_or_default())? as usize);
                let k = max_level.ok_or_else(|| err(ln, "max_level must precede facets".into()))?;
                facets = vec![Vec::new(); k as usize];
            }
            _ => {
                if expected_facets.is_none() {
                    return Err(err(ln, format!("unknown record `{head}`")));
                }
                let nums: Vec<i64> = line.split_whitespace().map(int).collect::<Result<_>>()?;
                if nums.len() != 6 {
                    return Err(err(ln, "facet line needs `k x0 y0 x1 y1 axis`".into()));
                }
                let k = nums[0];
                if k < 1 || k as usize > facets.len() {
                    return Err(err(ln, format!("facet level {k} out of range")));
                }
                let f = InterfaceFacet::new(k as u32, [nums[1], nums[2]], [nums[3], nums[4]])
                    .ok_or_else(|| err(ln, "facet is not axis-aligned".into()))?;
                if f.normal_axis.index() as i64 != nums[5] {
                    return Err(err(ln, format!("axis {} inconsistent with endpoints", nums[5])));
                }
                facets[(k - 1) as usize].push(f);
                read_facets += 1;
            }
        }
    }
    let kind = kind.ok_or_else(|| err(0, "missing `kind`".into()))?;
    let max_level = max_level.ok_or_else(|| err(0, "missing `max_level`".into()))?;
    let base_exp = base_exp.ok_or_else(|| err(0, "missing `base_exp`".into()))?;
    if let Some(s) = scale_exp {
        if s != (base_exp + max_level).saturating_sub(1) {
            return Err(err(0, format!("scale_exp {s} inconsistent with base_exp and max_level")));
        }
    }
    if facets.is_empty() {
        facets = vec![Vec::new(); max_level as usize];
    }
    if let Some(e) = expected_facets {
        if e != read_facets {
            return Err(err(0, format!("expected {e} facets, read {read_facets}")));
        }
    }
    let crossing_constants = match crossing {
        Some(c) if c.len() == max_level as usize => c,
        Some(c) => return Err(err(0, format!("expected {max_level} crossing constants, got {}", c.len()))),
        None => (1..=max_level)
            .map(|k| match kind {
                NetworkKind::Cantor => 1u64 << (k - 1),
                NetworkKind::Layered => (1u64 << k) - 1,
            })
            .collect(),
    };
    let mut net = InterfaceNetwork {
        kind,
        max_level,
        base_exp,
        facets,
        chains: Vec::new(),
        crossing_constants,
        seed,
        pattern,
        bands,
    };
    net.assign_chains();
    Ok(net)
}
