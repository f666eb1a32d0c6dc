//! Particle genealogy: an arena of lineage edges with ancestry, split-time and
//! path-position queries.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{BbmError, Result};
use crate::stochastic::{bridge_moments, PathDigest, RngStreamKey};
use rand::Rng;
use rand_distr::StandardNormal;

/// Particle identifier given by tree coordinates: the root is the empty path
/// and the two offspring of a particle append 0 and 1.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ParticleId(pub PathDigest);

impl ParticleId {
    pub const ROOT: ParticleId = ParticleId(PathDigest::ROOT);

    pub fn child(self, which: u64) -> ParticleId {
        ParticleId(self.0.child(which))
    }
}

impl std::fmt::Display for ParticleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Position of a node inside a [`Genealogy`] arena.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct NodeIdx(pub u32);

impl NodeIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EndKind {
    Branched,
    KilledByPruning,
    ReachedHorizon,
    /// Still alive: the run has not reached this node's end yet.
    Open,
}

impl EndKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            EndKind::Branched => 0,
            EndKind::KilledByPruning => 1,
            EndKind::ReachedHorizon => 2,
            EndKind::Open => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => EndKind::Branched,
            1 => EndKind::KilledByPruning,
            2 => EndKind::ReachedHorizon,
            3 => EndKind::Open,
            _ => return None,
        })
    }
}

/// One lineage edge: a particle from its birth to its branching, removal or the horizon.
///
/// Until the edge is closed `end_time` is infinite and `end_position` is NaN.
/// Equality compares floating-point fields bitwise.
#[derive(Clone, Debug)]
pub struct GenealogyNode {
    pub id: ParticleId,
    pub parent: Option<NodeIdx>,
    pub children: Option<[NodeIdx; 2]>,
    pub depth: u32,
    pub birth_time: f64,
    pub birth_position: f64,
    pub end_time: f64,
    pub end_position: f64,
    pub end_kind: EndKind,
}

impl PartialEq for GenealogyNode {
    fn eq(&self, o: &Self) -> bool {
        let floats = |n: &Self| [n.birth_time, n.birth_position, n.end_time, n.end_position].map(f64::to_bits);
        self.id == o.id
            && self.parent == o.parent
            && self.children == o.children
            && self.depth == o.depth
            && self.end_kind == o.end_kind
            && floats(self) == floats(o)
    }
}

/// Grid-mode samples of one node: values at grid indices `first_k ..`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridSegment {
    pub first_k: u32,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridStore {
    pub dt: f64,
    pub segments: Vec<GridSegment>,
}

impl GridStore {
    #[inline]
    pub fn time(&self, k: u32) -> f64 {
        f64::from(k) * self.dt
    }

    /// Grid index of `s` when `s` is (up to rounding) a grid time.
    pub fn index_of(&self, s: f64) -> Option<u32> {
        let q = s / self.dt;
        let k = q.round();
        ((q - k).abs() < 1e-9 && k >= 0.0).then_some(k as u32)
    }
}

#[derive(Debug, Default)]
pub struct Genealogy {
    nodes: Vec<GenealogyNode>,
    grid: Option<GridStore>,
    index: OnceLock<HashMap<ParticleId, NodeIdx>>,
}

impl Clone for Genealogy {
    fn clone(&self) -> Self {
        Self {
            nodes: self.nodes.clone(),
            grid: self.grid.clone(),
            index: OnceLock::new(),
        }
    }
}

impl PartialEq for Genealogy {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.grid == other.grid
    }
}

impl Genealogy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_grid(dt: f64) -> Self {
        Self {
            grid: Some(GridStore {
                dt,
                segments: Vec::new(),
            }),
            ..Self::default()
        }
    }

    pub(crate) fn from_parts(nodes: Vec<GenealogyNode>, grid: Option<GridStore>) -> Self {
        Self {
            nodes,
            grid,
            index: OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GenealogyNode] {
        &self.nodes
    }

    pub fn grid(&self) -> Option<&GridStore> {
        self.grid.as_ref()
    }

    #[inline]
    pub fn node(&self, idx: NodeIdx) -> &GenealogyNode {
        &self.nodes[idx.index()]
    }

    pub fn get(&self, idx: NodeIdx) -> Result<&GenealogyNode> {
        self.nodes
            .get(idx.index())
            .ok_or_else(|| BbmError::UnknownParticle(format!("node #{}", idx.0)))
    }

    /// Looks a node up by particle id. The id index is built on first use.
    pub fn find(&self, id: ParticleId) -> Option<NodeIdx> {
        self.index
            .get_or_init(|| {
                self.nodes
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (n.id, NodeIdx(i as u32)))
                    .collect()
            })
            .get(&id)
            .copied()
    }

    pub(crate) fn push_root(&mut self, id: ParticleId, time: f64, position: f64) -> NodeIdx {
        self.push(GenealogyNode {
            id,
            parent: None,
            children: None,
            depth: 0,
            birth_time: time,
            birth_position: position,
            end_time: f64::INFINITY,
            end_position: f64::NAN,
            end_kind: EndKind::Open,
        })
    }

    fn push(&mut self, node: GenealogyNode) -> NodeIdx {
        let idx = NodeIdx(self.nodes.len() as u32);
        self.nodes.push(node);
        if let Some(g) = self.grid.as_mut() {
            g.segments.push(GridSegment::default());
        }
        if self.index.get().is_some() {
            self.index = OnceLock::new();
        }
        idx
    }

    pub(crate) fn close(&mut self, idx: NodeIdx, time: f64, position: f64, kind: EndKind) {
        let n = &mut self.nodes[idx.index()];
        n.end_time = time;
        n.end_position = position;
        n.end_kind = kind;
    }

    /// Closes `parent` as branched at `time` and appends its two offspring.
    pub(crate) fn branch(&mut self, parent: NodeIdx, time: f64, position: f64) -> [NodeIdx; 2] {
        self.close(parent, time, position, EndKind::Branched);
        let (pid, depth) = {
            let p = self.node(parent);
            (p.id, p.depth + 1)
        };
        let mut kids = [NodeIdx(0); 2];
        for (which, slot) in kids.iter_mut().enumerate() {
            *slot = self.push(GenealogyNode {
                id: pid.child(which as u64),
                parent: Some(parent),
                children: None,
                depth,
                birth_time: time,
                birth_position: position,
                end_time: f64::INFINITY,
                end_position: f64::NAN,
                end_kind: EndKind::Open,
            });
        }
        self.nodes[parent.index()].children = Some(kids);
        kids
    }

    pub(crate) fn record_grid(&mut self, idx: NodeIdx, k: u32, value: f64) {
        if let Some(g) = self.grid.as_mut() {
            let seg = &mut g.segments[idx.index()];
            if seg.values.is_empty() {
                seg.first_k = k;
            }
            debug_assert_eq!(seg.first_k as usize + seg.values.len(), k as usize);
            seg.values.push(value);
        }
    }

    /// Iterator over `idx` and its ancestors, nearest first.
    pub fn lineage(&self, idx: NodeIdx) -> impl Iterator<Item = NodeIdx> + '_ {
        std::iter::successors(Some(idx), move |&i| self.node(i).parent)
    }

    /// Whether `a` is `b` or one of its ancestors.
    pub fn is_ancestor_or_self(&self, a: NodeIdx, b: NodeIdx) -> bool {
        let da = self.node(a).depth;
        let mut cur = b;
        while self.node(cur).depth > da {
            match self.node(cur).parent {
                Some(p) => cur = p,
                None => return false,
            }
        }
        cur == a
    }

    /// Lowest common ancestor, or `None` for nodes in different root trees.
    pub fn lca(&self, a: NodeIdx, b: NodeIdx) -> Option<NodeIdx> {
        let (mut a, mut b) = (a, b);
        while self.node(a).depth > self.node(b).depth {
            a = self.node(a).parent?;
        }
        while self.node(b).depth > self.node(a).depth {
            b = self.node(b).parent?;
        }
        while a != b {
            a = self.node(a).parent?;
            b = self.node(b).parent?;
        }
        Some(a)
    }

    /// Last time at which the paths of `u` and `v` coincide.
    ///
    /// For distinct, unrelated particles this is the end (branch) time of the
    /// lowest common ancestor; when one is an ancestor of the other, or
    /// `u == v`, it is the smaller of the two end times. Particles from
    /// different root trees never coincide and give `0`.
    pub fn split_time(&self, u: NodeIdx, v: NodeIdx) -> Result<f64> {
        self.get(u)?;
        self.get(v)?;
        Ok(match self.lca(u, v) {
            Some(w) if w == u || w == v => self.node(u).end_time.min(self.node(v).end_time),
            Some(w) => self.node(w).end_time,
            None => 0.0,
        })
    }

    /// Split time of `u` observed at time `s` and `v` observed at time `t`.
    pub fn split_time_at(&self, u: NodeIdx, s: f64, v: NodeIdx, t: f64) -> Result<f64> {
        Ok(self.split_time(u, v)?.min(s).min(t))
    }

    /// Node on the lineage of `idx` that is alive at time `s`.
    pub fn ancestor_at(&self, idx: NodeIdx, s: f64) -> Result<NodeIdx> {
        let n = self.get(idx)?;
        if s < 0.0 || s > n.end_time || s < self.node(self.lineage(idx).last().unwrap()).birth_time {
            return Err(BbmError::TimeOutOfRange {
                id: n.id.to_string(),
                time: s,
                end: n.end_time,
            });
        }
        Ok(self
            .lineage(idx)
            .find(|&a| self.node(a).birth_time <= s)
            .expect("root birth precedes s"))
    }

    /// Grid path of the lineage of `idx`: values at grid indices
    /// `first ..= last` where `first` is the first recorded index of the root.
    pub fn grid_path(&self, idx: NodeIdx) -> Result<(u32, Vec<f64>)> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| BbmError::Config("genealogy has no grid samples (event mode run)".into()))?;
        let chain: Vec<NodeIdx> = self.lineage(idx).collect();
        let mut out = Vec::new();
        let mut first = None;
        for &n in chain.iter().rev() {
            let seg = &g.segments[n.index()];
            if seg.values.is_empty() {
                continue;
            }
            if first.is_none() {
                first = Some(seg.first_k);
            }
            debug_assert_eq!(first.unwrap() as usize + out.len(), seg.first_k as usize);
            out.extend_from_slice(&seg.values);
        }
        Ok((first.unwrap_or(0), out))
    }
}

/// Lazily filled continuous paths on top of a genealogy.
///
/// Positions strictly inside an edge are sampled from the Brownian bridge
/// between the nearest already-known points of that edge and memoized, so
/// repeated queries agree and later queries stay consistent with earlier ones.
pub struct PathSampler<'g> {
    genealogy: &'g Genealogy,
    stream: RngStreamKey,
    fills: HashMap<NodeIdx, Vec<(f64, f64)>>,
}

impl<'g> PathSampler<'g> {
    pub fn new(genealogy: &'g Genealogy, stream: RngStreamKey) -> Self {
        Self {
            genealogy,
            stream,
            fills: HashMap::new(),
        }
    }

    /// Forgets every memoized interior sample and switches to `stream`.
    pub fn reset(&mut self, stream: RngStreamKey) {
        self.fills.clear();
        self.stream = stream;
    }

    pub fn position_at(&mut self, u: NodeIdx, s: f64) -> Result<f64> {
        let g = self.genealogy;
        let node = g.get(u)?;
        if node.end_kind == EndKind::Open && s > node.birth_time {
            return Err(BbmError::TimeOutOfRange {
                id: node.id.to_string(),
                time: s,
                end: node.birth_time,
            });
        }
        let w = g.ancestor_at(u, s)?;
        let edge = g.node(w);
        if s == edge.birth_time {
            return Ok(edge.birth_position);
        }
        if s == edge.end_time {
            return Ok(edge.end_position);
        }
        let points = self.fills.entry(w).or_insert_with(|| known_points(g, w));
        let pos = points.partition_point(|&(t, _)| t < s);
        if pos < points.len() && points[pos].0 == s {
            return Ok(points[pos].1);
        }
        let (t0, x0) = points[pos - 1];
        let (t1, x1) = points[pos];
        let (mean, var) = bridge_moments(x0, x1, t1 - t0, s - t0);
        let key = self.stream.derive_path(&[
            edge.id.0.as_u128() as u64,
            (edge.id.0.as_u128() >> 64) as u64,
            s.to_bits(),
        ]);
        let z: f64 = key.rng().sample(StandardNormal);
        let x = mean + var.sqrt() * z;
        points.insert(pos, (s, x));
        Ok(x)
    }
}

fn known_points(g: &Genealogy, w: NodeIdx) -> Vec<(f64, f64)> {
    let n = g.node(w);
    let mut pts = vec![(n.birth_time, n.birth_position)];
    if let Some(grid) = g.grid() {
        let seg = &grid.segments[w.index()];
        for (i, &v) in seg.values.iter().enumerate() {
            let t = grid.time(seg.first_k + i as u32);
            if t > n.birth_time && t < n.end_time {
                pts.push((t, v));
            }
        }
    }
    pts.push((n.end_time, n.end_position));
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_tree() -> (Genealogy, [NodeIdx; 5]) {
        // root branches at 0.7; child 0 branches at 1.5; leaves end at 3.
        let mut g = Genealogy::new();
        let r = g.push_root(ParticleId::ROOT, 0.0, 0.0);
        let [a, b] = g.branch(r, 0.7, 0.4);
        let [c, d] = g.branch(a, 1.5, -0.2);
        g.close(b, 3.0, 1.0, EndKind::ReachedHorizon);
        g.close(c, 3.0, 0.5, EndKind::ReachedHorizon);
        g.close(d, 3.0, -1.0, EndKind::ReachedHorizon);
        (g, [r, a, b, c, d])
    }

    #[test]
    fn split_times() {
        let (g, [r, a, b, c, d]) = small_tree();
        assert_eq!(g.split_time(a, b).unwrap(), 0.7);
        assert_eq!(g.split_time(c, d).unwrap(), 1.5);
        assert_eq!(g.split_time(c, b).unwrap(), 0.7);
        assert_eq!(g.split_time(b, c).unwrap(), 0.7);
        assert_eq!(g.split_time(c, c).unwrap(), 3.0);
        assert_eq!(g.split_time(r, d).unwrap(), 0.7);
        assert_eq!(g.split_time(a, d).unwrap(), 1.5);
        assert_eq!(g.split_time_at(c, 2.0, c, 2.0).unwrap(), 2.0);
        assert!(g.split_time(c, NodeIdx(99)).is_err());
    }

    #[test]
    fn ancestry() {
        let (g, [r, a, b, c, _]) = small_tree();
        assert!(g.is_ancestor_or_self(r, c));
        assert!(g.is_ancestor_or_self(a, c));
        assert!(!g.is_ancestor_or_self(b, c));
        assert_eq!(g.lca(b, c), Some(r));
        assert_eq!(g.ancestor_at(c, 1.0).unwrap(), a);
        assert_eq!(g.ancestor_at(c, 0.3).unwrap(), r);
        assert!(g.ancestor_at(c, 3.5).is_err());
        assert_eq!(g.find(g.node(c).id), Some(c));
        assert_eq!(g.node(c).id, ParticleId::ROOT.child(0).child(0));
    }

    #[test]
    fn position_endpoints_and_shared_ancestry() {
        let (g, [_, a, b, c, d]) = small_tree();
        let mut ps = PathSampler::new(&g, RngStreamKey::root(1));
        assert_eq!(ps.position_at(c, 1.5).unwrap(), -0.2);
        assert_eq!(ps.position_at(b, 0.7).unwrap(), 0.4);
        assert_eq!(ps.position_at(c, 0.0).unwrap(), 0.0);
        let x1 = ps.position_at(c, 1.1).unwrap();
        let x2 = ps.position_at(d, 1.1).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(ps.position_at(a, 1.1).unwrap(), x1);
        assert_eq!(ps.position_at(c, 1.1).unwrap(), x1);
        let y = ps.position_at(b, 0.3).unwrap();
        assert_eq!(ps.position_at(c, 0.3).unwrap(), y);
        assert!(ps.position_at(c, 3.1).is_err());
    }

    #[test]
    fn bridge_fill_moments() {
        let mut g = Genealogy::new();
        let r = g.push_root(ParticleId::ROOT, 0.0, 0.0);
        g.close(r, 2.0, 1.0, EndKind::ReachedHorizon);
        let mut ps = PathSampler::new(&g, RngStreamKey::root(0));
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            ps.reset(RngStreamKey::root(99).derive(i));
            let x = ps.position_at(r, 1.0).unwrap();
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        // SE(mean) = sqrt(0.5/n); SE(var) = 0.5 sqrt(2/n)
        assert!((mean - 0.5).abs() < 5.0 * (0.5 / n as f64).sqrt(), "mean {mean}");
        assert!((var - 0.5).abs() < 5.0 * 0.5 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn sequential_fills_stay_consistent() {
        let mut g = Genealogy::new();
        let r = g.push_root(ParticleId::ROOT, 0.0, 0.0);
        g.close(r, 1.0, 0.0, EndKind::ReachedHorizon);
        let mut ps = PathSampler::new(&g, RngStreamKey::root(4));
        let a = ps.position_at(r, 0.5).unwrap();
        let b = ps.position_at(r, 0.25).unwrap();
        let c = ps.position_at(r, 0.75).unwrap();
        assert_eq!(ps.position_at(r, 0.5).unwrap(), a);
        assert_eq!(ps.position_at(r, 0.25).unwrap(), b);
        assert_eq!(ps.position_at(r, 0.75).unwrap(), c);
    }
}
