//! Binary checkpoints of a run in progress.
//!
//! Little-endian layout: magic `BBM1`, `u32` version, `u64` payload length,
//! root stream key, run clock, node table, optional grid samples, retained
//! snapshots, alive particles (with their stream positions), ergodic
//! accumulators, then a trailing `u64` checksum (first eight bytes of the
//! SHA-256 of everything before it).

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::engine::{Live, PopulationSnapshot, RunConfig, RunStats, Simulation, SnapshotEntry};
use crate::error::{BbmError, CheckpointError, Result};
use crate::genealogy::{EndKind, Genealogy, GenealogyNode, GridSegment, GridStore, NodeIdx, ParticleId};
use crate::observables::ErgodicAccumulator;
use crate::stochastic::{PathDigest, RngStreamKey, StreamBase, StreamRng};

pub const MAGIC: [u8; 4] = *b"BBM1";
pub const VERSION: u32 = 1;
const NONE: u32 = u32::MAX;
const HEADER_LEN: usize = 16;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn words<const N: usize>(&mut self, w: [u32; N]) {
        for x in w {
            self.u32(x);
        }
    }
    fn opt_node(&mut self, n: Option<NodeIdx>) {
        self.u32(n.map_or(NONE, |n| n.0));
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn words<const N: usize>(&mut self) -> std::result::Result<[u32; N], CheckpointError> {
        let mut w = [0u32; N];
        for x in &mut w {
            *x = self.u32()?;
        }
        Ok(w)
    }
    fn opt_node(&mut self) -> std::result::Result<Option<NodeIdx>, CheckpointError> {
        let v = self.u32()?;
        Ok((v != NONE).then_some(NodeIdx(v)))
    }
    fn len(&mut self, item_bytes: usize) -> std::result::Result<usize, CheckpointError> {
        let n = self.u64()? as usize;
        // every item needs at least `item_bytes`; reject absurd counts early
        if n.saturating_mul(item_bytes) > self.buf.len() - self.pos {
            return Err(CheckpointError::Malformed(format!(
                "count {n} exceeds remaining payload"
            )));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> std::result::Result<Vec<f64>, CheckpointError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Encodes the state of `sim` together with any ergodic accumulators.
pub fn encode(sim: &Simulation, accumulators: &[ErgodicAccumulator]) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(1 << 16));
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.u64(0); // payload length, patched below

    let root = sim.config.root_stream;
    w.u64(root.trial_seed);
    w.words(root.path.0);
    w.u32(root.depth);

    w.f64(sim.config.horizon);
    w.f64(sim.start);
    w.f64(sim.time);
    w.u64(sim.next_sync as u64);
    let st = &sim.stats;
    w.u64(st.branch_events);
    w.u64(st.killed);
    w.u64(st.max_alive as u64);
    w.u64(st.final_alive as u64);
    w.f64(st.time_reached);

    let g = &sim.genealogy;
    w.u64(g.len() as u64);
    for n in g.nodes() {
        w.words(n.id.0 .0);
        w.opt_node(n.parent);
        let [c0, c1] = n.children.map_or([None, None], |c| [Some(c[0]), Some(c[1])]);
        w.opt_node(c0);
        w.opt_node(c1);
        w.u32(n.depth);
        w.f64(n.birth_time);
        w.f64(n.birth_position);
        w.f64(n.end_time);
        w.f64(n.end_position);
        w.u8(n.end_kind.code());
    }
    match g.grid() {
        None => w.u8(0),
        Some(grid) => {
            w.u8(1);
            w.f64(grid.dt);
            for seg in &grid.segments {
                w.u32(seg.first_k);
                w.f64s(&seg.values);
            }
        }
    }

    w.u64(sim.snapshots.len() as u64);
    for s in &sim.snapshots {
        w.f64(s.time);
        w.u64(s.entries.len() as u64);
        for e in &s.entries {
            w.words(e.id.0 .0);
            w.opt_node(e.node);
            w.f64(e.position);
            w.u32(e.lineage);
        }
    }

    w.u64(sim.alive.len() as u64);
    for p in &sim.alive {
        w.words(p.id.0 .0);
        let (bk, bm) = p.base.raw();
        w.words(bk);
        w.words(bm);
        let (rk, rh, block, spare) = p.rng.raw_state();
        w.words(rk);
        w.words(rh);
        w.u32(block);
        w.u8(u8::from(spare.is_some()));
        w.u64(spare.unwrap_or(0));
        w.opt_node(p.node);
        w.u32(p.lineage);
        w.f64(p.pos);
        w.f64(p.time);
        w.f64(p.branch_at);
    }

    w.u64(accumulators.len() as u64);
    for a in accumulators {
        w.f64s(a.x_grid());
        w.f64s(a.mass());
        w.f64s(a.mass_ge());
        w.f64(a.elapsed());
        w.f64(a.t_start());
    }

    let total = (w.0.len() + 8) as u64;
    w.0[8..16].copy_from_slice(&total.to_le_bytes());
    let sum = checksum(&w.0);
    w.u64(sum);
    w.0
}

/// Restores a run saved by [`encode`]. `config` must carry the same root
/// stream as the saved run; the remaining settings are taken from it.
pub fn decode(bytes: &[u8], config: RunConfig) -> Result<(Simulation, Vec<ErgodicAccumulator>)> {
    decode_inner(bytes, config).map_err(BbmError::from)
}

fn decode_inner(
    bytes: &[u8],
    config: RunConfig,
) -> std::result::Result<(Simulation, Vec<ErgodicAccumulator>), CheckpointError> {
    let mut hr = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = hr.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = hr.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let total = hr.u64()? as usize;
    if bytes.len() < total {
        return Err(CheckpointError::Truncated {
            offset: bytes.len(),
            needed: total - bytes.len(),
        });
    }
    if bytes.len() > total || total < HEADER_LEN + 8 {
        return Err(CheckpointError::Malformed(format!(
            "length field {total} disagrees with file size {}",
            bytes.len()
        )));
    }
    let body = &bytes[..total - 8];
    let stored = u64::from_le_bytes(bytes[total - 8..total].try_into().unwrap());
    let computed = checksum(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut r = Reader {
        buf: body,
        pos: HEADER_LEN,
    };
    let root = RngStreamKey {
        trial_seed: r.u64()?,
        path: PathDigest(r.words()?),
        depth: r.u32()?,
    };
    if root != config.root_stream {
        return Err(CheckpointError::RootMismatch);
    }
    let horizon = r.f64()?;
    if horizon != config.horizon {
        return Err(CheckpointError::Malformed(format!(
            "saved horizon {horizon} differs from configured {}",
            config.horizon
        )));
    }
    let start = r.f64()?;
    let time = r.f64()?;
    let next_sync = r.u64()? as usize;
    let stats = RunStats {
        branch_events: r.u64()?,
        killed: r.u64()?,
        max_alive: r.u64()? as usize,
        final_alive: r.u64()? as usize,
        time_reached: r.f64()?,
    };

    let n_nodes = r.len(61)?;
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let id = ParticleId(PathDigest(r.words()?));
        let parent = r.opt_node()?;
        let c0 = r.opt_node()?;
        let c1 = r.opt_node()?;
        let children = match (c0, c1) {
            (Some(a), Some(b)) => Some([a, b]),
            (None, None) => None,
            _ => return Err(CheckpointError::Malformed("node with a single child".into())),
        };
        let depth = r.u32()?;
        let birth_time = r.f64()?;
        let birth_position = r.f64()?;
        let end_time = r.f64()?;
        let end_position = r.f64()?;
        let code = r.u8()?;
        let end_kind =
            EndKind::from_code(code).ok_or_else(|| CheckpointError::Malformed(format!("end kind {code}")))?;
        for link in [parent, c0, c1].into_iter().flatten() {
            if link.index() >= n_nodes {
                return Err(CheckpointError::Malformed(format!("node link {} out of range", link.0)));
            }
        }
        nodes.push(GenealogyNode {
            id,
            parent,
            children,
            depth,
            birth_time,
            birth_position,
            end_time,
            end_position,
            end_kind,
        });
    }
    let grid = match r.u8()? {
        0 => None,
        1 => {
            let dt = r.f64()?;
            let mut segments = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let first_k = r.u32()?;
                let values = r.f64s()?;
                segments.push(GridSegment { first_k, values });
            }
            Some(GridStore { dt, segments })
        }
        f => return Err(CheckpointError::Malformed(format!("grid flag {f}"))),
    };
    let genealogy = Genealogy::from_parts(nodes, grid);

    let n_snap = r.len(16)?;
    let mut snapshots = Vec::with_capacity(n_snap);
    for _ in 0..n_snap {
        let time = r.f64()?;
        let n = r.len(28)?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            entries.push(SnapshotEntry {
                id: ParticleId(PathDigest(r.words()?)),
                node: r.opt_node()?,
                position: r.f64()?,
                lineage: r.u32()?,
            });
        }
        snapshots.push(PopulationSnapshot { time, entries });
    }

    let n_alive = r.len(101)?;
    let mut alive = Vec::with_capacity(n_alive);
    for _ in 0..n_alive {
        let id = ParticleId(PathDigest(r.words()?));
        let base = StreamBase::from_raw(r.words()?, r.words()?);
        let rk = r.words()?;
        let rh = r.words()?;
        let block = r.u32()?;
        let has_spare = r.u8()?;
        let spare_word = r.u64()?;
        let spare = match has_spare {
            0 => None,
            1 => Some(spare_word),
            f => return Err(CheckpointError::Malformed(format!("spare flag {f}"))),
        };
        alive.push(Live {
            id,
            base,
            rng: StreamRng::from_raw_state(rk, rh, block, spare),
            node: r.opt_node()?,
            lineage: r.u32()?,
            pos: r.f64()?,
            time: r.f64()?,
            branch_at: r.f64()?,
        });
    }

    let n_acc = r.len(40)?;
    let mut accs = Vec::with_capacity(n_acc);
    for _ in 0..n_acc {
        let x = r.f64s()?;
        let le = r.f64s()?;
        let ge = r.f64s()?;
        let elapsed = r.f64()?;
        let t_start = r.f64()?;
        if le.len() != x.len() || ge.len() != x.len() {
            return Err(CheckpointError::Malformed("accumulator arrays differ in length".into()));
        }
        accs.push(ErgodicAccumulator::from_parts(x, le, ge, elapsed, t_start));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes before checksum",
            body.len() - r.pos
        )));
    }
    let sim = Simulation::restore(config, time, alive, genealogy, snapshots, stats, start, next_sync)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok((sim, accs))
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save(path: &Path, sim: &Simulation, accumulators: &[ErgodicAccumulator]) -> Result<()> {
    let bytes = encode(sim, accumulators);
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let io = |e: std::io::Error| BbmError::from(CheckpointError::Io(format!("{}: {e}", path.display())));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default()
    ));
    std::fs::write(&tmp, &bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load(path: &Path, config: RunConfig) -> Result<(Simulation, Vec<ErgodicAccumulator>)> {
    let bytes =
        std::fs::read(path).map_err(|e| BbmError::from(CheckpointError::Io(format!("{}: {e}", path.display()))))?;
    decode(&bytes, config)
}
