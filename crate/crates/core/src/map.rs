//! The semantic map: TSDF grid, global instances and their fused semantics.
//!
//! Map file layout (little-endian):
//!
//! ```text
//! magic "SEMMAP\0\x01"
//! config        u32 len + TOML bytes
//! scene id      u32 len + UTF-8 bytes (len 0 = none)
//! frames        u64 frames integrated
//! next id       u32
//! blocks        u64 count, ascending by coordinate, each:
//!                 i32 ix, iy, iz
//!                 voxels_per_side³ × (f32 tsdf, f32 weight, u8 r, g, b)
//!                 u32 owner (u32::MAX = none), u32 n, n × (f32 x, y, z, conf)
//! instances     u32 count, ascending by id, each:
//!                 u32 id
//!                 object cache, environment cache:
//!                   u32 capacity, u64 next seq, u32 n,
//!                   n × (f64 area, u64 frame, u64 seq, u32 d, d × f32)
//!                 fused object, fused environment: u8 present, u32 d, d × f32
//! ```
//!
//! Block references and point counts are rebuilt from block owners on load.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::time::Instant;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::Serialize;

use crate::cache::{CacheEntry, GlobalEmbedding, GlobalSemantics, SemanticCache};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::frame::{CameraIntrinsics, FrameBundle};
use crate::registry::{match_frame, register_frame, RegistrationReport};
use crate::sampling::{BlockPointSet, InstancePoint};
use crate::tsdf::{BlockCoord, IntegrationStats, Voxel, VoxelBlock, VoxelBlockGrid};
use crate::InstanceId;

pub const MAP_MAGIC: &[u8; 8] = b"SEMMAP\0\x01";

#[derive(Debug, Clone)]
pub struct GlobalInstance {
    pub id: InstanceId,
    /// Blocks whose point set this instance owns.
    pub block_refs: BTreeSet<BlockCoord>,
    pub object_cache: SemanticCache,
    pub environment_cache: SemanticCache,
    pub point_count: usize,
}

/// Wall-clock seconds spent in each ingest stage of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub integrate: f64,
    pub project_match: f64,
    pub register: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.integrate + self.project_match + self.register
    }

    pub fn add(&mut self, other: &StageTimings) {
        self.integrate += other.integrate;
        self.project_match += other.project_match;
        self.register += other.register;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub index: u64,
    pub integration: IntegrationStats,
    pub matched: usize,
    pub registration: RegistrationReport,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct SemanticMap {
    config: EngineConfig,
    grid: VoxelBlockGrid,
    instances: BTreeMap<InstanceId, GlobalInstance>,
    semantics: GlobalSemantics,
    next_id: u32,
    scene_id: Option<String>,
    frames: u64,
}

impl SemanticMap {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            grid: VoxelBlockGrid::new(config.grid_params()),
            config,
            instances: BTreeMap::new(),
            semantics: GlobalSemantics::new(),
            next_id: 0,
            scene_id: None,
            frames: 0,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn grid(&self) -> &VoxelBlockGrid {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut VoxelBlockGrid {
        &mut self.grid
    }

    pub fn semantics(&self) -> &GlobalSemantics {
        &self.semantics
    }

    pub fn scene_id(&self) -> Option<&str> {
        self.scene_id.as_deref()
    }

    pub fn set_scene_id(&mut self, id: Option<String>) {
        self.scene_id = id;
    }

    pub fn frames_integrated(&self) -> u64 {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instances in ascending id order.
    pub fn instances(&self) -> impl Iterator<Item = &GlobalInstance> {
        self.instances.values()
    }

    pub fn instance(&self, id: InstanceId) -> Option<&GlobalInstance> {
        self.instances.get(&id)
    }

    pub fn instance_mut(&mut self, id: InstanceId) -> Option<&mut GlobalInstance> {
        self.instances.get_mut(&id)
    }

    pub(crate) fn instance_and_semantics(
        &mut self,
        id: InstanceId,
    ) -> Result<(&mut GlobalInstance, &mut GlobalSemantics)> {
        let inst = self.instances.get_mut(&id).ok_or(Error::UnknownInstance(id))?;
        Ok((inst, &mut self.semantics))
    }

    /// Allocates a fresh instance with empty caches.
    pub fn mint_instance(&mut self) -> InstanceId {
        let id = InstanceId(self.next_id);
        self.next_id += 1;
        self.instances.insert(
            id,
            GlobalInstance {
                id,
                block_refs: BTreeSet::new(),
                object_cache: SemanticCache::new(self.config.cache_capacity),
                environment_cache: SemanticCache::new(self.config.environment_cache_capacity),
                point_count: 0,
            },
        );
        self.semantics.register(id);
        id
    }

    /// Retained points of every block `id` owns, in block order.
    pub fn instance_points(&self, id: InstanceId) -> Vec<Vector3<f32>> {
        let Some(inst) = self.instances.get(&id) else { return Vec::new() };
        inst.block_refs
            .iter()
            .filter_map(|c| self.grid.block(c))
            .flat_map(|b| b.points.points.iter().map(|p| p.position))
            .collect()
    }

    /// All retained instance points, in block order.
    pub fn labeled_points(&self) -> Vec<InstancePoint> {
        self.grid
            .sorted_coords()
            .iter()
            .flat_map(|c| self.grid.block(c).expect("listed").points.points.iter().copied())
            .collect()
    }

    /// Checks that block owners and instance block references agree.
    pub fn check_ownership(&self) -> Result<()> {
        let mut owned: BTreeMap<InstanceId, (BTreeSet<BlockCoord>, usize)> = BTreeMap::new();
        for (coord, block) in self.grid.blocks() {
            let set = &block.points;
            if let Some(owner) = set.owner {
                if set.points.iter().any(|p| p.owner != owner) {
                    return Err(Error::Format(format!("block {coord:?} mixes owners")));
                }
                if set.points.len() > self.config.block_capacity {
                    return Err(Error::Format(format!("block {coord:?} exceeds capacity")));
                }
                let e = owned.entry(owner).or_default();
                e.0.insert(*coord);
                e.1 += set.points.len();
            } else if !set.points.is_empty() {
                return Err(Error::Format(format!("block {coord:?} has points but no owner")));
            }
        }
        for inst in self.instances.values() {
            let (refs, count) = owned.remove(&inst.id).unwrap_or_default();
            if refs != inst.block_refs || count != inst.point_count {
                return Err(Error::Format(format!("instance {} block references are stale", inst.id)));
            }
        }
        if let Some(id) = owned.keys().next() {
            return Err(Error::UnknownInstance(*id));
        }
        Ok(())
    }

    /// Integrates geometry, matches instances and registers one frame.
    pub fn ingest(&mut self, bundle: &FrameBundle, intrinsics: &CameraIntrinsics) -> Result<FrameReport> {
        let frame_err = |e: Error| match e {
            Error::Frame { .. } => e,
            other => Error::frame(bundle.index, other.to_string()),
        };
        let t0 = Instant::now();
        let integration = self
            .grid
            .integrate_frame(&bundle.depth, bundle.color.as_ref(), intrinsics, &bundle.pose)
            .map_err(frame_err)?;
        let t1 = Instant::now();
        let matching = match_frame(self, bundle, intrinsics).map_err(frame_err)?;
        let t2 = Instant::now();
        let registration = register_frame(self, bundle, intrinsics, &matching).map_err(frame_err)?;
        let t3 = Instant::now();
        self.frames += 1;
        Ok(FrameReport {
            index: bundle.index,
            integration,
            matched: matching.pairs.len(),
            registration,
            timings: StageTimings {
                integrate: (t1 - t0).as_secs_f64(),
                project_match: (t2 - t1).as_secs_f64(),
                register: (t3 - t2).as_secs_f64(),
            },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    fn write_to(&self, w: &mut Vec<u8>) -> std::io::Result<()> {
        w.write_all(MAP_MAGIC)?;
        write_str(w, &self.config.to_toml_string())?;
        write_str(w, self.scene_id.as_deref().unwrap_or(""))?;
        w.write_u64::<LE>(self.frames)?;
        w.write_u32::<LE>(self.next_id)?;

        let coords = self.grid.sorted_coords();
        w.write_u64::<LE>(coords.len() as u64)?;
        for c in &coords {
            let block = self.grid.block(c).expect("listed");
            for x in [c.ix, c.iy, c.iz] {
                w.write_i32::<LE>(x)?;
            }
            for v in &block.voxels {
                w.write_f32::<LE>(v.tsdf)?;
                w.write_f32::<LE>(v.weight)?;
                w.write_all(&v.color)?;
            }
            w.write_u32::<LE>(block.points.owner.map_or(u32::MAX, |o| o.0))?;
            w.write_u32::<LE>(block.points.points.len() as u32)?;
            for p in &block.points.points {
                for x in p.position.iter() {
                    w.write_f32::<LE>(*x)?;
                }
                w.write_f32::<LE>(p.confidence)?;
            }
        }

        w.write_u32::<LE>(self.instances.len() as u32)?;
        for inst in self.instances.values() {
            w.write_u32::<LE>(inst.id.0)?;
            write_cache(w, &inst.object_cache)?;
            write_cache(w, &inst.environment_cache)?;
            let g = self.semantics.get(inst.id).cloned().unwrap_or_default();
            write_opt_vec(w, g.object.as_deref())?;
            write_opt_vec(w, g.environment.as_deref())?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        Self::read_from(&mut r).map_err(|e| match e {
            MapReadError::Io(io) => Error::Format(format!("truncated map file: {io}")),
            MapReadError::Engine(e) => e,
        })
    }

    fn read_from(r: &mut Cursor<&[u8]>) -> std::result::Result<Self, MapReadError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAP_MAGIC {
            return Err(Error::Format("not a map file (bad magic)".into()).into());
        }
        let config = EngineConfig::from_toml_str(&read_str(r)?)?;
        let scene = read_str(r)?;
        let frames = r.read_u64::<LE>()?;
        let next_id = r.read_u32::<LE>()?;

        let mut map = SemanticMap::new(config);
        map.scene_id = (!scene.is_empty()).then_some(scene);
        map.frames = frames;
        map.next_id = next_id;

        let params = *map.grid.params();
        let n_voxels = params.voxels_per_block();
        let n_blocks = r.read_u64::<LE>()?;
        let mut owners: BTreeMap<InstanceId, (BTreeSet<BlockCoord>, usize)> = BTreeMap::new();
        for _ in 0..n_blocks {
            let coord = BlockCoord::new(r.read_i32::<LE>()?, r.read_i32::<LE>()?, r.read_i32::<LE>()?);
            let mut block = VoxelBlock::new(&params);
            for v in block.voxels.iter_mut().take(n_voxels) {
                let tsdf = r.read_f32::<LE>()?;
                let weight = r.read_f32::<LE>()?;
                let mut color = [0u8; 3];
                r.read_exact(&mut color)?;
                *v = Voxel { tsdf, weight, color };
            }
            let owner = match r.read_u32::<LE>()? {
                u32::MAX => None,
                id => Some(InstanceId(id)),
            };
            let count = r.read_u32::<LE>()? as usize;
            if owner.is_none() && count > 0 {
                return Err(Error::Format(format!("block {coord:?} has points but no owner")).into());
            }
            let mut points = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                let position = Vector3::new(r.read_f32::<LE>()?, r.read_f32::<LE>()?, r.read_f32::<LE>()?);
                let confidence = r.read_f32::<LE>()?;
                points.push(InstancePoint {
                    position,
                    confidence,
                    owner: owner.expect("checked above"),
                });
            }
            if let Some(o) = owner {
                let e = owners.entry(o).or_default();
                e.0.insert(coord);
                e.1 += count;
            }
            block.points = BlockPointSet { owner, points };
            map.grid.insert_block(coord, block);
        }

        let n_instances = r.read_u32::<LE>()?;
        for _ in 0..n_instances {
            let id = InstanceId(r.read_u32::<LE>()?);
            let object_cache = read_cache(r)?;
            let environment_cache = read_cache(r)?;
            let object = read_opt_vec(r)?;
            let environment = read_opt_vec(r)?;
            let (block_refs, point_count) = owners.remove(&id).unwrap_or_default();
            map.instances.insert(
                id,
                GlobalInstance {
                    id,
                    block_refs,
                    object_cache,
                    environment_cache,
                    point_count,
                },
            );
            map.semantics.insert(id, GlobalEmbedding { object, environment });
        }
        if let Some(id) = owners.keys().next() {
            return Err(Error::Format(format!("block owner {id} is not an instance")).into());
        }
        if r.position() as usize != r.get_ref().len() {
            return Err(Error::Format("trailing bytes after map data".into()).into());
        }
        Ok(map)
    }
}

enum MapReadError {
    Io(std::io::Error),
    Engine(Error),
}

impl From<std::io::Error> for MapReadError {
    fn from(e: std::io::Error) -> Self {
        MapReadError::Io(e)
    }
}

impl From<Error> for MapReadError {
    fn from(e: Error) -> Self {
        MapReadError::Engine(e)
    }
}

fn write_str(w: &mut Vec<u8>, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut Cursor<&[u8]>) -> std::result::Result<String, MapReadError> {
    let len = r.read_u32::<LE>()? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(Error::Format("string length exceeds file size".into()).into());
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()).into())
}

fn write_vec(w: &mut Vec<u8>, v: &[f32]) -> std::io::Result<()> {
    w.write_u32::<LE>(v.len() as u32)?;
    for x in v {
        w.write_f32::<LE>(*x)?;
    }
    Ok(())
}

fn read_vec(r: &mut Cursor<&[u8]>) -> std::result::Result<Vec<f32>, MapReadError> {
    let len = r.read_u32::<LE>()? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len * 4 > remaining {
        return Err(Error::Format("vector length exceeds file size".into()).into());
    }
    let mut v = vec![0f32; len];
    r.read_f32_into::<LE>(&mut v)?;
    Ok(v)
}

fn write_opt_vec(w: &mut Vec<u8>, v: Option<&[f32]>) -> std::io::Result<()> {
    match v {
        Some(v) => {
            w.write_u8(1)?;
            write_vec(w, v)
        }
        None => w.write_u8(0),
    }
}

fn read_opt_vec(r: &mut Cursor<&[u8]>) -> std::result::Result<Option<Vec<f32>>, MapReadError> {
    match r.read_u8()? {
        0 => Ok(None),
        1 => Ok(Some(read_vec(r)?)),
        f => Err(Error::Format(format!("bad presence flag {f}")).into()),
    }
}

fn write_cache(w: &mut Vec<u8>, cache: &SemanticCache) -> std::io::Result<()> {
    w.write_u32::<LE>(cache.capacity() as u32)?;
    w.write_u64::<LE>(cache.next_seq())?;
    let entries = cache.entries();
    w.write_u32::<LE>(entries.len() as u32)?;
    for e in entries {
        w.write_f64::<LE>(e.area)?;
        w.write_u64::<LE>(e.frame)?;
        w.write_u64::<LE>(e.seq)?;
        write_vec(w, &e.embedding)?;
    }
    Ok(())
}

fn read_cache(r: &mut Cursor<&[u8]>) -> std::result::Result<SemanticCache, MapReadError> {
    let capacity = r.read_u32::<LE>()? as usize;
    if capacity == 0 {
        return Err(Error::Format("cache capacity 0".into()).into());
    }
    let next_seq = r.read_u64::<LE>()?;
    let n = r.read_u32::<LE>()? as usize;
    let mut entries = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let area = r.read_f64::<LE>()?;
        let frame = r.read_u64::<LE>()?;
        let seq = r.read_u64::<LE>()?;
        let embedding = read_vec(r)?;
        entries.push(CacheEntry { area, embedding, frame, seq });
    }
    Ok(SemanticCache::from_entries(capacity, entries, next_seq)?)
}
