//! Sparse voxel-block TSDF map.
//!
//! Voxel samples sit on the lattice `g · voxel_size` for integer `g`. Block
//! `b` owns lattice indices `b · voxels_per_side .. (b + 1) · voxels_per_side`
//! along each axis, which places every sample of the block inside
//! `[b · extent, (b + 1) · extent)`.

use std::collections::{HashMap, HashSet};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{CameraIntrinsics, Pose};
use crate::raster::Raster;
use crate::sampling::BlockPointSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub voxel_size: f64,
    pub voxels_per_side: u32,
    pub truncation: f64,
    pub max_weight: f32,
}

impl Default for GridParams {
    fn default() -> Self {
        let voxel_size = 8.0 / 512.0;
        Self {
            voxel_size,
            voxels_per_side: 8,
            truncation: 4.0 * voxel_size,
            max_weight: 64.0,
        }
    }
}

impl GridParams {
    pub fn block_extent(&self) -> f64 {
        self.voxel_size * self.voxels_per_side as f64
    }

    pub fn voxels_per_block(&self) -> usize {
        (self.voxels_per_side as usize).pow(3)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.truncation > 0.0 && self.max_weight >= 1.0)
            || self.voxels_per_side == 0
        {
            return Err(Error::Config(format!("invalid grid parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockCoord {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl BlockCoord {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        Self { ix, iy, iz }
    }

    pub fn origin(&self, params: &GridParams) -> Vector3<f64> {
        Vector3::new(self.ix as f64, self.iy as f64, self.iz as f64) * params.block_extent()
    }
}

/// Floor division that assigns points lying exactly on a block face to the higher block.
fn floor_index(x: f64, extent: f64) -> i32 {
    let mut q = (x / extent).floor();
    if (q + 1.0) * extent <= x {
        q += 1.0;
    } else if q * extent > x {
        q -= 1.0;
    }
    q as i32
}

pub fn world_to_block(point: &Vector3<f64>, params: &GridParams) -> Result<BlockCoord> {
    if !point.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite point {point:?}")));
    }
    Ok(block_of(point, params.block_extent()))
}

#[inline]
fn block_of(point: &Vector3<f64>, extent: f64) -> BlockCoord {
    BlockCoord::new(
        floor_index(point.x, extent),
        floor_index(point.y, extent),
        floor_index(point.z, extent),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voxel {
    /// Truncated signed distance divided by the truncation band, in [-1, 1].
    pub tsdf: f32,
    /// Observation count, capped at the grid's max weight. 0 means unobserved.
    pub weight: f32,
    pub color: [u8; 3],
}

impl Default for Voxel {
    fn default() -> Self {
        Self {
            tsdf: 1.0,
            weight: 0.0,
            color: [0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelBlock {
    pub voxels: Vec<Voxel>,
    pub points: BlockPointSet,
}

impl VoxelBlock {
    pub fn new(params: &GridParams) -> Self {
        Self {
            voxels: vec![Voxel::default(); params.voxels_per_block()],
            points: BlockPointSet::default(),
        }
    }

    pub fn is_observed(&self) -> bool {
        self.voxels.iter().any(|v| v.weight > 0.0)
    }

    fn is_vacant(&self) -> bool {
        !self.is_observed() && self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IntegrationStats {
    pub blocks_touched: usize,
    pub blocks_allocated: usize,
    pub voxels_updated: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f32>>,
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct VoxelBlockGrid {
    params: GridParams,
    blocks: HashMap<BlockCoord, VoxelBlock>,
}

/// Samples per ray used to find the blocks inside the truncation band.
const ALLOCATION_SAMPLES: usize = 5;

impl VoxelBlockGrid {
    pub fn new(params: GridParams) -> Self {
        Self {
            params,
            blocks: HashMap::new(),
        }
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, coord: &BlockCoord) -> Option<&VoxelBlock> {
        self.blocks.get(coord)
    }

    pub fn block_mut(&mut self, coord: &BlockCoord) -> Option<&mut VoxelBlock> {
        self.blocks.get_mut(coord)
    }

    pub fn block_or_insert(&mut self, coord: BlockCoord) -> &mut VoxelBlock {
        let params = self.params;
        self.blocks.entry(coord).or_insert_with(|| VoxelBlock::new(&params))
    }

    pub(crate) fn insert_block(&mut self, coord: BlockCoord, block: VoxelBlock) {
        self.blocks.insert(coord, block);
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&BlockCoord, &VoxelBlock)> {
        self.blocks.iter()
    }

    /// Block coordinates in ascending order.
    pub fn sorted_coords(&self) -> Vec<BlockCoord> {
        let mut coords: Vec<_> = self.blocks.keys().copied().collect();
        coords.sort_unstable();
        coords
    }

    #[inline]
    fn local_index(&self, lx: usize, ly: usize, lz: usize) -> usize {
        let n = self.params.voxels_per_side as usize;
        (lz * n + ly) * n + lx
    }

    /// Lattice position of a voxel.
    #[inline]
    pub fn voxel_position(&self, coord: &BlockCoord, lx: usize, ly: usize, lz: usize) -> Vector3<f64> {
        let n = self.params.voxels_per_side as i64;
        let g = Vector3::new(
            coord.ix as i64 * n + lx as i64,
            coord.iy as i64 * n + ly as i64,
            coord.iz as i64 * n + lz as i64,
        );
        g.map(|x| x as f64) * self.params.voxel_size
    }

    /// Voxel at global lattice index, if its block exists.
    pub fn voxel_at(&self, g: [i64; 3]) -> Option<&Voxel> {
        let n = self.params.voxels_per_side as i64;
        let coord = BlockCoord::new(
            g[0].div_euclid(n) as i32,
            g[1].div_euclid(n) as i32,
            g[2].div_euclid(n) as i32,
        );
        let block = self.blocks.get(&coord)?;
        let l = g.map(|x| x.rem_euclid(n) as usize);
        Some(&block.voxels[self.local_index(l[0], l[1], l[2])])
    }

    /// Fuses one depth frame by projecting the voxels of every block that the
    /// frame's truncation band passes through.
    pub fn integrate_frame(
        &mut self,
        depth: &Raster<f32>,
        color: Option<&Raster<[u8; 3]>>,
        intrinsics: &CameraIntrinsics,
        pose: &Pose,
    ) -> Result<IntegrationStats> {
        if depth.dims() != (intrinsics.width, intrinsics.height) {
            return Err(Error::InvalidArgument(format!(
                "depth {:?} does not match intrinsics {}x{}",
                depth.dims(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        if let Some(c) = color {
            if c.dims() != depth.dims() {
                return Err(Error::InvalidArgument("color and depth dimensions differ".into()));
            }
        }

        let touched = self.touched_blocks(depth, intrinsics, pose);
        if touched.is_empty() {
            return Ok(IntegrationStats::default());
        }

        let mut allocated = Vec::new();
        for coord in &touched {
            if !self.blocks.contains_key(coord) {
                self.blocks.insert(*coord, VoxelBlock::new(&self.params));
                allocated.push(*coord);
            }
        }

        let params = self.params;
        let n = params.voxels_per_side as usize;
        let updated: usize = self
            .blocks
            .par_iter_mut()
            .filter(|(c, _)| touched.contains(c))
            .map(|(coord, block)| {
                let origin = coord.origin(&params);
                let mut count = 0;
                for lz in 0..n {
                    for ly in 0..n {
                        for lx in 0..n {
                            let world = origin
                                + Vector3::new(lx as f64, ly as f64, lz as f64) * params.voxel_size;
                            let voxel = &mut block.voxels[(lz * n + ly) * n + lx];
                            if update_voxel(voxel, &world, depth, color, intrinsics, pose, &params) {
                                count += 1;
                            }
                        }
                    }
                }
                count
            })
            .sum();

        // Drop blocks allocated this frame that no voxel update reached.
        let mut blocks_allocated = allocated.len();
        for coord in allocated {
            if self.blocks.get(&coord).is_some_and(VoxelBlock::is_vacant) {
                self.blocks.remove(&coord);
                blocks_allocated -= 1;
            }
        }

        Ok(IntegrationStats {
            blocks_touched: touched.len(),
            blocks_allocated,
            voxels_updated: updated,
        })
    }

    fn touched_blocks(&self, depth: &Raster<f32>, intr: &CameraIntrinsics, pose: &Pose) -> HashSet<BlockCoord> {
        let extent = self.params.block_extent();
        let trunc = self.params.truncation;
        let width = depth.width();
        (0..depth.height())
            .into_par_iter()
            .fold(HashSet::new, |mut acc, v| {
                for u in 0..width {
                    let d = *depth.get(u, v) as f64;
                    if !(d > 0.0) {
                        continue;
                    }
                    for s in 0..ALLOCATION_SAMPLES {
                        let offset = -trunc + 2.0 * trunc * s as f64 / (ALLOCATION_SAMPLES - 1) as f64;
                        let z = d + offset;
                        if z <= 0.0 {
                            continue;
                        }
                        let p = pose.camera_to_world(&intr.backproject(u as f64, v as f64, z));
                        acc.insert(block_of(&p, extent));
                    }
                }
                acc
            })
            .reduce(HashSet::new, |mut a, b| {
                a.extend(b);
                a
            })
    }

    /// Zero crossings of the TSDF between face-adjacent observed voxels,
    /// linearly interpolated along the connecting axis.
    pub fn extract_surface_points(&self) -> PointCloud {
        let n = self.params.voxels_per_side as usize;
        let vs = self.params.voxel_size;
        let mut cloud = PointCloud::default();
        for coord in self.sorted_coords() {
            let block = &self.blocks[&coord];
            for lz in 0..n {
                for ly in 0..n {
                    for lx in 0..n {
                        let a = &block.voxels[self.local_index(lx, ly, lz)];
                        if !is_surface_candidate(a) {
                            continue;
                        }
                        let g = [
                            coord.ix as i64 * n as i64 + lx as i64,
                            coord.iy as i64 * n as i64 + ly as i64,
                            coord.iz as i64 * n as i64 + lz as i64,
                        ];
                        for axis in 0..3 {
                            let mut gn = g;
                            gn[axis] += 1;
                            let Some(b) = self.voxel_at(gn) else { continue };
                            if !is_surface_candidate(b) || (a.tsdf < 0.0) == (b.tsdf < 0.0) {
                                continue;
                            }
                            let t = (a.tsdf / (a.tsdf - b.tsdf)) as f64;
                            let mut p = Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64) * vs;
                            p[axis] += t * vs;
                            cloud.positions.push(p.map(|x| x as f32));
                            cloud.colors.push(lerp_color(a.color, b.color, t));
                        }
                    }
                }
            }
        }
        cloud
    }
}

#[inline]
fn is_surface_candidate(v: &Voxel) -> bool {
    v.weight > 0.0 && v.tsdf.abs() < 1.0
}

fn lerp_color(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let mut out = [0u8; 3];
    for i in 0..3 {
        out[i] = (a[i] as f64 * (1.0 - t) + b[i] as f64 * t).round() as u8;
    }
    out
}

#[inline]
fn update_voxel(
    voxel: &mut Voxel,
    world: &Vector3<f64>,
    depth: &Raster<f32>,
    color: Option<&Raster<[u8; 3]>>,
    intr: &CameraIntrinsics,
    pose: &Pose,
    params: &GridParams,
) -> bool {
    let cam = pose.world_to_camera(world);
    let Some((u, v)) = intr.project_to_pixel(&cam) else {
        return false;
    };
    let d = *depth.get(u, v) as f64;
    if !(d > 0.0) {
        return false;
    }
    let sdf = d - cam.z;
    if sdf.abs() > params.truncation {
        return false;
    }
    let observed = (sdf / params.truncation).clamp(-1.0, 1.0) as f32;
    let w = voxel.weight;
    voxel.tsdf = ((w * voxel.tsdf + observed) / (w + 1.0)).clamp(-1.0, 1.0);
    if let Some(c) = color {
        let rgb = c.get(u, v);
        for (dst, &src) in voxel.color.iter_mut().zip(rgb) {
            *dst = ((w * *dst as f32 + src as f32) / (w + 1.0)).round() as u8;
        }
    }
    voxel.weight = (w + 1.0).min(params.max_weight);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_frame(z: f32, w: u32, h: u32) -> (Raster<f32>, CameraIntrinsics) {
        let intr = CameraIntrinsics::new(100.0, 100.0, (w / 2) as f64, (h / 2) as f64, w, h).unwrap();
        (Raster::filled(w, h, z), intr)
    }

    #[test]
    fn world_to_block_examples() {
        let p = GridParams { voxel_size: 0.125 / 8.0, ..GridParams::default() };
        assert_eq!(world_to_block(&Vector3::zeros(), &p).unwrap(), BlockCoord::new(0, 0, 0));
        assert_eq!(
            world_to_block(&Vector3::new(-0.01, 0.0, 0.13), &p).unwrap(),
            BlockCoord::new(-1, 0, 1)
        );
        assert_eq!(
            world_to_block(&Vector3::new(0.125, 0.0, 0.0), &p).unwrap(),
            BlockCoord::new(1, 0, 0)
        );
        assert!(world_to_block(&Vector3::new(f64::NAN, 0.0, 0.0), &p).is_err());
    }

    #[test]
    fn boundary_belongs_to_higher_block_for_awkward_extents() {
        let p = GridParams { voxel_size: 0.1, voxels_per_side: 3, ..GridParams::default() };
        let extent = p.block_extent();
        for k in -20..20 {
            let x = k as f64 * extent;
            assert_eq!(world_to_block(&Vector3::new(x, 0.0, 0.0), &p).unwrap().ix, k, "k={k}");
        }
    }

    #[test]
    fn plane_voxels_after_one_frame() {
        let params = GridParams { voxel_size: 0.05, voxels_per_side: 8, truncation: 0.06, max_weight: 64.0 };
        let (depth, intr) = plane_frame(2.0, 64, 48);
        let mut grid = VoxelBlockGrid::new(params);
        let stats = grid.integrate_frame(&depth, None, &intr, &Pose::identity()).unwrap();
        assert!(stats.voxels_updated > 0);
        let at_surface = grid.voxel_at([0, 0, 40]).unwrap();
        assert!(at_surface.tsdf.abs() < 1e-6);
        assert_eq!(at_surface.weight, 1.0);
        let front = grid.voxel_at([0, 0, 39]).unwrap();
        assert!((front.tsdf - 0.05 / 0.06).abs() < 1e-5, "{}", front.tsdf);
        // Far in front of the surface: outside the band, never updated.
        let free = grid.voxel_at([0, 0, 30]);
        assert!(free.is_none_or(|v| v.weight == 0.0));
    }

    #[test]
    fn same_frame_twice_is_a_value_fixpoint() {
        let params = GridParams { voxel_size: 0.05, voxels_per_side: 8, truncation: 0.06, max_weight: 64.0 };
        let (depth, intr) = plane_frame(2.0, 64, 48);
        let mut grid = VoxelBlockGrid::new(params);
        grid.integrate_frame(&depth, None, &intr, &Pose::identity()).unwrap();
        let once: Vec<Voxel> = grid.sorted_coords().iter().flat_map(|c| grid.block(c).unwrap().voxels.clone()).collect();
        grid.integrate_frame(&depth, None, &intr, &Pose::identity()).unwrap();
        let twice: Vec<Voxel> = grid.sorted_coords().iter().flat_map(|c| grid.block(c).unwrap().voxels.clone()).collect();
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            assert!((a.tsdf - b.tsdf).abs() < 1e-6);
            assert_eq!(b.weight, 2.0 * a.weight);
        }
    }

    #[test]
    fn weight_saturates_at_max() {
        let params = GridParams { max_weight: 3.0, ..GridParams::default() };
        let (depth, intr) = plane_frame(1.0, 32, 24);
        let mut grid = VoxelBlockGrid::new(params);
        for _ in 0..6 {
            grid.integrate_frame(&depth, None, &intr, &Pose::identity()).unwrap();
        }
        for (_, b) in grid.blocks() {
            assert!(b.voxels.iter().all(|v| v.weight <= 3.0 && v.tsdf.abs() <= 1.0));
        }
    }

    #[test]
    fn all_invalid_depth_is_noop() {
        let (mut depth, intr) = plane_frame(0.0, 16, 16);
        depth.data_mut().fill(0.0);
        let mut grid = VoxelBlockGrid::new(GridParams::default());
        let stats = grid.integrate_frame(&depth, None, &intr, &Pose::identity()).unwrap();
        assert_eq!(stats, IntegrationStats::default());
        assert!(grid.is_empty());
        assert!(grid.extract_surface_points().is_empty());
    }

    #[test]
    fn mismatched_depth_rejected() {
        let (depth, _) = plane_frame(1.0, 16, 16);
        let intr = CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap();
        let mut grid = VoxelBlockGrid::new(GridParams::default());
        assert!(grid.integrate_frame(&depth, None, &intr, &Pose::identity()).is_err());
    }

    #[test]
    fn plane_surface_points_lie_on_plane() {
        let params = GridParams::default();
        let (depth, intr) = plane_frame(2.0, 80, 60);
        let mut grid = VoxelBlockGrid::new(params);
        grid.integrate_frame(&depth, None, &intr, &Pose::identity()).unwrap();
        let cloud = grid.extract_surface_points();
        assert!(cloud.len() > 100);
        for p in &cloud.positions {
            assert!(((p.z as f64) - 2.0).abs() < params.voxel_size, "{p:?}");
        }
    }

    #[test]
    fn color_running_mean() {
        let params = GridParams { voxel_size: 0.05, voxels_per_side: 8, truncation: 0.06, max_weight: 64.0 };
        let (depth, intr) = plane_frame(2.0, 32, 24);
        let red = Raster::filled(32, 24, [200u8, 0, 0]);
        let blue = Raster::filled(32, 24, [0u8, 0, 100]);
        let mut grid = VoxelBlockGrid::new(params);
        grid.integrate_frame(&depth, Some(&red), &intr, &Pose::identity()).unwrap();
        grid.integrate_frame(&depth, Some(&blue), &intr, &Pose::identity()).unwrap();
        assert_eq!(grid.voxel_at([0, 0, 40]).unwrap().color, [100, 0, 50]);
    }
}
