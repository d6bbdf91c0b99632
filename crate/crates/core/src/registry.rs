//! Frame-to-map instance registration.
//!
//! Global instances are splatted into the current view, matched one-to-one to
//! the frame's masks on 1 − IoU cost, and the matched (or newly minted)
//! masks are back-projected into per-block candidate point sets.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{physical_area, Channel};
use crate::error::{Error, Result};
use crate::frame::{CameraIntrinsics, FrameBundle, Pose};
use crate::hungarian::hungarian_assign;
use crate::map::{GlobalInstance, SemanticMap};
use crate::raster::{Mask, Raster};
use crate::sampling::{resolve_block, InstancePoint};
use crate::tsdf::{world_to_block, BlockCoord};
use crate::InstanceId;

/// Splat half-width in pixels around each projected point.
pub const SPLAT_RADIUS: i64 = 1;

/// Pixels covered by an instance's points in this view. A point counts only
/// when the frame's depth at its pixel agrees with the point's depth within
/// `occlusion_tolerance`.
pub fn project_instance(
    points: &[Vector3<f32>],
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    depth: &Raster<f32>,
    occlusion_tolerance: f64,
) -> Mask {
    let (w, h) = depth.dims();
    let mut mask = Mask::empty(w, h);
    for p in points {
        let cam = pose.world_to_camera(&p.map(|x| x as f64));
        if cam.z <= 0.0 {
            continue;
        }
        let Some((u, v)) = intrinsics.project_to_pixel(&cam) else { continue };
        if u >= w || v >= h {
            continue;
        }
        let d = *depth.get(u, v) as f64;
        if !(d > 0.0) || (cam.z - d).abs() > occlusion_tolerance {
            continue;
        }
        for dv in -SPLAT_RADIUS..=SPLAT_RADIUS {
            for du in -SPLAT_RADIUS..=SPLAT_RADIUS {
                let (su, sv) = (u as i64 + du, v as i64 + dv);
                if su >= 0 && sv >= 0 && su < w as i64 && sv < h as i64 {
                    mask.set(su as u32, sv as u32);
                }
            }
        }
    }
    mask
}

/// `1 − |A∩B| / |A∪B|` for every (projected, frame) pair; 1.0 when both are empty.
pub fn iou_cost_matrix(projected: &[Mask], frame: &[Mask]) -> Result<DMatrix<f64>> {
    let mut cost = DMatrix::from_element(projected.len(), frame.len(), 1.0);
    for (j, a) in projected.iter().enumerate() {
        for (k, b) in frame.iter().enumerate() {
            let union = a.union_count(b)?;
            if union > 0 {
                cost[(j, k)] = 1.0 - a.intersection_count(b)? as f64 / union as f64;
            }
        }
    }
    Ok(cost)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Matching {
    /// (global id, frame mask index) pairs, sorted by mask index.
    pub pairs: Vec<(InstanceId, usize)>,
    pub unmatched_masks: Vec<usize>,
    pub unmatched_instances: Vec<InstanceId>,
}

/// Optimal one-to-one matching of projected instances (rows, labelled by
/// `ids`) to frame masks (columns).
pub fn match_instances(
    ids: &[InstanceId],
    projected: &[Mask],
    frame: &[Mask],
    accept_threshold: f64,
) -> Result<Matching> {
    if ids.len() != projected.len() {
        return Err(Error::InvalidArgument("one id per projected mask required".into()));
    }
    let cost = iou_cost_matrix(projected, frame)?;
    let assignment = hungarian_assign(&cost, accept_threshold);
    let mut pairs: Vec<(InstanceId, usize)> = assignment.pairs.iter().map(|&(r, c)| (ids[r], c)).collect();
    pairs.sort_by_key(|&(_, k)| k);
    Ok(Matching {
        pairs,
        unmatched_masks: assignment.unmatched_cols,
        unmatched_instances: assignment.unmatched_rows.iter().map(|&r| ids[r]).collect(),
    })
}

/// Projects every instance that has points into the frame and matches the
/// non-empty projections against the frame masks.
pub fn match_frame(map: &SemanticMap, bundle: &FrameBundle, intrinsics: &CameraIntrinsics) -> Result<Matching> {
    let config = map.config();
    let tolerance = config.occlusion_tolerance();
    let instances: Vec<&GlobalInstance> = map.instances().collect();
    let projections: Vec<(InstanceId, Mask)> = instances
        .par_iter()
        .filter_map(|inst| {
            let points = map.instance_points(inst.id);
            if points.is_empty() {
                return None;
            }
            let mask = project_instance(&points, intrinsics, &bundle.pose, &bundle.depth, tolerance);
            (!mask.is_empty()).then_some((inst.id, mask))
        })
        .collect();
    let (ids, masks): (Vec<_>, Vec<_>) = projections.into_iter().unzip();
    let mut matching = match_instances(&ids, &masks, &bundle.masks, config.accept_threshold)?;
    let projected: BTreeSet<InstanceId> = ids.into_iter().collect();
    matching
        .unmatched_instances
        .extend(map.instances().map(|i| i.id).filter(|id| !projected.contains(id)));
    matching.unmatched_instances.sort_unstable();
    Ok(matching)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RegistrationReport {
    /// Candidate points back-projected per instance, before capacity limits.
    pub candidates: BTreeMap<InstanceId, usize>,
    pub new_ids: Vec<InstanceId>,
    /// Unmatched masks too small to become instances.
    pub dropped_masks: Vec<usize>,
    /// Blocks whose owner changed this frame.
    pub ownership_changes: usize,
}

fn back_project_mask(
    mask: &Mask,
    bundle: &FrameBundle,
    k: usize,
    intrinsics: &CameraIntrinsics,
    owner: InstanceId,
) -> Vec<InstancePoint> {
    let conf = &bundle.confidences[k];
    mask.iter_set()
        .filter_map(|(u, v)| {
            let d = *bundle.depth.get(u, v) as f64;
            if !(d > 0.0) {
                return None;
            }
            let world = bundle.pose.camera_to_world(&intrinsics.backproject(u as f64, v as f64, d));
            Some(InstancePoint {
                position: world.map(|x| x as f32),
                confidence: *conf.get(u, v),
                owner,
            })
        })
        .collect()
}

fn valid_pixels(mask: &Mask, depth: &Raster<f32>) -> usize {
    mask.iter_set().filter(|&(u, v)| *depth.get(u, v) > 0.0).count()
}

fn block_seed(seed: u64, frame: u64, c: &BlockCoord) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for x in [frame, c.ix as u32 as u64, c.iy as u32 as u64, c.iz as u32 as u64] {
        h = splitmix64(h ^ x);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Back-projects matched masks and mints instances for large-enough unmatched
/// masks, routes the points to blocks, resolves block ownership, and feeds the
/// semantic caches.
pub fn register_frame(
    map: &mut SemanticMap,
    bundle: &FrameBundle,
    intrinsics: &CameraIntrinsics,
    matching: &Matching,
) -> Result<RegistrationReport> {
    let k_count = bundle.masks.len();
    for &(id, k) in &matching.pairs {
        if k >= k_count {
            return Err(Error::InvalidArgument(format!("matching refers to mask {k} of {k_count}")));
        }
        if map.instance(id).is_none() {
            return Err(Error::UnknownInstance(id));
        }
    }
    let config = map.config().clone();
    let min_pixels = config.min_mask_pixels_at(intrinsics.width, intrinsics.height);
    let mut report = RegistrationReport::default();

    let mut assigned: Vec<(InstanceId, usize)> = matching.pairs.clone();
    for &k in &matching.unmatched_masks {
        if k >= k_count {
            return Err(Error::InvalidArgument(format!("matching refers to mask {k} of {k_count}")));
        }
        if valid_pixels(&bundle.masks[k], &bundle.depth) >= min_pixels {
            let id = map.mint_instance();
            report.new_ids.push(id);
            assigned.push((id, k));
        } else {
            report.dropped_masks.push(k);
        }
    }
    assigned.sort_by_key(|&(_, k)| k);

    let extent_params = *map.grid().params();
    let mut per_block: BTreeMap<BlockCoord, BTreeMap<InstanceId, Vec<InstancePoint>>> = BTreeMap::new();
    for &(id, k) in &assigned {
        let points = back_project_mask(&bundle.masks[k], bundle, k, intrinsics, id);
        report.candidates.insert(id, points.len());
        for p in points {
            let coord = world_to_block(&p.position.map(|x| x as f64), &extent_params)?;
            per_block.entry(coord).or_default().entry(id).or_default().push(p);
        }
    }

    for (coord, incoming) in per_block {
        let mut rng = ChaCha8Rng::seed_from_u64(block_seed(config.seed, bundle.index, &coord));
        let block = map.grid_mut().block_or_insert(coord);
        let res = resolve_block(&mut block.points, incoming, config.block_capacity, config.sampling, &mut rng);
        if res.previous_owner != res.owner {
            report.ownership_changes += 1;
            if let Some(prev) = res.previous_owner.and_then(|p| map.instance_mut(p)) {
                prev.block_refs.remove(&coord);
                prev.point_count -= res.previous_count;
            }
            if let Some(inst) = res.owner.and_then(|o| map.instance_mut(o)) {
                inst.block_refs.insert(coord);
                inst.point_count += res.retained;
            }
        } else if let Some(inst) = res.owner.and_then(|o| map.instance_mut(o)) {
            inst.point_count = inst.point_count + res.retained - res.previous_count;
        }
    }

    for &(id, k) in &assigned {
        let area = physical_area(&bundle.masks[k], &bundle.depth, intrinsics, config.area_mode)?;
        if !(area > 0.0) {
            continue;
        }
        let emb = &bundle.embeddings[k];
        let (instance, semantics) = map.instance_and_semantics(id)?;
        update_channel(instance, semantics, Channel::Object, area, &emb.object, bundle.index)?;
        update_channel(instance, semantics, Channel::Environment, area, &emb.environment, bundle.index)?;
    }
    Ok(report)
}

fn update_channel(
    instance: &mut GlobalInstance,
    semantics: &mut crate::cache::GlobalSemantics,
    channel: Channel,
    area: f64,
    embedding: &[f32],
    frame: u64,
) -> Result<()> {
    if embedding.is_empty() {
        return Ok(());
    }
    let cache = match channel {
        Channel::Object => &mut instance.object_cache,
        Channel::Environment => &mut instance.environment_cache,
    };
    if cache.insert(area, embedding.to_vec(), frame)?.mutated() {
        semantics.update_global(instance.id, channel, cache)?;
    }
    Ok(())
}
