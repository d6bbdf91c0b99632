//! Per-block point capacity enforcement.
//!
//! Each voxel block keeps at most `N` instance points, all owned by a single
//! instance. When a frame brings candidate points from several instances, the
//! owner is the candidate set with the highest mean confidence; the block's
//! retained points compete as one more candidate. A random strategy is kept
//! as the ablation baseline.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::InstanceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    #[default]
    Confidence,
    Random,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Self::Confidence),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown sampling strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstancePoint {
    pub position: Vector3<f32>,
    /// Segmentation confidence of the pixel the point came from, in [0, 1].
    pub confidence: f32,
    pub owner: InstanceId,
}

/// Points retained in one voxel block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockPointSet {
    pub owner: Option<InstanceId>,
    pub points: Vec<InstancePoint>,
}

impl BlockPointSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

pub fn mean_confidence(points: &[InstancePoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("mean confidence of an empty point set".into()));
    }
    let sum: f64 = points.iter().map(|p| p.confidence as f64).sum();
    Ok(sum / points.len() as f64)
}

/// Argmax of mean confidence; ties go to the larger set, then the smaller id.
/// Empty candidate sets are ignored; `None` when nothing remains.
pub fn select_block_owner<'a>(
    candidates: impl IntoIterator<Item = (InstanceId, &'a [InstancePoint])>,
) -> Option<InstanceId> {
    let mut best: Option<(f64, usize, InstanceId)> = None;
    for (id, points) in candidates {
        let Ok(mean) = mean_confidence(points) else { continue };
        let better = match best {
            None => true,
            Some((bm, bn, bid)) => {
                mean > bm || (mean == bm && (points.len() > bn || (points.len() == bn && id < bid)))
            }
        };
        if better {
            best = Some((mean, points.len(), id));
        }
    }
    best.map(|(_, _, id)| id)
}

/// Keeps at most `capacity` points. The confidence strategy keeps the most
/// confident points (earlier points win ties); the random strategy keeps a
/// uniform subset. Retained points keep their input order.
pub fn downsample_block<R: Rng + ?Sized>(
    points: Vec<InstancePoint>,
    capacity: usize,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Vec<InstancePoint> {
    if points.len() <= capacity {
        return points;
    }
    let mut keep: Vec<usize> = match strategy {
        SamplingStrategy::Confidence => {
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.sort_by(|&a, &b| points[b].confidence.total_cmp(&points[a].confidence));
            order.truncate(capacity);
            order
        }
        SamplingStrategy::Random => index::sample(rng, points.len(), capacity).into_vec(),
    };
    keep.sort_unstable();
    keep.into_iter().map(|i| points[i]).collect()
}

/// What happened to a block while resolving one frame's candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockResolution {
    pub previous_owner: Option<InstanceId>,
    pub owner: Option<InstanceId>,
    pub previous_count: usize,
    pub retained: usize,
}

/// Merges a frame's candidate points into a block and enforces single
/// ownership and capacity.
///
/// Under the confidence strategy the owner follows [`select_block_owner`].
/// Under the random strategy the owner is the owner of one point drawn
/// uniformly from the pooled points, so instances win in proportion to their
/// point counts regardless of confidence.
pub fn resolve_block<R: Rng + ?Sized>(
    set: &mut BlockPointSet,
    incoming: BTreeMap<InstanceId, Vec<InstancePoint>>,
    capacity: usize,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> BlockResolution {
    let previous_owner = set.owner;
    let previous_count = set.points.len();

    let mut pool: BTreeMap<InstanceId, Vec<InstancePoint>> = incoming;
    if let Some(owner) = set.owner {
        if !set.points.is_empty() {
            let mut merged = std::mem::take(&mut set.points);
            if let Some(new) = pool.remove(&owner) {
                merged.extend(new);
            }
            pool.insert(owner, merged);
        }
    }
    pool.retain(|_, pts| !pts.is_empty());

    let owner = match strategy {
        SamplingStrategy::Confidence => {
            select_block_owner(pool.iter().map(|(&id, pts)| (id, pts.as_slice())))
        }
        SamplingStrategy::Random => {
            let total: usize = pool.values().map(Vec::len).sum();
            if total == 0 {
                None
            } else {
                let mut pick = rng.random_range(0..total);
                let mut chosen = None;
                for (&id, pts) in &pool {
                    if pick < pts.len() {
                        chosen = Some(id);
                        break;
                    }
                    pick -= pts.len();
                }
                chosen
            }
        }
    };

    match owner {
        Some(id) => {
            let points = pool.remove(&id).unwrap_or_default();
            set.points = downsample_block(points, capacity, strategy, rng);
            set.owner = Some(id);
        }
        None => {
            set.points.clear();
            set.owner = None;
        }
    }

    BlockResolution {
        previous_owner,
        owner: set.owner,
        previous_count,
        retained: set.points.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(owner: u32, confs: &[f32]) -> Vec<InstancePoint> {
        confs
            .iter()
            .enumerate()
            .map(|(i, &c)| InstancePoint {
                position: Vector3::new(i as f32, 0.0, 0.0),
                confidence: c,
                owner: InstanceId(owner),
            })
            .collect()
    }

    #[test]
    fn mean_confidence_examples() {
        assert!((mean_confidence(&pts(0, &[0.9, 0.7, 0.8])).unwrap() - 0.8).abs() < 1e-7);
        assert!((mean_confidence(&pts(0, &[0.42])).unwrap() - 0.42).abs() < 1e-7);
        assert_eq!(mean_confidence(&pts(0, &[0.0, 0.0])).unwrap(), 0.0);
        assert!(mean_confidence(&[]).is_err());
    }

    #[test]
    fn owner_is_argmax_mean() {
        let a = pts(1, &[0.8, 0.8]);
        let b = pts(2, &[0.6, 0.6, 0.6]);
        let owner = select_block_owner([(InstanceId(1), a.as_slice()), (InstanceId(2), b.as_slice())]);
        assert_eq!(owner, Some(InstanceId(1)));
    }

    #[test]
    fn tie_prefers_larger_set_then_smaller_id() {
        let a = pts(5, &[0.7; 10]);
        let b = pts(2, &[0.7; 4]);
        assert_eq!(
            select_block_owner([(InstanceId(2), b.as_slice()), (InstanceId(5), a.as_slice())]),
            Some(InstanceId(5))
        );
        let c = pts(9, &[0.7; 4]);
        assert_eq!(
            select_block_owner([(InstanceId(9), c.as_slice()), (InstanceId(2), b.as_slice())]),
            Some(InstanceId(2))
        );
    }

    #[test]
    fn confident_newcomer_evicts_incumbent() {
        let mut set = BlockPointSet { owner: Some(InstanceId(3)), points: pts(3, &[0.5; 8]) };
        let mut incoming = BTreeMap::new();
        incoming.insert(InstanceId(7), pts(7, &[0.9; 5]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = resolve_block(&mut set, incoming, 16, SamplingStrategy::Confidence, &mut rng);
        assert_eq!(res.previous_owner, Some(InstanceId(3)));
        assert_eq!(res.owner, Some(InstanceId(7)));
        assert_eq!(set.points.len(), 5);
        assert!(set.points.iter().all(|p| p.owner == InstanceId(7)));
    }

    #[test]
    fn incumbent_merges_with_its_own_new_points() {
        let mut set = BlockPointSet { owner: Some(InstanceId(1)), points: pts(1, &[0.9; 10]) };
        let mut incoming = BTreeMap::new();
        incoming.insert(InstanceId(1), pts(1, &[0.8; 10]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        resolve_block(&mut set, incoming, 16, SamplingStrategy::Confidence, &mut rng);
        assert_eq!(set.points.len(), 16);
        assert_eq!(set.points.iter().filter(|p| p.confidence == 0.9).count(), 10);
    }

    #[test]
    fn confidence_downsample_keeps_top_n() {
        let confs: Vec<f32> = (1..=20).map(|i| 0.05 * i as f32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kept = downsample_block(pts(0, &confs), 16, SamplingStrategy::Confidence, &mut rng);
        let xs: Vec<f32> = kept.iter().map(|p| p.position.x).collect();
        let expected: Vec<f32> = (4..20).map(|i| i as f32).collect();
        assert_eq!(xs, expected);
    }

    #[test]
    fn confidence_downsample_is_stable_on_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kept = downsample_block(pts(0, &[0.5; 20]), 16, SamplingStrategy::Confidence, &mut rng);
        let xs: Vec<f32> = kept.iter().map(|p| p.position.x).collect();
        assert_eq!(xs, (0..16).map(|i| i as f32).collect::<Vec<_>>());
    }

    #[test]
    fn under_capacity_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for strategy in [SamplingStrategy::Confidence, SamplingStrategy::Random] {
            let kept = downsample_block(pts(0, &[0.3; 10]), 16, strategy, &mut rng);
            assert_eq!(kept.len(), 10);
        }
    }

    #[test]
    fn random_downsample_is_deterministic_and_uniform() {
        let points = pts(0, &[0.5; 100]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            downsample_block(points.clone(), 16, SamplingStrategy::Random, &mut rng)
        };
        assert_eq!(draw(42), draw(42));
        let mut hits = [0usize; 100];
        const TRIALS: u64 = 10_000;
        for seed in 0..TRIALS {
            let kept = draw(seed);
            assert_eq!(kept.len(), 16);
            for p in kept {
                hits[p.position.x as usize] += 1;
            }
        }
        for (i, &h) in hits.iter().enumerate() {
            let freq = h as f64 / TRIALS as f64;
            assert!((freq - 0.16).abs() <= 0.02, "point {i} kept with frequency {freq}");
        }
        let mean = hits.iter().sum::<usize>() as f64 / (100 * TRIALS) as f64;
        assert!((mean - 0.16).abs() < 1e-12);
    }

    #[test]
    fn random_owner_follows_point_counts() {
        let mut wins = 0;
        for seed in 0..2000 {
            let mut set = BlockPointSet::default();
            let mut incoming = BTreeMap::new();
            incoming.insert(InstanceId(1), pts(1, &[0.9; 30]));
            incoming.insert(InstanceId(2), pts(2, &[0.1; 10]));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            resolve_block(&mut set, incoming, 16, SamplingStrategy::Random, &mut rng);
            if set.owner == Some(InstanceId(2)) {
                wins += 1;
            }
        }
        let freq = wins as f64 / 2000.0;
        assert!((freq - 0.25).abs() < 0.04, "{freq}");
    }
}
