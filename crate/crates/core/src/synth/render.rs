use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::embed::{oracle_embed, EmbedKind};
use super::Scene;
use crate::frame::{dequantize_confidence, EmbeddingPair, FrameBundle};
use crate::raster::{Mask, Raster};

/// Physical area (m²) corresponding to an area proxy of 1 in the noise law.
pub const AREA_PROXY_UNIT: f64 = 0.01;

/// Quantized confidence ranges: true pixels land in [0.70, 1.0], intruded
/// pixels in [0.10, 0.39].
const HIGH_CONFIDENCE: std::ops::RangeInclusive<u8> = 179..=255;
const LOW_CONFIDENCE: std::ops::RangeInclusive<u8> = 26..=99;

const NONE: u32 = u32::MAX;

/// A rendered frame with the generator's own ownership bookkeeping.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub bundle: FrameBundle,
    /// Object index visible at each pixel (`u32::MAX` for background).
    pub owner: Raster<u32>,
    /// Object index behind each mask.
    pub mask_objects: Vec<usize>,
}

impl RenderOutput {
    /// Pixels of mask `k` that belong to a different object.
    pub fn intruded(&self, k: usize) -> Mask {
        let obj = self.mask_objects[k] as u32;
        let m = &self.bundle.masks[k];
        Mask::from_fn(m.width(), m.height(), |u, v| m.get(u, v) && *self.owner.get(u, v) != obj)
    }
}

fn frame_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

pub fn render_frame(scene: &Scene, index: u64) -> FrameBundle {
    render_frame_detailed(scene, index).bundle
}

pub fn render_frame_detailed(scene: &Scene, index: u64) -> RenderOutput {
    let spec = &scene.spec;
    let intr = &spec.intrinsics;
    let pose = &scene.poses[index as usize];
    let (w, h) = (intr.width, intr.height);
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(scene.seed, index));

    let origin = *pose.translation();
    let mut depth = Raster::filled(w, h, 0.0f32);
    let mut owner = Raster::filled(w, h, NONE);
    for v in 0..h {
        for u in 0..w {
            let ray = Vector3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
            let dir = pose.rotation() * ray;
            let mut best: Option<(f64, usize)> = None;
            for (i, o) in spec.objects.iter().enumerate() {
                if let Some(t) = o.primitive.intersect(&origin, &dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                }
            }
            if let Some((t, i)) = best {
                depth.set(u, v, t as f32);
                owner.set(u, v, i as u32);
            }
        }
    }

    let n_obj = spec.objects.len();
    let mut counts = vec![0usize; n_obj];
    for &o in owner.data() {
        if o != NONE {
            counts[o as usize] += 1;
        }
    }
    // Larger silhouettes dominate; ties go to the lower index.
    let dominates = |a: u32, b: u32| {
        let (ca, cb) = (counts[a as usize], counts[b as usize]);
        ca > cb || (ca == cb && a < b)
    };

    let mut label = owner.clone();
    let e = spec.erosion as i64;
    if e > 0 {
        for v in 0..h as i64 {
            for u in 0..w as i64 {
                let own = *owner.get(u as u32, v as u32);
                if own == NONE {
                    continue;
                }
                let mut winner = own;
                for dv in -e..=e {
                    for du in -e..=e {
                        let (su, sv) = (u + du, v + dv);
                        if su < 0 || sv < 0 || su >= w as i64 || sv >= h as i64 {
                            continue;
                        }
                        let o = *owner.get(su as u32, sv as u32);
                        if o != NONE && o != winner && dominates(o, winner) {
                            winner = o;
                        }
                    }
                }
                label.set(u as u32, v as u32, winner);
            }
        }
    }

    let visible: Vec<usize> = (0..n_obj)
        .filter(|&i| label.data().contains(&(i as u32)))
        .collect();
    let mut order = visible;
    order.shuffle(&mut rng);

    let mut masks = Vec::with_capacity(order.len());
    let mut confidences = Vec::with_capacity(order.len());
    let mut embeddings = Vec::with_capacity(order.len());
    let focal = intr.fx * intr.fy;
    for &obj in &order {
        let mask = Mask::from_fn(w, h, |u, v| *label.get(u, v) == obj as u32);
        let mut conf = Raster::filled(w, h, 0.0f32);
        let mut area = 0.0;
        for (u, v) in mask.iter_set() {
            let q = if *owner.get(u, v) == obj as u32 {
                rng.random_range(HIGH_CONFIDENCE)
            } else {
                rng.random_range(LOW_CONFIDENCE)
            };
            conf.set(u, v, dequantize_confidence(q));
            let d = *depth.get(u, v) as f64;
            area += d * d / focal;
        }
        let o = &spec.objects[obj];
        let proxy = (area / AREA_PROXY_UNIT).max(1e-6);
        let obj_seed: u64 = rng.random();
        let ctx_seed: u64 = rng.random();
        let object = oracle_embed(&scene.vocab, EmbedKind::Category, &[&o.category], spec.noise, proxy, obj_seed)
            .expect("vocabulary built from the scene");
        let mut words = vec![o.category.as_str()];
        words.extend(o.relations().expect("validated").into_iter().map(|(_, t)| t));
        let environment = oracle_embed(&scene.vocab, EmbedKind::Context, &words, spec.noise, proxy, ctx_seed)
            .expect("vocabulary built from the scene");
        masks.push(mask);
        confidences.push(conf);
        embeddings.push(EmbeddingPair { object, environment });
    }

    let color = Raster::from_fn(w, h, |u, v| match *owner.get(u, v) {
        NONE => [0, 0, 0],
        o => object_color(scene, o as usize),
    });

    RenderOutput {
        bundle: FrameBundle {
            index,
            depth,
            pose: *pose,
            masks,
            confidences,
            embeddings,
            color: Some(color),
        },
        owner,
        mask_objects: order,
    }
}

fn object_color(scene: &Scene, i: usize) -> [u8; 3] {
    let o = &scene.spec.objects[i];
    o.color.unwrap_or_else(|| {
        let c = scene.vocab.category_index(&o.category).unwrap_or(0) as u32;
        let h = c.wrapping_mul(2_654_435_761);
        [(h >> 24) as u8 | 0x40, (h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40]
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::frame::{validate_frame, CameraIntrinsics, Pose};
    use crate::raster::Mask;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(60.0, 60.0, 32.0, 24.0, 64, 48).unwrap()
    }

    fn facing_wall() -> SceneSpec {
        let rows = Pose::identity().to_rows();
        SceneSpec::new(
            vec![ObjectSpec::new("wall", Primitive::Box { center: [0.0, 0.0, 2.5], size: [10.0, 10.0, 1.0] })],
            Trajectory::Poses(vec![rows]),
            intr(),
        )
    }

    #[test]
    fn face_filling_view_has_constant_depth() {
        let s = generate_scene(&facing_wall(), 0).unwrap();
        let f = render_frame(&s, 0);
        assert!(f.depth.data().iter().all(|&d| (d - 2.0).abs() < 1e-6));
        assert_eq!(f.masks.len(), 1);
        assert_eq!(f.masks[0].count(), 64 * 48);
        assert!(validate_frame(&f, &s.spec.intrinsics, Some((32, 32))).is_empty());
    }

    #[test]
    fn depth_matches_analytic_distance() {
        let spec = presets::abutting_boxes(3, 0);
        let s = generate_scene(&spec, 3).unwrap();
        for i in [0, 7] {
            let out = render_frame_detailed(&s, i);
            let pose = &s.poses[i as usize];
            for (u, v) in out.bundle.masks.iter().flat_map(|m| m.iter_set()) {
                let d = *out.bundle.depth.get(u, v) as f64;
                let world = pose.camera_to_world(&s.spec.intrinsics.backproject(u as f64, v as f64, d));
                let obj = *out.owner.get(u, v) as usize;
                let dist = s.spec.objects[obj].primitive.surface_distance(&world);
                assert!(dist < 1e-6 * d.max(1.0), "pixel ({u},{v}) off surface by {dist}");
            }
        }
    }

    #[test]
    fn no_erosion_gives_exact_silhouettes() {
        let s = generate_scene(&presets::abutting_boxes(0, 0), 0).unwrap();
        let out = render_frame_detailed(&s, 0);
        for k in 0..out.bundle.masks.len() {
            assert!(out.intruded(k).is_empty());
            let obj = out.mask_objects[k] as u32;
            let exact = Mask::from_fn(out.owner.width(), out.owner.height(), |u, v| *out.owner.get(u, v) == obj);
            assert_eq!(out.bundle.masks[k], exact);
        }
    }

    #[test]
    fn eroded_pixels_have_low_confidence() {
        let s = generate_scene(&presets::abutting_boxes(3, 0), 0).unwrap();
        let mut intruded = 0;
        for i in 0..s.frame_count() as u64 {
            let out = render_frame_detailed(&s, i);
            for k in 0..out.bundle.masks.len() {
                let conf = &out.bundle.confidences[k];
                for (u, v) in out.intruded(k).iter_set() {
                    intruded += 1;
                    assert!(*conf.get(u, v) < 0.4);
                }
                let m = &out.bundle.masks[k];
                for (u, v) in m.iter_set() {
                    if *out.owner.get(u, v) == out.mask_objects[k] as u32 {
                        assert!(*conf.get(u, v) >= 0.7);
                    }
                }
            }
        }
        assert!(intruded > 0);
    }
}
