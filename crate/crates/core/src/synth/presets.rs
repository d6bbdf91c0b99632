//! Ready-made scenes used by the test suites and `gen --preset`.

use super::{ObjectSpec, Primitive, SceneSpec, Trajectory};
use crate::error::{Error, Result};
use crate::frame::CameraIntrinsics;

pub const NAMES: &[&str] = &["abutting-boxes", "similar-instances", "desk", "sphere"];

pub fn by_name(name: &str, seed: u64) -> Result<SceneSpec> {
    let mut spec = match name {
        "abutting-boxes" => abutting_boxes(3, seed),
        "similar-instances" => similar_instances(0),
        "desk" => desk(),
        "sphere" => sphere(8),
        other => {
            return Err(Error::Spec(format!(
                "unknown preset {other:?}; expected one of {}",
                NAMES.join(", ")
            )))
        }
    };
    spec.seed = seed;
    Ok(spec)
}

/// 320×240 pinhole camera with a ~63° horizontal field of view.
pub fn qvga() -> CameraIntrinsics {
    CameraIntrinsics::new(260.0, 260.0, 160.0, 120.0, 320, 240).expect("valid intrinsics")
}

fn cuboid(category: &str, center: [f64; 3], size: [f64; 3]) -> ObjectSpec {
    ObjectSpec::new(category, Primitive::Box { center, size })
}

fn orbit(center: [f64; 3], radius: f64, height: f64, frames: usize) -> Trajectory {
    Trajectory::Orbit {
        center,
        radius,
        height,
        frames,
        start_deg: 15.0,
        sweep_deg: 360.0,
    }
}

/// A cabinet and a smaller crate sharing a face, orbited by 30 views.
/// Layout is jittered by `seed` so sweeps see different boundaries.
pub fn abutting_boxes(erosion: u32, seed: u64) -> SceneSpec {
    let j = |k: u64| ((seed.wrapping_mul(2_654_435_761).wrapping_add(k * 97) % 1000) as f64 / 1000.0 - 0.5) * 0.1;
    let a = [0.5 + j(1), 0.5 + j(2), 0.5 + j(3)];
    let b = [0.35 + j(4), 0.4 + j(5), 0.35 + j(6)];
    let objects = vec![
        cuboid("cabinet", [-a[0] / 2.0, 0.0, a[2] / 2.0], a),
        cuboid("crate", [b[0] / 2.0, j(7), b[2] / 2.0], b),
    ];
    let mut spec = SceneSpec::new(objects, orbit([0.0, 0.0, 0.25], 2.4, 1.0, 30), qvga());
    spec.erosion = erosion;
    spec.noise = 0.05;
    spec.seed = seed;
    spec
}

/// Duplicate categories that only their surroundings tell apart, with a
/// window whose context mimics the first chair's.
pub fn similar_instances(layout: u32) -> SceneSpec {
    let s = layout as f64 * 0.07;
    let objects = vec![
        cuboid("chair", [-0.7 + s, 0.45, 0.225], [0.4, 0.4, 0.45])
            .tagged("near:window")
            .tagged("near:door"),
        cuboid("chair", [0.7, 0.5 - s, 0.225], [0.4, 0.4, 0.45]).tagged("near:lamp"),
        cuboid("chair", [0.0, -0.95 - s, 0.225], [0.4, 0.4, 0.45]).tagged("near:plant"),
        cuboid("table", [-0.6, -0.5, 0.2], [0.5, 0.4, 0.4]).tagged("near:window"),
        cuboid("table", [0.65 - s, -0.45, 0.2], [0.5, 0.4, 0.4]).tagged("near:door"),
        cuboid("window", [0.0, 1.1, 0.5], [0.8, 0.06, 0.6]).tagged("near:chair"),
        cuboid("door", [-1.3, 0.0, 0.45], [0.06, 0.6, 0.9]).tagged("near:table"),
    ];
    let mut spec = SceneSpec::new(objects, orbit([0.0, 0.0, 0.3], 2.6, 1.2, 24), qvga());
    spec.noise = 0.05;
    spec.seed = layout as u64;
    spec
}

/// Ten objects on a desk-sized floor patch.
pub fn desk() -> SceneSpec {
    let objects = vec![
        cuboid("monitor", [0.0, 0.45, 0.2], [0.5, 0.08, 0.3]).tagged("near:keyboard").tagged("near:lamp"),
        cuboid("keyboard", [0.0, 0.05, 0.02], [0.4, 0.15, 0.04]).tagged("near:monitor").tagged("near:mouse"),
        ObjectSpec::new("mouse", Primitive::Sphere { center: [0.35, 0.05, 0.03], radius: 0.03 }).tagged("near:keyboard"),
        cuboid("book", [-0.45, 0.0, 0.03], [0.2, 0.28, 0.06]).tagged("near:mug").tagged("under:lamp"),
        cuboid("book", [0.55, 0.45, 0.04], [0.2, 0.28, 0.08]).tagged("near:plant").tagged("near:speaker"),
        ObjectSpec::new("mug", Primitive::Sphere { center: [-0.4, -0.3, 0.05], radius: 0.05 }).tagged("near:book"),
        cuboid("lamp", [-0.5, 0.45, 0.2], [0.12, 0.12, 0.4]).tagged("near:monitor").tagged("near:book"),
        ObjectSpec::new("plant", Primitive::Sphere { center: [0.6, -0.05, 0.1], radius: 0.1 }).tagged("near:book"),
        cuboid("speaker", [0.35, 0.45, 0.1], [0.1, 0.1, 0.2]).tagged("near:monitor").tagged("near:book"),
        ObjectSpec::new("mug", Primitive::Sphere { center: [0.2, -0.35, 0.05], radius: 0.05 }).tagged("near:mouse"),
    ];
    let mut spec = SceneSpec::new(objects, orbit([0.0, 0.1, 0.1], 1.4, 0.9, 40), qvga());
    spec.noise = 0.05;
    spec
}

/// A 0.5 m sphere seen from `views` evenly spaced poses.
pub fn sphere(views: usize) -> SceneSpec {
    let objects = vec![ObjectSpec::new("ball", Primitive::Sphere { center: [0.0, 0.0, 0.5], radius: 0.5 })];
    SceneSpec::new(objects, orbit([0.0, 0.0, 0.5], 2.0, 0.7, views), qvga())
}
