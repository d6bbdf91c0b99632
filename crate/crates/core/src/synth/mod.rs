//! Deterministic desk-scale scenes with full ground truth.
//!
//! A scene is a set of labelled boxes and spheres seen along a camera
//! trajectory. Rendering is exact ray casting; masks can be corrupted by
//! boundary erosion with matching low confidences; embeddings come from
//! oracle encoders with area-dependent noise.

mod embed;
pub mod presets;
mod render;
mod shapes;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use embed::{oracle_embed, EmbedKind, Vocabulary};
pub use render::{render_frame, render_frame_detailed, RenderOutput, AREA_PROXY_UNIT};
pub use shapes::Primitive;

use crate::archive::{ArchiveWriter, Manifest};
use crate::error::{Error, Result};
use crate::eval::{Category, CategoryFile, GroundTruth, GtPoint};
use crate::frame::{CameraIntrinsics, FrameBundle, Pose};
use crate::query::QuerySpec;

pub const GT_FILE: &str = "gt.bin";
pub const CATEGORIES_FILE: &str = "categories.json";
pub const QUERIES_FILE: &str = "queries.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub category: String,
    pub primitive: Primitive,
    /// Adjacency tags such as `near:window`.
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
}

impl ObjectSpec {
    pub fn new(category: &str, primitive: Primitive) -> Self {
        Self {
            category: category.into(),
            primitive,
            tags: Vec::new(),
            color: None,
        }
    }

    pub fn tagged(mut self, tag: &str) -> Self {
        self.tags.push(tag.into());
        self
    }

    /// `(relation, target)` pairs of the tags.
    pub fn relations(&self) -> Result<Vec<(&str, &str)>> {
        self.tags
            .iter()
            .map(|t| match t.split_once(':') {
                Some((r, w)) if !r.is_empty() && !w.is_empty() => Ok((r, w)),
                _ => Err(Error::Spec(format!("tag {t:?} is not of the form relation:target"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trajectory {
    /// Cameras on a horizontal circle around `center`, all looking at it.
    Orbit {
        center: [f64; 3],
        radius: f64,
        height: f64,
        frames: usize,
        #[serde(default)]
        start_deg: f64,
        #[serde(default = "full_turn")]
        sweep_deg: f64,
    },
    /// Explicit camera-to-world matrices, row-major.
    Poses(Vec<[[f64; 4]; 4]>),
}

fn full_turn() -> f64 {
    360.0
}

impl Trajectory {
    pub fn poses(&self) -> Result<Vec<Pose>> {
        match self {
            Trajectory::Orbit {
                center,
                radius,
                height,
                frames,
                start_deg,
                sweep_deg,
            } => {
                if !(*radius > 0.0) {
                    return Err(Error::Spec("orbit radius must be positive".into()));
                }
                let c = Vector3::from(*center);
                (0..*frames)
                    .map(|i| {
                        let step = if *frames > 0 { sweep_deg / *frames as f64 } else { 0.0 };
                        let a = (start_deg + step * i as f64).to_radians();
                        let eye = c + Vector3::new(radius * a.cos(), radius * a.sin(), *height);
                        Pose::look_at(eye, c, Vector3::z()).map_err(|e| Error::Spec(e.to_string()))
                    })
                    .collect()
            }
            Trajectory::Poses(rows) => rows
                .iter()
                .map(|r| Pose::from_rows(r).map_err(|e| Error::Spec(e.to_string())))
                .collect(),
        }
    }
}

fn default_dim() -> usize {
    32
}

fn default_depth_scale() -> f64 {
    1e-4
}

fn default_gt_spacing() -> f64 {
    0.005
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub trajectory: Trajectory,
    pub intrinsics: CameraIntrinsics,
    /// Pixels by which a dominant mask intrudes into its neighbors.
    #[serde(default)]
    pub erosion: u32,
    /// Embedding noise scale at unit area proxy.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_dim")]
    pub context_dim: usize,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    /// Spacing of ground-truth surface samples, meters.
    #[serde(default = "default_gt_spacing")]
    pub gt_spacing: f64,
}

impl SceneSpec {
    pub fn new(objects: Vec<ObjectSpec>, trajectory: Trajectory, intrinsics: CameraIntrinsics) -> Self {
        Self {
            objects,
            trajectory,
            intrinsics,
            erosion: 0,
            noise: 0.0,
            seed: 0,
            embedding_dim: default_dim(),
            context_dim: default_dim(),
            depth_scale: default_depth_scale(),
            gt_spacing: default_gt_spacing(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub scene_id: String,
    pub vocab: Vocabulary,
    pub poses: Vec<Pose>,
    pub gt: GroundTruth,
}

impl Scene {
    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.spec.intrinsics
    }

    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    /// Renders every frame, in index order.
    pub fn render_all(&self) -> Vec<FrameBundle> {
        (0..self.poses.len() as u64).into_par_iter().map(|i| render_frame(self, i)).collect()
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new(
            self.spec.intrinsics,
            self.spec.depth_scale,
            self.spec.embedding_dim,
            self.spec.context_dim,
        );
        m.categories = Some(self.vocab.categories.clone());
        m.scene_id = Some(self.scene_id.clone());
        m.extra.insert("generator".into(), "semmap-synth".into());
        m.extra.insert("seed".into(), self.seed.into());
        m.extra.insert("erosion".into(), self.spec.erosion.into());
        m.extra.insert("noise".into(), self.spec.noise.into());
        m
    }

    pub fn category_file(&self) -> CategoryFile {
        CategoryFile {
            scene_id: Some(self.scene_id.clone()),
            categories: self
                .vocab
                .categories
                .iter()
                .map(|c| Category {
                    name: c.clone(),
                    embedding: self.vocab.category_vector(c).expect("own vocabulary"),
                })
                .collect(),
        }
    }

    /// Scripted queries with noiseless text embeddings. Every tag yields
    /// "the {category} {relation} the {target}"; objects whose category is
    /// unique in the scene also get a bare "the {category}". Targets are
    /// object indices.
    pub fn queries(&self) -> Vec<QuerySpec> {
        let mut out = Vec::new();
        for (i, obj) in self.spec.objects.iter().enumerate() {
            let object_embedding = self.vocab.category_vector(&obj.category).expect("own vocabulary");
            let unique = self.spec.objects.iter().filter(|o| o.category == obj.category).count() == 1;
            if unique {
                out.push(QuerySpec {
                    text: format!("the {}", obj.category),
                    core_object: Some(obj.category.clone()),
                    object_embedding: object_embedding.clone(),
                    context_embedding: Some(self.vocab.context_vector(&[&obj.category]).expect("own vocabulary")),
                    alpha: None,
                    target: Some(i as u32),
                });
            }
            for (rel, target) in obj.relations().expect("validated") {
                out.push(QuerySpec {
                    text: format!("the {} {} the {}", obj.category, rel.replace('_', " "), target),
                    core_object: Some(obj.category.clone()),
                    object_embedding: object_embedding.clone(),
                    context_embedding: Some(
                        self.vocab.context_vector(&[obj.category.as_str(), target]).expect("own vocabulary"),
                    ),
                    alpha: None,
                    target: Some(i as u32),
                });
            }
        }
        out
    }
}

fn fingerprint(spec: &SceneSpec, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update(seed.to_le_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Validates the spec and builds the scene with its ground truth.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.intrinsics.validate().map_err(|e| Error::Spec(e.to_string()))?;
    if spec.objects.is_empty() {
        return Err(Error::Spec("scene has no objects".into()));
    }
    if !(spec.noise >= 0.0) || !(spec.depth_scale > 0.0) || !(spec.gt_spacing > 0.0) {
        return Err(Error::Spec("noise must be non-negative; depth_scale and gt_spacing positive".into()));
    }
    for (i, o) in spec.objects.iter().enumerate() {
        if !o.primitive.is_valid() {
            return Err(Error::Spec(format!("object {i} has an invalid primitive")));
        }
        if o.category.is_empty() {
            return Err(Error::Spec(format!("object {i} has an empty category")));
        }
        o.relations()?;
        for (j, other) in spec.objects.iter().enumerate().skip(i + 1) {
            if o.primitive.overlaps(&other.primitive) {
                return Err(Error::Spec(format!("objects {i} and {j} overlap")));
            }
        }
    }

    let categories: BTreeSet<String> = spec.objects.iter().map(|o| o.category.clone()).collect();
    let mut context = categories.clone();
    for o in &spec.objects {
        for (_, target) in o.relations()? {
            context.insert(target.to_string());
        }
    }
    let vocab = Vocabulary::new(
        categories.into_iter().collect(),
        context.into_iter().collect(),
        spec.embedding_dim,
        spec.context_dim,
    )?;
    let poses = spec.trajectory.poses()?;

    let scene_id = fingerprint(spec, seed);
    let mut points = Vec::new();
    for (i, o) in spec.objects.iter().enumerate() {
        let category = vocab.category_index(&o.category)? as u32;
        for p in o.primitive.sample_surface(spec.gt_spacing) {
            // Contact faces of abutting objects are never visible.
            let hidden = spec
                .objects
                .iter()
                .enumerate()
                .any(|(j, other)| j != i && other.primitive.contains(&p));
            if !hidden {
                points.push(GtPoint {
                    position: p.map(|x| x as f32),
                    category,
                    instance: i as u32,
                });
            }
        }
    }
    Ok(Scene {
        spec: spec.clone(),
        seed,
        gt: GroundTruth {
            scene_id: scene_id.clone(),
            points,
        },
        scene_id,
        vocab,
        poses,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GenReport {
    pub scene_id: String,
    pub frames: usize,
    pub objects: usize,
    pub gt_points: usize,
    pub queries: usize,
}

/// Writes the frame archive plus ground truth, categories and scripted queries.
pub fn write_scene(scene: &Scene, out: &Path) -> Result<GenReport> {
    let mut writer = ArchiveWriter::create(out, scene.manifest())?;
    // Render in parallel batches to bound memory on long trajectories.
    let n = scene.frame_count() as u64;
    let batch = (rayon::current_num_threads() as u64 * 2).max(1);
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let frames: Vec<FrameBundle> = (start..end).into_par_iter().map(|i| render_frame(scene, i)).collect();
        for f in &frames {
            writer.push(f)?;
        }
        start = end;
    }
    writer.finish()?;

    scene.gt.write(&out.join(GT_FILE))?;
    scene.category_file().write(&out.join(CATEGORIES_FILE))?;
    let queries = scene.queries();
    let path = out.join(QUERIES_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for q in &queries {
        let line = serde_json::to_string(q).expect("query serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    Ok(GenReport {
        scene_id: scene.scene_id.clone(),
        frames: scene.frame_count(),
        objects: scene.spec.objects.len(),
        gt_points: scene.gt.points.len(),
        queries: queries.len(),
    })
}
