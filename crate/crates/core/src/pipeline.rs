//! End-to-end workflows behind the command-line tool.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use crate::archive::load_sequence;
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::frame::{CameraIntrinsics, FrameBundle};
use crate::map::{SemanticMap, StageTimings};
use crate::query::{resolve_query, QueryMode, QueryResult, QuerySpec};

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub frames: usize,
    pub instances: usize,
    pub blocks: usize,
    pub points: usize,
    /// Frames per second over the ingest stages alone.
    pub fps: f64,
    /// Wall-clock seconds including archive decoding.
    pub wall_seconds: f64,
    pub stage_seconds: StageTimings,
    pub warnings: Vec<String>,
}

/// Ingests a frame stream into a fresh map.
pub fn build_map(
    frames: impl IntoIterator<Item = Result<FrameBundle>>,
    intrinsics: &CameraIntrinsics,
    config: &EngineConfig,
    scene_id: Option<String>,
) -> Result<(SemanticMap, IngestReport)> {
    config.validate()?;
    let start = Instant::now();
    let mut map = SemanticMap::new(config.clone());
    map.set_scene_id(scene_id);
    let mut report = IngestReport::default();
    for frame in frames {
        let frame = frame?;
        let r = map.ingest(&frame, intrinsics)?;
        report.stage_seconds.add(&r.timings);
        report.frames += 1;
        if !r.registration.new_ids.is_empty() {
            info!("frame {}: new instances {:?}", r.index, r.registration.new_ids);
        }
    }
    if report.frames == 0 {
        let msg = "archive has no frames; the map is empty".to_string();
        warn!("{msg}");
        report.warnings.push(msg);
    }
    report.instances = map.len();
    report.blocks = map.grid().len();
    report.points = map.instances().map(|i| i.point_count).sum();
    let busy = report.stage_seconds.total();
    report.fps = if busy > 0.0 { report.frames as f64 / busy } else { 0.0 };
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok((map, report))
}

pub fn build_from_archive(dir: &Path, config: &EngineConfig) -> Result<(SemanticMap, IngestReport)> {
    let reader = load_sequence(dir)?;
    let intrinsics = reader.manifest().intrinsics;
    let scene_id = reader.manifest().scene_id.clone();
    build_map(reader, &intrinsics, config, scene_id)
}

/// Reads a JSON-lines query file; blank lines are skipped.
pub fn read_queries(path: &Path) -> Result<Vec<QuerySpec>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuerySpec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(q);
    }
    Ok(out)
}

/// Resolves every query in order against the map's fused semantics.
pub fn run_queries(
    map: &SemanticMap,
    queries: &[QuerySpec],
    alpha: Option<f64>,
    mode: QueryMode,
) -> Result<Vec<QueryResult>> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    let alpha = alpha.unwrap_or(map.config().alpha);
    queries
        .iter()
        .map(|q| resolve_query(q, map.semantics(), alpha, mode))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameProblem {
    pub frame: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationSummary {
    pub frames: usize,
    pub valid: bool,
    pub problems: Vec<FrameProblem>,
}

/// Decodes and checks every frame, collecting problems instead of stopping
/// at the first. Manifest-level errors are returned as `Err`.
pub fn validate_archive(dir: &Path) -> Result<ValidationSummary> {
    let reader = load_sequence(dir)?;
    let frames = reader.len();
    let problems: Vec<FrameProblem> = reader
        .filter_map(|r| r.err())
        .map(|e| match e {
            Error::Frame { index, reason } => FrameProblem { frame: Some(index), reason },
            other => FrameProblem { frame: None, reason: other.to_string() },
        })
        .collect();
    Ok(ValidationSummary { frames, valid: problems.is_empty(), problems })
}
