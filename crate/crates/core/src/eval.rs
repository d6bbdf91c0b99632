//! Point-level semantic segmentation metrics.
//!
//! Instances are labelled by querying the category list against their fused
//! object embeddings. Every retained instance point inherits its instance's
//! label and is compared with the nearest ground-truth point within a match
//! radius.

use std::collections::{BTreeMap, HashMap};
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cache::GlobalSemantics;
use crate::error::{Error, Result};
use crate::map::SemanticMap;
use crate::query::cosine;
use crate::InstanceId;

pub const GT_MAGIC: &[u8; 8] = b"SEMGT\0\0\x01";

/// One labelled ground-truth surface sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtPoint {
    pub position: Vector3<f32>,
    pub category: u32,
    pub instance: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub scene_id: String,
    pub points: Vec<GtPoint>,
}

impl GroundTruth {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(16 + self.scene_id.len() + self.points.len() * 20);
        w.extend_from_slice(GT_MAGIC);
        w.write_u32::<LE>(self.scene_id.len() as u32).unwrap();
        w.extend_from_slice(self.scene_id.as_bytes());
        w.write_u64::<LE>(self.points.len() as u64).unwrap();
        for p in &self.points {
            for x in p.position.iter() {
                w.write_f32::<LE>(*x).unwrap();
            }
            w.write_u32::<LE>(p.category).unwrap();
            w.write_u32::<LE>(p.instance).unwrap();
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Format(format!("truncated ground-truth file: {e}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != GT_MAGIC {
            return Err(Error::Format("not a ground-truth file (bad magic)".into()));
        }
        let len = r.read_u32::<LE>().map_err(bad)? as usize;
        if len > bytes.len() {
            return Err(Error::Format("scene id length exceeds file size".into()));
        }
        let mut id = vec![0u8; len];
        r.read_exact(&mut id).map_err(bad)?;
        let scene_id = String::from_utf8(id).map_err(|_| Error::Format("scene id is not UTF-8".into()))?;
        let n = r.read_u64::<LE>().map_err(bad)? as usize;
        let remaining = bytes.len() - r.position() as usize;
        if n.checked_mul(20) != Some(remaining) {
            return Err(Error::Format(format!("expected {n} points, found {remaining} bytes")));
        }
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let position = Vector3::new(
                r.read_f32::<LE>().map_err(bad)?,
                r.read_f32::<LE>().map_err(bad)?,
                r.read_f32::<LE>().map_err(bad)?,
            );
            let category = r.read_u32::<LE>().map_err(bad)?;
            let instance = r.read_u32::<LE>().map_err(bad)?;
            points.push(GtPoint { position, category, instance });
        }
        Ok(Self { scene_id, points })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub embedding: Vec<f32>,
}

/// Category list with object-channel text embeddings, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    pub categories: Vec<Category>,
}

impl CategoryFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("categories serialize");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn embeddings(&self) -> Vec<Vec<f32>> {
        self.categories.iter().map(|c| c.embedding.clone()).collect()
    }
}

/// Argmax-cosine category per instance; ties go to the lower class index.
/// Instances without an object embedding are left out.
pub fn label_instances(categories: &[Vec<f32>], semantics: &GlobalSemantics) -> BTreeMap<InstanceId, usize> {
    let mut labels = BTreeMap::new();
    for (id, emb) in semantics.object_embeddings() {
        let mut best: Option<(usize, f64)> = None;
        for (c, cat) in categories.iter().enumerate() {
            let Some(s) = cosine(cat, emb) else { continue };
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        if let Some((c, _)) = best {
            labels.insert(id, c);
        }
    }
    labels
}

/// Rows are ground-truth classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    /// Points skipped for lack of a ground-truth match.
    pub unmatched: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
            unmatched: 0,
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(Self { counts, unmatched: 0 })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt][pred]
    }

    pub fn add(&mut self, gt: usize, pred: usize, n: u64) {
        self.counts[gt][pred] += n;
    }

    pub fn gt_total(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn pred_total(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self, c: usize) -> Option<f64> {
        let gt = self.gt_total(c);
        (gt > 0).then(|| self.counts[c][c] as f64 / gt as f64)
    }

    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.counts[c][c];
        let union = self.gt_total(c) + self.pred_total(c) - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

/// Counts `(gt, pred)` pairs; points whose ground truth is `None` are counted
/// as unmatched.
pub fn accumulate_confusion(classes: usize, predicted: &[usize], gt: &[Option<usize>]) -> Result<ConfusionMatrix> {
    if predicted.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth labels",
            predicted.len(),
            gt.len()
        )));
    }
    let mut m = ConfusionMatrix::new(classes);
    for (&p, &g) in predicted.iter().zip(gt) {
        match g {
            Some(g) if g < classes && p < classes => m.add(g, p, 1),
            Some(_) => return Err(Error::InvalidArgument(format!("label out of range for {classes} classes"))),
            None => m.unmatched += 1,
        }
    }
    Ok(m)
}

/// Mean over classes with ground-truth support of per-class accuracy.
pub fn mean_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    let accs: Vec<f64> = (0..m.classes()).filter_map(|c| m.accuracy(c)).collect();
    if accs.is_empty() {
        return Err(Error::InvalidArgument("no ground-truth points".into()));
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Per-class IoU weighted by ground-truth class frequency.
pub fn freq_weighted_miou(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.total();
    if total == 0 {
        return Err(Error::InvalidArgument("no ground-truth points".into()));
    }
    Ok((0..m.classes())
        .map(|c| {
            let gt = m.gt_total(c);
            if gt == 0 {
                0.0
            } else {
                gt as f64 / total as f64 * m.iou(c).unwrap_or(0.0)
            }
        })
        .sum())
}

pub fn overall_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.total();
    if total == 0 {
        return Err(Error::InvalidArgument("no ground-truth points".into()));
    }
    Ok((0..m.classes()).map(|c| m.get(c, c)).sum::<u64>() as f64 / total as f64)
}

/// Uniform-grid index over ground-truth points for radius queries.
pub struct GtIndex<'a> {
    points: &'a [GtPoint],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> GtIndex<'a> {
    pub fn new(points: &'a [GtPoint], radius: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(&p.position, radius)).or_default().push(i as u32);
        }
        Self { points, cell: radius, cells }
    }

    /// Nearest point within the radius; ties go to the lower index.
    pub fn nearest(&self, q: &Vector3<f32>) -> Option<&'a GtPoint> {
        let c = cell_of(q, self.cell);
        let r2 = self.cell * self.cell;
        let mut best: Option<(f64, u32)> = None;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                    for &i in ids {
                        let d2 = (self.points[i as usize].position - q).map(|x| x as f64).norm_squared();
                        if d2 <= r2 && best.is_none_or(|(bd, bi)| d2 < bd || (d2 == bd && i < bi)) {
                            best = Some((d2, i));
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| &self.points[i as usize])
    }
}

fn cell_of(p: &Vector3<f32>, cell: f64) -> [i64; 3] {
    [0, 1, 2].map(|i| (p[i] as f64 / cell).floor() as i64)
}

/// Map instance → ground-truth instance by majority vote of its points'
/// nearest ground-truth matches (ties to the smaller ground-truth id).
pub fn associate_instances(map: &SemanticMap, gt: &GroundTruth, radius: f64) -> BTreeMap<InstanceId, u32> {
    let index = GtIndex::new(&gt.points, radius);
    let mut votes: BTreeMap<InstanceId, BTreeMap<u32, usize>> = BTreeMap::new();
    for p in map.labeled_points() {
        if let Some(g) = index.nearest(&p.position) {
            *votes.entry(p.owner).or_default().entry(g.instance).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .filter_map(|(id, v)| {
            let best = v.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
            Some((id, *best.0))
        })
        .collect()
}

/// Fraction of retained points (with a ground-truth match) whose owning
/// instance is associated with the ground-truth instance the point lies on.
pub fn ownership_accuracy(map: &SemanticMap, gt: &GroundTruth, radius: f64) -> Result<f64> {
    let assoc = associate_instances(map, gt, radius);
    let index = GtIndex::new(&gt.points, radius);
    let (mut hit, mut total) = (0usize, 0usize);
    for p in map.labeled_points() {
        if let Some(g) = index.nearest(&p.position) {
            total += 1;
            if assoc.get(&p.owner) == Some(&g.instance) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no map point matches the ground truth".into()));
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub acc: Option<f64>,
    pub iou: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub granularity: &'static str,
    pub scene_id: Option<String>,
    #[serde(rename = "mAcc")]
    pub m_acc: f64,
    pub f_miou: f64,
    pub overall_acc: f64,
    pub matched_points: u64,
    pub unmatched_points: u64,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

impl Metrics {
    pub fn from_confusion(m: &ConfusionMatrix, names: &[String], scene_id: Option<String>) -> Result<Self> {
        let per_class = names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                (
                    name.clone(),
                    ClassMetrics {
                        acc: m.accuracy(c),
                        iou: m.iou(c),
                        support: m.gt_total(c),
                    },
                )
            })
            .collect();
        Ok(Self {
            granularity: "point",
            scene_id,
            m_acc: mean_accuracy(m)?,
            f_miou: freq_weighted_miou(m)?,
            overall_acc: overall_accuracy(m)?,
            matched_points: m.total(),
            unmatched_points: m.unmatched,
            per_class,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,acc,iou,support\n");
        let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
        for (name, c) in &self.per_class {
            out.push_str(&format!("{name},{},{},{}\n", fmt(c.acc), fmt(c.iou), c.support));
        }
        out
    }
}

/// Full evaluation of a map against ground truth. Fails with a scene mismatch
/// when both sides carry scene ids that differ.
pub fn evaluate(map: &SemanticMap, gt: &GroundTruth, categories: &CategoryFile) -> Result<Metrics> {
    check_scene(map.scene_id(), Some(gt.scene_id.as_str()))?;
    check_scene(map.scene_id(), categories.scene_id.as_deref())?;
    let classes = categories.categories.len();
    if classes == 0 {
        return Err(Error::InvalidArgument("empty category list".into()));
    }
    if let Some(p) = gt.points.iter().find(|p| p.category as usize >= classes) {
        return Err(Error::Format(format!("ground-truth category {} out of range", p.category)));
    }
    let labels = label_instances(&categories.embeddings(), map.semantics());
    let index = GtIndex::new(&gt.points, map.config().gt_match_radius());
    let mut m = ConfusionMatrix::new(classes);
    for p in map.labeled_points() {
        match (labels.get(&p.owner), index.nearest(&p.position)) {
            (Some(&pred), Some(g)) => m.add(g.category as usize, pred, 1),
            _ => m.unmatched += 1,
        }
    }
    let names: Vec<String> = categories.categories.iter().map(|c| c.name.clone()).collect();
    Metrics::from_confusion(&m, &names, map.scene_id().map(str::to_string))
}

fn check_scene(map: Option<&str>, other: Option<&str>) -> Result<()> {
    match (map, other) {
        (Some(a), Some(b)) if !b.is_empty() && a != b => Err(Error::SceneMismatch {
            map: a.to_string(),
            gt: b.to_string(),
        }),
        _ => Ok(()),
    }
}
