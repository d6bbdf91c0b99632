//! On-disk frame archive.
//!
//! ```text
//! manifest.json
//! frames/NNNNNN.depth.png   16-bit grayscale, raw × depth_scale = meters
//! frames/NNNNNN.masks.png   16-bit grayscale ids, 0 = background, k + 1 = mask k
//! frames/NNNNNN.conf.bin    u32 K, then K rasters of u8 (value / 255)
//! frames/NNNNNN.emb.bin     u32 K, u32 d, u32 d', K×d f32, K×d' f32 (little endian)
//! frames/NNNNNN.pose.txt    row-major 4x4 camera-to-world
//! frames/NNNNNN.color.png   optional RGB8
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{
    decode_depth, dequantize_confidence, encode_depth, quantize_confidence, validate_frame,
    CameraIntrinsics, EmbeddingPair, FrameBundle, Pose,
};
use crate::raster::{Mask, Raster};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub intrinsics: CameraIntrinsics,
    /// Meters per raw depth unit.
    pub depth_scale: f64,
    /// Object-channel embedding dimension d.
    pub embedding_dim: usize,
    /// Environment-channel embedding dimension d'; 0 when absent.
    pub context_dim: usize,
    pub frame_count: usize,
    /// Frame indices in storage order; `0..frame_count` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_indices: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    /// Fingerprint of the generating scene, carried into maps for eval checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    /// Producer metadata (model names, extraction parameters).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(intrinsics: CameraIntrinsics, depth_scale: f64, embedding_dim: usize, context_dim: usize) -> Self {
        Self {
            intrinsics,
            depth_scale,
            embedding_dim,
            context_dim,
            frame_count: 0,
            frame_indices: None,
            categories: None,
            scene_id: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn indices(&self) -> Vec<u64> {
        self.frame_indices
            .clone()
            .unwrap_or_else(|| (0..self.frame_count as u64).collect())
    }
}

fn frame_path(dir: &Path, index: u64, suffix: &str) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{index:06}.{suffix}"))
}

/// Writes `frames` as a complete archive under `dir`, rewriting the manifest's frame list.
pub fn write_archive<'a>(
    dir: &Path,
    manifest: &Manifest,
    frames: impl IntoIterator<Item = &'a FrameBundle>,
) -> Result<Manifest> {
    let mut writer = ArchiveWriter::create(dir, manifest.clone())?;
    for frame in frames {
        writer.push(frame)?;
    }
    writer.finish()
}

/// Streams frames to disk one at a time; the manifest is written on `finish`.
pub struct ArchiveWriter {
    dir: PathBuf,
    manifest: Manifest,
    indices: Vec<u64>,
}

impl ArchiveWriter {
    pub fn create(dir: &Path, manifest: Manifest) -> Result<Self> {
        manifest.intrinsics.validate()?;
        if !(manifest.depth_scale > 0.0) {
            return Err(Error::InvalidArgument("depth_scale must be positive".into()));
        }
        let frames = dir.join(FRAMES_DIR);
        fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            indices: Vec::new(),
        })
    }

    pub fn push(&mut self, frame: &FrameBundle) -> Result<()> {
        if let Some(&last) = self.indices.last() {
            if frame.index <= last {
                return Err(Error::Sequence(format!(
                    "frame index {} does not follow {}",
                    frame.index, last
                )));
            }
        }
        let violations = validate_frame(
            frame,
            &self.manifest.intrinsics,
            Some((self.manifest.embedding_dim, self.manifest.context_dim)),
        );
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::frame(frame.index, text.join("; ")));
        }
        write_frame(&self.dir, frame, self.manifest.depth_scale)?;
        self.indices.push(frame.index);
        Ok(())
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.frame_count = self.indices.len();
        let contiguous = self.indices.iter().enumerate().all(|(i, &x)| x == i as u64);
        self.manifest.frame_indices = if contiguous { None } else { Some(self.indices) };
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

fn write_png<P: image::Pixel<Subpixel = S> + image::PixelWithColorType, S: image::Primitive>(
    path: &Path,
    img: &ImageBuffer<P, Vec<S>>,
) -> Result<()>
where
    [S]: image::EncodableLayout,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_frame(dir: &Path, frame: &FrameBundle, depth_scale: f64) -> Result<()> {
    let (w, h) = frame.depth.dims();
    let index = frame.index;

    let raw = encode_depth(&frame.depth, depth_scale)?;
    let depth_img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, raw.into_vec()).expect("raster length");
    write_png(&frame_path(dir, index, "depth.png"), &depth_img)?;

    if frame.masks.len() >= u16::MAX as usize {
        return Err(Error::frame(index, "too many masks for a 16-bit id raster"));
    }
    let mut ids = vec![0u16; w as usize * h as usize];
    for (k, m) in frame.masks.iter().enumerate() {
        for (u, v) in m.iter_set() {
            ids[v as usize * w as usize + u as usize] = k as u16 + 1;
        }
    }
    let mask_img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, ids).expect("raster length");
    write_png(&frame_path(dir, index, "masks.png"), &mask_img)?;

    let mut conf = Vec::with_capacity(4 + frame.confidences.len() * w as usize * h as usize);
    conf.write_u32::<LittleEndian>(frame.confidences.len() as u32).unwrap();
    for c in &frame.confidences {
        conf.extend(c.data().iter().map(|&x| quantize_confidence(x)));
    }
    write_bytes(&frame_path(dir, index, "conf.bin"), &conf)?;

    let d = frame.embeddings.first().map_or(0, |e| e.object.len());
    let d_env = frame.embeddings.first().map_or(0, |e| e.environment.len());
    let mut emb = Vec::new();
    emb.write_u32::<LittleEndian>(frame.embeddings.len() as u32).unwrap();
    emb.write_u32::<LittleEndian>(d as u32).unwrap();
    emb.write_u32::<LittleEndian>(d_env as u32).unwrap();
    for e in &frame.embeddings {
        for &x in &e.object {
            emb.write_f32::<LittleEndian>(x).unwrap();
        }
    }
    for e in &frame.embeddings {
        for &x in &e.environment {
            emb.write_f32::<LittleEndian>(x).unwrap();
        }
    }
    write_bytes(&frame_path(dir, index, "emb.bin"), &emb)?;

    let mut pose = String::new();
    for row in frame.pose.to_rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        pose.push_str(&cells.join(" "));
        pose.push('\n');
    }
    write_bytes(&frame_path(dir, index, "pose.txt"), pose.as_bytes())?;

    if let Some(color) = &frame.color {
        let bytes: Vec<u8> = color.data().iter().flatten().copied().collect();
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, bytes).expect("raster length");
        write_png(&frame_path(dir, index, "color.png"), &img)?;
    }
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Opens an archive for streaming. Frames are decoded lazily in index order.
pub fn load_sequence(dir: &Path) -> Result<SequenceReader> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    manifest
        .intrinsics
        .validate()
        .map_err(|e| Error::Format(format!("manifest intrinsics: {e}")))?;
    if !(manifest.depth_scale > 0.0) {
        return Err(Error::Format("manifest depth_scale must be positive".into()));
    }
    let indices = manifest.indices();
    if indices.len() != manifest.frame_count {
        return Err(Error::Format(format!(
            "manifest lists {} frame indices but frame_count is {}",
            indices.len(),
            manifest.frame_count
        )));
    }
    if let Some(w) = indices.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Sequence(format!(
            "frame indices not strictly increasing: {} then {}",
            w[0], w[1]
        )));
    }
    Ok(SequenceReader {
        dir: dir.to_path_buf(),
        manifest,
        indices,
        cursor: 0,
    })
}

pub struct SequenceReader {
    dir: PathBuf,
    manifest: Manifest,
    indices: Vec<u64>,
    cursor: usize,
}

impl SequenceReader {
    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl Iterator for SequenceReader {
    type Item = Result<FrameBundle>;

    fn next(&mut self) -> Option<Self::Item> {
        let index = *self.indices.get(self.cursor)?;
        self.cursor += 1;
        Some(read_frame(&self.dir, &self.manifest, index))
    }
}

fn read_file(path: &Path, index: u64) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::frame(index, format!("{}: {e}", path.display())))
}

fn read_u16_png(path: &Path, index: u64, dims: (u32, u32)) -> Result<Raster<u16>> {
    let bytes = read_file(path, index)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::frame(index, format!("{}: {e}", path.display())))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::frame(
                index,
                format!("{}: expected 16-bit grayscale, got {:?}", path.display(), other.color()),
            ))
        }
    };
    if img.dimensions() != dims {
        return Err(Error::frame(
            index,
            format!("{}: dimensions {:?}, expected {:?}", path.display(), img.dimensions(), dims),
        ));
    }
    Raster::from_vec(dims.0, dims.1, img.into_raw())
}

fn read_frame(dir: &Path, manifest: &Manifest, index: u64) -> Result<FrameBundle> {
    let intr = &manifest.intrinsics;
    let dims = (intr.width, intr.height);
    let n = intr.pixel_count();
    let ferr = |reason: String| Error::frame(index, reason);

    let raw = read_u16_png(&frame_path(dir, index, "depth.png"), index, dims)?;
    let depth = decode_depth(&raw, manifest.depth_scale)?;
    let ids = read_u16_png(&frame_path(dir, index, "masks.png"), index, dims)?;

    let conf_bytes = read_file(&frame_path(dir, index, "conf.bin"), index)?;
    let mut cur = Cursor::new(conf_bytes.as_slice());
    let k = cur
        .read_u32::<LittleEndian>()
        .map_err(|e| ferr(format!("conf.bin header: {e}")))? as usize;
    if conf_bytes.len() != 4 + k * n {
        return Err(ferr(format!(
            "conf.bin holds {} bytes, expected {} for {k} maps",
            conf_bytes.len(),
            4 + k * n
        )));
    }
    let confidences = (0..k)
        .map(|i| {
            let start = 4 + i * n;
            let data = conf_bytes[start..start + n].iter().map(|&q| dequantize_confidence(q)).collect();
            Raster::from_vec(dims.0, dims.1, data)
        })
        .collect::<Result<Vec<_>>>()?;

    let emb_bytes = read_file(&frame_path(dir, index, "emb.bin"), index)?;
    let mut cur = Cursor::new(emb_bytes.as_slice());
    let mut header = [0u32; 3];
    for h in header.iter_mut() {
        *h = cur
            .read_u32::<LittleEndian>()
            .map_err(|e| ferr(format!("emb.bin header: {e}")))?;
    }
    let [ek, d, d_env] = header.map(|x| x as usize);
    if ek != k {
        return Err(ferr(format!("emb.bin has {ek} pairs but conf.bin has {k} maps")));
    }
    if emb_bytes.len() != 12 + 4 * k * (d + d_env) {
        return Err(ferr(format!("emb.bin holds {} bytes, expected {}", emb_bytes.len(), 12 + 4 * k * (d + d_env))));
    }
    let mut read_vec = |len: usize| -> Vec<f32> {
        let mut v = vec![0f32; len];
        cur.read_f32_into::<LittleEndian>(&mut v).expect("length checked");
        v
    };
    let objects: Vec<Vec<f32>> = (0..k).map(|_| read_vec(d)).collect();
    let environments: Vec<Vec<f32>> = (0..k).map(|_| read_vec(d_env)).collect();
    let embeddings = objects
        .into_iter()
        .zip(environments)
        .map(|(object, environment)| EmbeddingPair { object, environment })
        .collect();

    let mut masks = vec![Mask::empty(dims.0, dims.1); k];
    for v in 0..dims.1 {
        for u in 0..dims.0 {
            let id = *ids.get(u, v) as usize;
            if id == 0 {
                continue;
            }
            if id > k {
                return Err(ferr(format!("mask id {} at ({u}, {v}) exceeds mask count {k}", id - 1)));
            }
            masks[id - 1].set(u, v);
        }
    }

    let pose_path = frame_path(dir, index, "pose.txt");
    let mut pose_text = String::new();
    fs::File::open(&pose_path)
        .and_then(|mut f| f.read_to_string(&mut pose_text))
        .map_err(|e| ferr(format!("{}: {e}", pose_path.display())))?;
    let values: Vec<f64> = pose_text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| ferr(format!("pose.txt: {e}")))?;
    if values.len() != 16 {
        return Err(ferr(format!("pose.txt has {} values, expected 16", values.len())));
    }
    let mut rows = [[0.0; 4]; 4];
    for (i, x) in values.into_iter().enumerate() {
        rows[i / 4][i % 4] = x;
    }
    let pose = Pose::from_rows(&rows).map_err(|e| ferr(format!("pose.txt: {e}")))?;

    let color_path = frame_path(dir, index, "color.png");
    let color = if color_path.exists() {
        let bytes = read_file(&color_path, index)?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| ferr(format!("{}: {e}", color_path.display())))?
            .into_rgb8();
        if img.dimensions() != dims {
            return Err(ferr(format!("color.png dimensions {:?}, expected {:?}", img.dimensions(), dims)));
        }
        let px = img.pixels().map(|p| p.0).collect();
        Some(Raster::from_vec(dims.0, dims.1, px)?)
    } else {
        None
    };

    let bundle = FrameBundle {
        index,
        depth,
        pose,
        masks,
        confidences,
        embeddings,
        color,
    };
    let violations = validate_frame(&bundle, intr, Some((manifest.embedding_dim, manifest.context_dim)));
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(ferr(text.join("; ")));
    }
    Ok(bundle)
}
