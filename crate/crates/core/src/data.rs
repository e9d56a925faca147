//! Sequence datasets: directory ingestion, Lucas-Kanade flow, a synthetic
//! generator and the identity-level split.
//!
//! Every frame tensor is `[H, W, 5]`: RGB in `[0, 1]` followed by the
//! horizontal and vertical flow from the previous frame, in pixels divided
//! by the frame width and clamped to `[-1, 1]`. Frame 0 has zero flow.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FRAME_CHANNELS: usize = 5;

/// Local systems with a smaller determinant are treated as untextured.
pub const FLOW_DET_EPS: f64 = 1e-8;

const FRAME_EXTENSIONS: [&str; 2] = ["png", "ppm"];

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub person_id: usize,
    pub camera_id: usize,
    pub frames: Vec<Tensor>,
}

impl SequenceSample {
    /// Builds a sample from RGB frames `[H, W, 3]`, computing flow.
    pub fn from_rgb(person_id: usize, camera_id: usize, rgb: &[Tensor]) -> Result<Self> {
        let first = rgb
            .first()
            .ok_or_else(|| Error::Dataset(format!("person {person_id} camera {camera_id}: no frames")))?;
        let (h, w, c) = first.hwc()?;
        if c != 3 {
            return Err(Error::shape("from_rgb", format!("expected RGB frames, got {c} channels")));
        }
        let mut frames = Vec::with_capacity(rgb.len());
        for (t, f) in rgb.iter().enumerate() {
            if f.shape() != first.shape() {
                return Err(Error::Dataset(format!(
                    "person {person_id} camera {camera_id}: frame {t} is {:?}, frame 0 is {:?}",
                    f.shape(),
                    first.shape()
                )));
            }
            let flow = if t == 0 {
                Tensor::zeros([h, w, 2])?
            } else {
                compute_flow(&rgb[t - 1], f)?
            };
            let mut data = Vec::with_capacity(h * w * FRAME_CHANNELS);
            for (px, fl) in f.data().chunks_exact(3).zip(flow.data().chunks_exact(2)) {
                data.extend_from_slice(px);
                data.extend_from_slice(fl);
            }
            frames.push(Tensor::new([h, w, FRAME_CHANNELS], data)?);
        }
        Ok(Self {
            person_id,
            camera_id,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Up to `len` consecutive frames starting at `start`.
    pub fn window(&self, start: usize, len: usize) -> &[Tensor] {
        let start = start.min(self.frames.len());
        let end = (start + len).min(self.frames.len());
        &self.frames[start..end]
    }

    /// RGB channels of every frame.
    pub fn rgb_frames(&self) -> Result<Vec<Tensor>> {
        self.frames
            .iter()
            .map(|f| {
                let (h, w, _) = f.hwc()?;
                let data = f.data().chunks_exact(FRAME_CHANNELS).flat_map(|p| p[..3].iter().copied()).collect();
                Tensor::new([h, w, 3], data)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn train_ids(&self) -> Vec<usize> {
        identities(&self.train)
    }

    pub fn test_ids(&self) -> Vec<usize> {
        identities(&self.test)
    }
}

/// Sorted distinct person ids.
pub fn identities(samples: &[SequenceSample]) -> Vec<usize> {
    samples.iter().map(|s| s.person_id).collect::<BTreeSet<_>>().into_iter().collect()
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() == want_dirs {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Frame {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new([h as usize, w as usize, 3], data)
}

/// Reads `root/<person>/<camera>/<frame>.{png,ppm}`.
///
/// Person and camera ids are positions in the sorted directory names
/// (cameras are numbered over the union of camera names). Frames are
/// ordered by file name, so frame numbers must be zero-padded.
pub fn load_dataset(root: &Path) -> Result<Vec<SequenceSample>> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let persons = sorted_entries(root, true)?;
    let mut layout = Vec::new();
    let mut camera_names = BTreeSet::new();
    for person in &persons {
        let cameras = sorted_entries(person, true)?;
        if cameras.is_empty() {
            return Err(Error::Dataset(format!("{} has no camera directories", person.display())));
        }
        for cam in &cameras {
            camera_names.insert(file_name(cam));
        }
        layout.push(cameras);
    }
    let camera_ids: BTreeMap<String, usize> =
        camera_names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();

    let mut jobs = Vec::new();
    for (pid, cameras) in layout.into_iter().enumerate() {
        for cam in cameras {
            let frames: Vec<PathBuf> = sorted_entries(&cam, false)?
                .into_iter()
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                })
                .collect();
            if frames.is_empty() {
                return Err(Error::Dataset(format!("{} contains no frames", cam.display())));
            }
            jobs.push((pid, camera_ids[&file_name(&cam)], frames));
        }
    }

    jobs.into_par_iter()
        .map(|(pid, cid, paths)| {
            let rgb = paths.iter().map(|p| read_rgb(p)).collect::<Result<Vec<_>>>()?;
            if let Some(t) = rgb.iter().position(|f| f.shape() != rgb[0].shape()) {
                return Err(Error::Frame {
                    path: paths[t].clone(),
                    detail: format!(
                        "frame is {:?} but the sequence starts with {:?}",
                        rgb[t].shape(),
                        rgb[0].shape()
                    ),
                });
            }
            SequenceSample::from_rgb(pid, cid, &rgb)
        })
        .collect()
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the RGB channels in the [`load_dataset`] layout as PNG files
/// (`person_NNNN/cam_N/NNNN.png`).
pub fn export(samples: &[SequenceSample], root: &Path) -> Result<()> {
    for s in samples {
        let dir = root.join(format!("person_{:04}", s.person_id)).join(format!("cam_{}", s.camera_id));
        fs::create_dir_all(&dir)?;
        for (t, frame) in s.frames.iter().enumerate() {
            let (h, w, _) = frame.hwc()?;
            let bytes: Vec<u8> = frame
                .data()
                .chunks_exact(FRAME_CHANNELS)
                .flat_map(|p| p[..3].iter().map(|&v| to_byte(v)))
                .collect();
            let path = dir.join(format!("{t:04}.png"));
            image::RgbImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer matches dimensions")
                .save(&path)
                .map_err(|e| Error::Frame {
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
        }
    }
    Ok(())
}

pub fn grayscale(rgb: &Tensor) -> Result<Vec<f64>> {
    let (_, _, c) = rgb.hwc()?;
    if c < 3 {
        return Err(Error::shape("grayscale", format!("expected at least 3 channels, got {c}")));
    }
    Ok(rgb
        .data()
        .chunks_exact(c)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect())
}

/// Single-level Lucas-Kanade over a 3x3 window, in pixels.
///
/// Spatial derivatives are central differences (one-sided at the border)
/// averaged over both frames; the temporal derivative is `next - prev`.
/// Returns `(u, v)` row-major.
pub fn lucas_kanade(prev: &[f64], next: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(prev.len(), h * w);
    assert_eq!(next.len(), h * w);
    let grad = |img: &[f64], i: usize, j: usize| -> (f64, f64) {
        let (j0, j1) = (j.saturating_sub(1), (j + 1).min(w - 1));
        let (i0, i1) = (i.saturating_sub(1), (i + 1).min(h - 1));
        let gx = if j1 > j0 { (img[i * w + j1] - img[i * w + j0]) / (j1 - j0) as f64 } else { 0.0 };
        let gy = if i1 > i0 { (img[i1 * w + j] - img[i0 * w + j]) / (i1 - i0) as f64 } else { 0.0 };
        (gx, gy)
    };
    let n = h * w;
    let (mut ix, mut iy, mut it) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..h {
        for j in 0..w {
            let (ax, ay) = grad(prev, i, j);
            let (bx, by) = grad(next, i, j);
            let k = i * w + j;
            ix[k] = 0.5 * (ax + bx);
            iy[k] = 0.5 * (ay + by);
            it[k] = next[k] - prev[k];
        }
    }
    let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..h {
        for j in 0..w {
            let (mut sxx, mut sxy, mut syy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                for b in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                    let k = a * w + b;
                    sxx += ix[k] * ix[k];
                    sxy += ix[k] * iy[k];
                    syy += iy[k] * iy[k];
                    sxt += ix[k] * it[k];
                    syt += iy[k] * it[k];
                }
            }
            let det = sxx * syy - sxy * sxy;
            if det.abs() < FLOW_DET_EPS {
                continue;
            }
            u[i * w + j] = (-syy * sxt + sxy * syt) / det;
            v[i * w + j] = (sxy * sxt - sxx * syt) / det;
        }
    }
    (u, v)
}

/// Flow `[H, W, 2]` from `prev` to `next` (both `[H, W, 3]`), normalized
/// by the width and clamped to `[-1, 1]`.
pub fn compute_flow(prev: &Tensor, next: &Tensor) -> Result<Tensor> {
    if prev.shape() != next.shape() {
        return Err(Error::shape(
            "compute_flow",
            format!("frames {:?} and {:?} differ", prev.shape(), next.shape()),
        ));
    }
    let (h, w, _) = prev.hwc()?;
    let (u, v) = lucas_kanade(&grayscale(prev)?, &grayscale(next)?, h, w);
    let scale = 1.0 / w as f64;
    let data = u
        .iter()
        .zip(&v)
        .flat_map(|(a, b)| [(a * scale).clamp(-1.0, 1.0), (b * scale).clamp(-1.0, 1.0)])
        .collect();
    Tensor::new([h, w, 2], data)
}

/// splitmix64 finalizer; decorrelates the per-(seed, id, camera) streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sub_rng(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed ^ tag).wrapping_add(a)).wrapping_add(b)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub num_ids: usize,
    pub cameras: usize,
    pub frames_per_seq: usize,
    /// `(height, width)`.
    pub extent: (usize, usize),
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(num_ids: usize, frames_per_seq: usize, extent: (usize, usize), seed: u64) -> Self {
        Self {
            num_ids,
            cameras: 2,
            frames_per_seq,
            extent,
            seed,
        }
    }
}

struct Blob {
    /// Offset from the person center, in units of the frame height.
    dy: f64,
    dx: f64,
    radius: f64,
    color: [f64; 3],
}

struct Identity {
    blobs: Vec<Blob>,
    amplitude: (f64, f64),
    omega: f64,
    phase: f64,
}

struct Camera {
    gain: [f64; 3],
    offset: [f64; 3],
    background: [f64; 3],
    stripe: f64,
}

fn unit_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn identity_model(seed: u64, id: usize) -> Identity {
    let mut rng = sub_rng(seed, 1, id as u64, 0);
    // head, torso, legs stacked vertically with identity-specific colors
    let layout = [(-0.3, 0.11), (-0.05, 0.19), (0.25, 0.17)];
    let blobs = layout
        .iter()
        .map(|&(dy, r)| Blob {
            dy: dy + rng.random_range(-0.04..0.04),
            dx: rng.random_range(-0.06..0.06),
            radius: r * rng.random_range(0.85..1.15),
            color: unit_color(&mut rng),
        })
        .collect();
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(0.08..0.2);
    Identity {
        blobs,
        amplitude: (amp * angle.cos(), amp * angle.sin()),
        omega: rng.random_range(0.3..0.9),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    }
}

fn camera_model(seed: u64, cam: usize) -> Camera {
    let mut rng = sub_rng(seed, 2, cam as u64, 0);
    let mut gain = [0.0; 3];
    let mut offset = [0.0; 3];
    for c in 0..3 {
        gain[c] = rng.random_range(0.9..1.1);
        offset[c] = rng.random_range(-0.1..0.1);
    }
    Camera {
        gain,
        offset,
        background: unit_color(&mut rng).map(|v| 0.2 + 0.6 * v),
        stripe: rng.random_range(0.2..0.6),
    }
}

fn render_sequence(spec: &SynthSpec, id: usize, cam: usize) -> Result<Vec<Tensor>> {
    let person = identity_model(spec.seed, id);
    let camera = camera_model(spec.seed, cam);
    let mut rng = sub_rng(spec.seed, 3, id as u64, cam as u64);
    let (h, w) = spec.extent;
    let (hf, wf) = (h as f64, w as f64);
    // where the person stands differs per sighting
    let cx0 = rng.random_range(0.35..0.65) * wf;
    let cy0 = rng.random_range(0.45..0.55) * hf;
    let t0: f64 = rng.random_range(0.0..10.0);
    let mut frames = Vec::with_capacity(spec.frames_per_seq);
    for t in 0..spec.frames_per_seq {
        let s = person.omega * (t0 + t as f64) + person.phase;
        let cx = cx0 + person.amplitude.0 * wf * s.sin();
        let cy = cy0 + person.amplitude.1 * hf * s.sin();
        let mut data = Vec::with_capacity(h * w * 3);
        for i in 0..h {
            for j in 0..w {
                let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
                let shade = 1.0 + 0.15 * (camera.stripe * (x + 0.5 * y)).sin();
                let mut px = camera.background.map(|b| b * shade);
                for blob in &person.blobs {
                    let dy = (y - cy - blob.dy * hf) / (blob.radius * hf);
                    let dx = (x - cx - blob.dx * hf) / (blob.radius * hf);
                    let a = (-(dx * dx + dy * dy) * 1.5).exp();
                    for c in 0..3 {
                        px[c] = (1.0 - a) * px[c] + a * blob.color[c];
                    }
                }
                for c in 0..3 {
                    let noisy = camera.gain[c] * px[c] + camera.offset[c] + rng.random_range(-0.02..0.02);
                    // quantized so an exported dataset loads back bit-identically
                    data.push(f64::from(to_byte(noisy)) / 255.0);
                }
            }
        }
        frames.push(Tensor::new([h, w, 3], data)?);
    }
    Ok(frames)
}

/// Synthetic re-identification sequences, one per `(identity, camera)`,
/// ordered by identity then camera.
///
/// Each identity has a persistent blob layout with its own colors and an
/// oscillating motion pattern; each camera applies its own color gain,
/// offset and textured background. Deterministic in `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<SequenceSample>> {
    if spec.num_ids < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 identities, got {}", spec.num_ids)));
    }
    if spec.cameras == 0 || spec.frames_per_seq == 0 || spec.extent.0 == 0 || spec.extent.1 == 0 {
        return Err(Error::InvalidArgument("cameras, frames and extent must be positive".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.num_ids)
        .flat_map(|id| (0..spec.cameras).map(move |cam| (id, cam)))
        .collect();
    jobs.into_par_iter()
        .map(|(id, cam)| SequenceSample::from_rgb(id, cam, &render_sequence(spec, id, cam)?))
        .collect()
}

/// Shuffles the identities with `seed` and puts the first half (rounded
/// down) in the training set.
pub fn split(samples: &[SequenceSample], seed: u64) -> Result<DatasetSplit> {
    let mut ids = identities(samples);
    if ids.len() < 2 {
        return Err(Error::Dataset(format!("need at least 2 identities to split, got {}", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_ids: BTreeSet<usize> = ids[..ids.len() / 2].iter().copied().collect();
    let (train, test) = samples.iter().cloned().partition(|s| train_ids.contains(&s.person_id));
    Ok(DatasetSplit { train, test, seed })
}
