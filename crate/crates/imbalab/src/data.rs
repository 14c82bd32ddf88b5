//! Seeded synthetic imbalanced datasets: Gaussian blob classification sets
//! and toy segmentation scenes whose thin and rare structures stand in for
//! pole- and bike-like minority classes.
//!
//! Generation is fully determined by (generator, seed, parameters); that
//! provenance is embedded in every dataset file so regeneration is
//! bit-identical.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::rng::Rng;

pub const DATASET_VERSION: u32 = 1;

/// How a dataset came to be; enough to regenerate it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub params: serde_json::Value,
}

/// Flat classification dataset: one feature row and one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn samples(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Gaussian blob generator parameters. Class c draws `counts[c]` samples from
/// an isotropic Gaussian with standard deviation `noise` around a seeded
/// random center; centers are pairwise at least `separation` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub counts: Vec<u64>,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
}

fn place_blob_centers(rng: &mut Rng, spec: &BlobSpec) -> Result<Vec<Vec<f64>>> {
    let classes = spec.counts.len();
    let sep = spec.separation;
    for _restart in 0..20 {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let first: Vec<f64> = (0..spec.dim).map(|_| rng.uniform(0.0, sep)).collect();
        centers.push(first);
        let mut ok = true;
        'class: for _ in 1..classes {
            for _attempt in 0..200 {
                // Random direction from the centroid of the placed centers,
                // at a distance in [sep, 1.5·sep]; keeps every pair close to
                // the minimum so class overlap stays in a controlled band.
                let mut centroid = vec![0.0; spec.dim];
                for c in &centers {
                    for (acc, v) in centroid.iter_mut().zip(c) {
                        *acc += v / centers.len() as f64;
                    }
                }
                let mut dir: Vec<f64> = (0..spec.dim).map(|_| rng.next_normal()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let dist = rng.uniform(sep, 1.5 * sep);
                for (d, c) in dir.iter_mut().zip(&centroid) {
                    *d = c + *d / norm * dist;
                }
                let far_enough = centers.iter().all(|c| {
                    let d2: f64 = c.iter().zip(&dir).map(|(a, b)| (a - b) * (a - b)).sum();
                    d2.sqrt() >= sep
                });
                if far_enough {
                    centers.push(dir);
                    continue 'class;
                }
            }
            ok = false;
            break;
        }
        if ok {
            return Ok(centers);
        }
    }
    Err(Error::Generation(format!(
        "could not place {classes} blob centers with separation {sep}"
    )))
}

/// Imbalanced Gaussian blobs with exact per-class counts.
pub fn make_blobs(seed: u64, spec: &BlobSpec) -> Result<Dataset> {
    if spec.counts.is_empty() || spec.counts.iter().any(|&n| n == 0) {
        return Err(Error::invalid_input(
            "blob counts must be non-empty with at least one sample per class",
        ));
    }
    if spec.dim == 0 {
        return Err(Error::invalid_input("blob dimension must be >= 1"));
    }
    if !(spec.separation > 0.0) || !(spec.noise > 0.0) {
        return Err(Error::invalid_input(format!(
            "separation and noise must be positive, got {} and {}",
            spec.separation, spec.noise
        )));
    }
    let mut center_rng = Rng::from_seed_and_stream(seed, 1);
    let centers = place_blob_centers(&mut center_rng, spec)?;

    let total: u64 = spec.counts.iter().sum();
    let mut features = Matrix::zeros(total as usize, spec.dim);
    let mut labels = Vec::with_capacity(total as usize);
    let mut sample_rng = Rng::from_seed_and_stream(seed, 2);
    let mut row = 0;
    for (class, &count) in spec.counts.iter().enumerate() {
        for _ in 0..count {
            for d in 0..spec.dim {
                features.set(row, d, centers[class][d] + spec.noise * sample_rng.next_normal());
            }
            labels.push(class);
            row += 1;
        }
    }
    Ok(Dataset {
        features,
        labels,
        classes: spec.counts.len(),
        provenance: Provenance {
            generator: "blobs".into(),
            seed,
            params: serde_json::to_value(spec).expect("blob spec serializes"),
        },
    })
}

/// Shape family used to paint a class into a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// Fills everything the other classes leave uncovered.
    Background,
    /// Filled rectangles; large, easy regions.
    Rect,
    /// One-pixel-wide vertical lines, pole-like.
    VLine,
    /// Small round clusters, bike-like rarities.
    Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneClassSpec {
    pub kind: ShapeKind,
    pub frequency: f64,
    pub embedding: Vec<f64>,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub classes: Vec<SceneClassSpec>,
}

/// One labeled scene: a height×width label map plus per-pixel features.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    /// Row-major pixel labels, length height·width.
    pub labels: Vec<usize>,
    /// Per-pixel features, (height·width)×D in the same pixel order.
    pub features: Matrix,
}

/// A set of scenes drawn from one spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSet {
    pub scenes: Vec<Scene>,
    pub classes: usize,
    pub feature_dim: usize,
    pub provenance: Provenance,
}

impl SceneSet {
    /// Flattens every pixel of every scene into one classification dataset.
    pub fn flatten(&self) -> Dataset {
        let pixels_per_scene = self.scenes.first().map_or(0, |s| s.labels.len());
        let total = pixels_per_scene * self.scenes.len();
        let mut features = Matrix::zeros(total, self.feature_dim);
        let mut labels = Vec::with_capacity(total);
        let mut row = 0;
        for scene in &self.scenes {
            for p in 0..scene.labels.len() {
                features.row_mut(row).copy_from_slice(scene.features.row(p));
                labels.push(scene.labels[p]);
                row += 1;
            }
        }
        Dataset {
            features,
            labels,
            classes: self.classes,
            provenance: self.provenance.clone(),
        }
    }
}

fn validate_scene_spec(spec: &SceneSpec) -> Result<usize> {
    if spec.count == 0 {
        return Err(Error::invalid_input("scene count must be >= 1"));
    }
    if spec.height < 8 || spec.width < 8 {
        return Err(Error::invalid_input(format!(
            "scenes must be at least 8x8, got {}x{}",
            spec.height, spec.width
        )));
    }
    if spec.classes.is_empty() {
        return Err(Error::invalid_input("scene spec declares no classes"));
    }
    let backgrounds = spec
        .classes
        .iter()
        .filter(|c| c.kind == ShapeKind::Background)
        .count();
    if backgrounds != 1 {
        return Err(Error::invalid_input(format!(
            "scene spec needs exactly one background class, found {backgrounds}"
        )));
    }
    let freq_sum: f64 = spec.classes.iter().map(|c| c.frequency).sum();
    if spec.classes.iter().any(|c| c.frequency < 0.0) || (freq_sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid_input(format!(
            "class frequencies must be non-negative and sum to 1, got sum {freq_sum}"
        )));
    }
    let dim = spec.classes[0].embedding.len();
    if dim == 0 || spec.classes.iter().any(|c| c.embedding.len() != dim) {
        return Err(Error::invalid_input(
            "class embeddings must be non-empty and share one dimension",
        ));
    }
    if spec.classes.iter().any(|c| c.noise < 0.0) {
        return Err(Error::invalid_input("feature noise must be non-negative"));
    }
    Ok(dim)
}

struct ScenePainter<'a> {
    labels: &'a mut [usize],
    height: usize,
    width: usize,
}

impl ScenePainter<'_> {
    /// Paints a filled rect; returns how many pixels changed to `class`.
    fn rect(&mut self, class: usize, top: usize, left: usize, h: usize, w: usize) -> usize {
        let mut painted = 0;
        for r in top..(top + h).min(self.height) {
            for c in left..(left + w).min(self.width) {
                let idx = r * self.width + c;
                if self.labels[idx] != class {
                    self.labels[idx] = class;
                    painted += 1;
                }
            }
        }
        painted
    }

    fn vline(&mut self, class: usize, col: usize, top: usize, len: usize) -> usize {
        let mut painted = 0;
        for r in top..(top + len).min(self.height) {
            let idx = r * self.width + col;
            if self.labels[idx] != class {
                self.labels[idx] = class;
                painted += 1;
            }
        }
        painted
    }

    fn blob(&mut self, class: usize, center_r: usize, center_c: usize, radius: usize) -> usize {
        let mut painted = 0;
        let rr = radius as isize;
        for dr in -rr..=rr {
            for dc in -rr..=rr {
                if dr * dr + dc * dc > (rr * rr + 1) {
                    continue;
                }
                let r = center_r as isize + dr;
                let c = center_c as isize + dc;
                if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
                    continue;
                }
                let idx = r as usize * self.width + c as usize;
                if self.labels[idx] != class {
                    self.labels[idx] = class;
                    painted += 1;
                }
            }
        }
        painted
    }
}

/// Composes scenes from the spec: background first, then shaped classes in
/// descending frequency order so the rarest shapes are painted last and
/// always survive overlap. Per-scene pixel quotas follow the cumulative
/// fractional targets, keeping whole-set frequencies on target.
pub fn make_scenes(seed: u64, spec: &SceneSpec) -> Result<SceneSet> {
    let dim = validate_scene_spec(spec)?;
    let background = spec
        .classes
        .iter()
        .position(|c| c.kind == ShapeKind::Background)
        .expect("validated");
    let mut order: Vec<usize> = (0..spec.classes.len()).filter(|&c| c != background).collect();
    order.sort_by(|&a, &b| {
        spec.classes[b]
            .frequency
            .partial_cmp(&spec.classes[a].frequency)
            .expect("finite frequencies")
            .then(a.cmp(&b))
    });

    let pixels = spec.height * spec.width;
    let mut scenes = Vec::with_capacity(spec.count);
    for scene_idx in 0..spec.count {
        let mut rng = Rng::from_seed_and_stream(seed, 1000 + scene_idx as u64);
        let mut labels = vec![background; pixels];
        let mut painter = ScenePainter {
            labels: &mut labels,
            height: spec.height,
            width: spec.width,
        };
        for &class in &order {
            let freq = spec.classes[class].frequency;
            if freq <= 0.0 {
                continue;
            }
            let per_set = freq * pixels as f64;
            let target = ((per_set * (scene_idx + 1) as f64).floor()
                - (per_set * scene_idx as f64).floor()) as usize;
            let mut placed = 0usize;
            let mut attempts = 0usize;
            while placed + 2 < target && attempts < 200 {
                attempts += 1;
                let remaining = target - placed;
                placed += match spec.classes[class].kind {
                    ShapeKind::Rect => {
                        let max_w = (spec.width / 3).max(2);
                        let max_h = (spec.height / 3).max(2);
                        let w = ((remaining as f64).sqrt().floor() as usize).clamp(2, max_w);
                        let h = (remaining.div_ceil(w)).clamp(2, max_h);
                        let top = rng.below(spec.height - h + 1);
                        let left = rng.below(spec.width - w + 1);
                        painter.rect(class, top, left, h, w)
                    }
                    ShapeKind::VLine => {
                        let len = remaining.clamp(3, 3 * spec.height / 4);
                        let col = rng.below(spec.width);
                        let top = rng.below(spec.height - len + 1);
                        painter.vline(class, col, top, len)
                    }
                    ShapeKind::Blob => {
                        let radius = if remaining >= 13 { 2 } else { 1 };
                        let r = radius + rng.below(spec.height - 2 * radius);
                        let c = radius + rng.below(spec.width - 2 * radius);
                        painter.blob(class, r, c, radius)
                    }
                    ShapeKind::Background => unreachable!("background is never placed"),
                };
            }
        }

        let mut features = Matrix::zeros(pixels, dim);
        for (p, &label) in labels.iter().enumerate() {
            let class = &spec.classes[label];
            for d in 0..dim {
                features.set(p, d, class.embedding[d] + class.noise * rng.next_normal());
            }
        }
        scenes.push(Scene {
            height: spec.height,
            width: spec.width,
            labels,
            features,
        });
    }

    let set = SceneSet {
        scenes,
        classes: spec.classes.len(),
        feature_dim: dim,
        provenance: Provenance {
            generator: "scenes".into(),
            seed,
            params: serde_json::to_value(spec).expect("scene spec serializes"),
        },
    };

    // Whole-set frequency check: ±20% relative for every declared class.
    let total_pixels = (pixels * spec.count) as f64;
    let mut counts = vec![0u64; spec.classes.len()];
    for scene in &set.scenes {
        for &l in &scene.labels {
            counts[l] += 1;
        }
    }
    for (c, class) in spec.classes.iter().enumerate() {
        if class.frequency <= 0.0 {
            continue;
        }
        let empirical = counts[c] as f64 / total_pixels;
        let rel = (empirical - class.frequency).abs() / class.frequency;
        if rel > 0.20 {
            return Err(Error::Generation(format!(
                "class {c} frequency {empirical:.6} misses target {:.6} by {:.1}%",
                class.frequency,
                rel * 100.0
            )));
        }
    }
    Ok(set)
}

/// N_c/N for every class; the counts sum to the label count exactly.
pub fn class_frequencies(labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::invalid_input("cannot compute frequencies of an empty label set"));
    }
    let mut counts = vec![0u64; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::invalid_input(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / n).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    version: u32,
    generator: String,
    seed: u64,
    params: serde_json::Value,
    samples: usize,
    feature_dim: usize,
    classes: usize,
}

/// Writes a dataset as a one-line JSON header followed by the little-endian
/// f64 payload: all features row-major, then the labels.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let header = DatasetHeader {
        version: DATASET_VERSION,
        generator: dataset.provenance.generator.clone(),
        seed: dataset.provenance.seed,
        params: dataset.provenance.params.clone(),
        samples: dataset.samples(),
        feature_dim: dataset.feature_dim(),
        classes: dataset.classes,
    };
    let mut bytes = serde_json::to_string(&header)
        .expect("header serializes")
        .into_bytes();
    bytes.push(b'\n');
    for &v in dataset.features.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &dataset.labels {
        bytes.extend_from_slice(&(l as f64).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or(Error::Format {
        offset: bytes.len() as u64,
        message: "missing header line".into(),
    })?;
    let header: DatasetHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Format {
            offset: 0,
            message: format!("malformed header: {e}"),
        })?;
    if header.version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: DATASET_VERSION,
        });
    }
    let payload = &bytes[newline + 1..];
    let expected = (header.samples * header.feature_dim + header.samples) * 8;
    if payload.len() != expected {
        return Err(Error::Format {
            offset: (newline + 1 + payload.len().min(expected)) as u64,
            message: format!(
                "payload holds {} bytes, header implies {expected}",
                payload.len()
            ),
        });
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut features = Matrix::zeros(header.samples, header.feature_dim);
    for v in features.as_mut_slice() {
        *v = values.next().unwrap();
    }
    let mut labels = Vec::with_capacity(header.samples);
    for i in 0..header.samples {
        let raw = values.next().unwrap();
        let label = raw as usize;
        if raw.fract() != 0.0 || raw < 0.0 || label >= header.classes {
            return Err(Error::Format {
                offset: (newline + 1 + (header.samples * header.feature_dim + i) * 8) as u64,
                message: format!("label payload value {raw} is not a class id"),
            });
        }
        labels.push(label);
    }
    Ok(Dataset {
        features,
        labels,
        classes: header.classes,
        provenance: Provenance {
            generator: header.generator,
            seed: header.seed,
            params: header.params,
        },
    })
}
