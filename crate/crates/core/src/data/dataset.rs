//! Dual-labelled datasets, mixing, and the on-disk directory format.
//!
//! A dataset directory holds one binary PGM/PPM per sample, `labels.csv`
//! (`filename,class_label,distribution_label`) and `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::image::Image;
use crate::data::netpbm;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Distribution {
    #[serde(rename = "IN")]
    In,
    #[serde(rename = "OUT")]
    Out,
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::In => "IN",
            Distribution::Out => "OUT",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticIn,
    SyntheticOod,
    Imported,
    GeneratedBoundary,
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    /// `None` for samples without a class (out-of-distribution).
    pub class_label: Option<usize>,
    pub distribution: Distribution,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCount {
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub count: usize,
    pub classes: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub seed: u64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceCount>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    /// Wraps samples; the manifest count is set from the sample list.
    pub fn new(mut manifest: DatasetManifest, samples: Vec<LabeledSample>) -> Self {
        manifest.count = samples.len();
        Dataset { manifest, samples }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut DatasetManifest {
        &mut self.manifest
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.manifest.height,
            self.manifest.width,
            self.manifest.channels,
        )
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.samples.iter().map(|s| &s.image)
    }

    /// Stacks the selected samples into a `[n, h, w, c]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let (h, w, c) = self.dims();
        let rows: Vec<&[f64]> = indices
            .iter()
            .map(|&i| self.samples[i].image.data())
            .collect();
        Tensor::stack(&rows, &[h, w, c])
    }

    /// Copy restricted to samples matching `keep`, renamed to `name`.
    pub fn filter(&self, name: &str, keep: impl Fn(&LabeledSample) -> bool) -> Dataset {
        let samples: Vec<_> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        let mut manifest = self.manifest.clone();
        manifest.name = name.to_string();
        Dataset::new(manifest, samples)
    }

    /// Splits off the trailing `fraction` of samples (at least one when
    /// `fraction > 0`) as a second dataset.
    pub fn split_tail(&self, fraction: f64) -> (Dataset, Dataset) {
        let n = self.samples.len();
        let tail = if fraction <= 0.0 {
            0
        } else {
            ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
        };
        let head = n - tail;
        let mut a = self.manifest.clone();
        a.name = format!("{}-head", self.manifest.name);
        let mut b = self.manifest.clone();
        b.name = format!("{}-tail", self.manifest.name);
        (
            Dataset::new(a, self.samples[..head].to_vec()),
            Dataset::new(b, self.samples[head..].to_vec()),
        )
    }

    /// SHA-256 over dims, labels and exact pixel values.
    pub fn identity_hash(&self) -> String {
        let mut h = Sha256::new();
        let (ih, iw, ic) = self.dims();
        for v in [ih, iw, ic, self.samples.len()] {
            h.update((v as u64).to_le_bytes());
        }
        for s in &self.samples {
            h.update(s.class_label.map_or(u64::MAX, |c| c as u64).to_le_bytes());
            h.update([matches!(s.distribution, Distribution::In) as u8]);
            for v in s.image.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn count_by_distribution(&self) -> (usize, usize) {
        let ins = self
            .samples
            .iter()
            .filter(|s| s.distribution == Distribution::In)
            .count();
        (ins, self.samples.len() - ins)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Concatenates the in-distribution set and every OOD set, then shuffles
/// with `seed`. Labels travel with their samples.
pub fn mix(in_set: &Dataset, ood_sets: &[&Dataset], seed: u64) -> Result<Dataset> {
    let dims = in_set.dims();
    let mut samples = in_set.samples.clone();
    let mut sources = vec![SourceCount {
        name: in_set.manifest.name.clone(),
        count: in_set.len(),
    }];
    for set in ood_sets {
        if set.dims() != dims {
            return Err(Error::Shape(format!(
                "cannot mix {:?} with {:?} ({})",
                set.dims(),
                dims,
                set.manifest.name
            )));
        }
        samples.extend(set.samples.iter().cloned());
        sources.push(SourceCount {
            name: set.manifest.name.clone(),
            count: set.len(),
        });
    }
    let mut r = rng::rng_from_seed(seed);
    rng::shuffle(&mut samples, &mut r);
    Ok(Dataset::new(
        DatasetManifest {
            name: "mixed".into(),
            count: samples.len(),
            classes: in_set.manifest.classes,
            width: dims.1,
            height: dims.0,
            channels: dims.2,
            seed,
            provenance: Provenance::Mixed,
            sources,
        },
        samples,
    ))
}

const LABELS: &str = "labels.csv";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    filename: String,
    class_label: String,
    distribution_label: Distribution,
}

fn class_text(c: Option<usize>) -> String {
    c.map_or_else(|| "NONE".to_string(), |c| c.to_string())
}

fn parse_class(text: &str) -> Result<Option<usize>> {
    match text.trim() {
        "" | "NONE" => Ok(None),
        t => t
            .parse()
            .map(Some)
            .map_err(|_| Error::Labels(format!("bad class label {t:?}"))),
    }
}

pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = if dataset.manifest.channels == 1 {
        "pgm"
    } else {
        "ppm"
    };
    let labels_path = dir.join(LABELS);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&labels_path)
        .map_err(|e| csv_error(&labels_path, e))?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let filename = format!("{i:06}.{ext}");
        netpbm::write(&s.image, dir.join(&filename))?;
        w.serialize(LabelRow {
            filename,
            class_label: class_text(s.class_label),
            distribution_label: s.distribution,
        })
        .map_err(|e| csv_error(&labels_path, e))?;
    }
    if dataset.is_empty() {
        w.write_record(["filename", "class_label", "distribution_label"])
            .map_err(|e| csv_error(&labels_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))?;
    let manifest_path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&dataset.manifest)?;
    std::fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Labels(format!("{}: {e}", path.display()))
}

fn read_labels(dir: &Path) -> Result<Vec<LabelRow>> {
    let path = dir.join(LABELS);
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(&path, e)))
        .collect()
}

/// Loads a dataset directory. Without `manifest.json` the directory is
/// imported: labels come from `labels.csv` when present, otherwise from
/// numeric class subdirectories (`0/`, `1/`, ...), otherwise every image is
/// an unlabelled out-of-distribution sample. Imported colour images are
/// reduced to luma.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return import_dataset(dir);
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let rows = read_labels(dir)?;
    if rows.len() != manifest.count {
        return Err(Error::Labels(format!(
            "manifest lists {} samples but labels.csv has {} rows",
            manifest.count,
            rows.len()
        )));
    }
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        let path = dir.join(&row.filename);
        if !path.is_file() {
            return Err(Error::Labels(format!(
                "label row references missing file {}",
                row.filename
            )));
        }
        let image = netpbm::read(&path)?;
        if image.dims() != (manifest.height, manifest.width, manifest.channels) {
            return Err(Error::Dataset(format!(
                "{} is {:?}, manifest says {}x{}x{}",
                row.filename,
                image.dims(),
                manifest.height,
                manifest.width,
                manifest.channels
            )));
        }
        samples.push(LabeledSample {
            image,
            class_label: parse_class(&row.class_label)?,
            distribution: row.distribution_label,
        });
    }
    Ok(Dataset { manifest, samples })
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

fn import_dataset(dir: &Path) -> Result<Dataset> {
    let mut entries: Vec<(std::path::PathBuf, Option<usize>, Distribution)> = Vec::new();
    if dir.join(LABELS).is_file() {
        for row in read_labels(dir)? {
            let path = dir.join(&row.filename);
            if !path.is_file() {
                return Err(Error::Labels(format!(
                    "label row references missing file {}",
                    row.filename
                )));
            }
            entries.push((path, parse_class(&row.class_label)?, row.distribution_label));
        }
    } else {
        let all = sorted_entries(dir)?;
        let class_dirs: BTreeMap<usize, _> = all
            .iter()
            .filter(|p| p.is_dir())
            .filter_map(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .and_then(|n| n.parse::<usize>().ok())
                    .map(|c| (c, p.clone()))
            })
            .collect();
        if class_dirs.is_empty() {
            for p in all.into_iter().filter(|p| p.is_file() && is_image(p)) {
                entries.push((p, None, Distribution::Out));
            }
        } else {
            for (class, sub) in class_dirs {
                for p in sorted_entries(&sub)?
                    .into_iter()
                    .filter(|p| p.is_file() && is_image(p))
                {
                    entries.push((p, Some(class), Distribution::In));
                }
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!(
            "no images found in {}",
            dir.display()
        )));
    }
    let mut samples = Vec::with_capacity(entries.len());
    let mut dims = None;
    for (path, class_label, distribution) in entries {
        let image = netpbm::read(&path)?.to_luma();
        match dims {
            None => dims = Some(image.dims()),
            Some(d) if d != image.dims() => {
                return Err(Error::Dataset(format!(
                    "{} is {:?}, earlier images are {:?}",
                    path.display(),
                    image.dims(),
                    d
                )))
            }
            _ => {}
        }
        samples.push(LabeledSample {
            image,
            class_label,
            distribution,
        });
    }
    let (h, w, c) = dims.expect("non-empty");
    let classes = samples
        .iter()
        .filter_map(|s| s.class_label)
        .max()
        .map_or(0, |m| m + 1);
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("imported")
        .to_string();
    Ok(Dataset::new(
        DatasetManifest {
            name,
            count: samples.len(),
            classes,
            width: w,
            height: h,
            channels: c,
            seed: 0,
            provenance: Provenance::Imported,
            sources: Vec::new(),
        },
        samples,
    ))
}
