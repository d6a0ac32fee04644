//! Dataset discovery, class statistics, stratified splitting and
//! pixel-intensity histograms.
//!
//! Images are expected in a `<root>/<class>/<files>` layout where the class
//! directory name starts (case-insensitively) with `health` or `unhealth`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUPPORTED_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Healthy,
    Unhealthy,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Healthy, ClassLabel::Unhealthy];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Healthy => "healthy",
            ClassLabel::Unhealthy => "unhealthy",
        }
    }

    /// Maps a class directory name onto a label, `None` when it matches neither class.
    pub fn from_dir_name(name: &str) -> Option<Self> {
        let lower = name.to_lowercase();
        if lower.starts_with("unhealth") {
            Some(ClassLabel::Unhealthy)
        } else if lower.starts_with("health") {
            Some(ClassLabel::Healthy)
        } else {
            None
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "healthy" | "0" => Ok(ClassLabel::Healthy),
            "unhealthy" | "1" => Ok(ClassLabel::Unhealthy),
            other => Err(Error::Input(format!("unknown class label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "train" => Ok(SplitTag::Train),
            "val" | "validation" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::Input(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub label: ClassLabel,
    pub split: Option<SplitTag>,
}

/// Ordered inventory of labeled images. Records are kept sorted by path and
/// the per-class counts always agree with the records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<ImageRecord>,
    counts: BTreeMap<ClassLabel, usize>,
}

impl DatasetManifest {
    pub fn new(mut records: Vec<ImageRecord>) -> Self {
        records.sort_by(|a, b| a.path.cmp(&b.path));
        let counts = tally(&records);
        Self { records, counts }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn counts(&self) -> &BTreeMap<ClassLabel, usize> {
        &self.counts
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_label(&self, label: ClassLabel) -> Vec<ImageRecord> {
        self.records.iter().filter(|r| r.label == label).cloned().collect()
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.records.iter().map(|r| r.path.clone()).collect()
    }

    /// Records whose split tag equals `split`.
    pub fn filter_split(&self, split: SplitTag) -> DatasetManifest {
        DatasetManifest::new(
            self.records
                .iter()
                .filter(|r| r.split == Some(split))
                .cloned()
                .collect(),
        )
    }

    /// Writes the manifest as CSV with header `path,label,split`.
    pub fn write_csv(&self, out: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["path", "label", "split"])?;
        for r in &self.records {
            w.write_record([
                r.path.to_string_lossy().as_ref(),
                r.label.as_str(),
                r.split.map(SplitTag::as_str).unwrap_or(""),
            ])?;
        }
        w.flush().map_err(|e| Error::io(out, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "expected header `path,label,split`".into(),
            });
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let split = match &row[2] {
                "" => None,
                s => Some(s.parse()?),
            };
            records.push(ImageRecord {
                path: PathBuf::from(&row[0]),
                label: row[1].parse()?,
                split,
            });
        }
        Ok(Self::new(records))
    }
}

fn tally(records: &[ImageRecord]) -> BTreeMap<ClassLabel, usize> {
    let mut counts: BTreeMap<ClassLabel, usize> = ClassLabel::ALL.iter().map(|&c| (c, 0)).collect();
    for r in records {
        *counts.entry(r.label).or_default() += 1;
    }
    counts
}

pub fn has_supported_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| SUPPORTED_EXTENSIONS.contains(&e.to_lowercase().as_str()))
        .unwrap_or(false)
}

/// A non-fatal condition encountered while scanning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanWarning {
    UnknownDirectory(PathBuf),
    UnsupportedFile(PathBuf),
}

/// Scans `root` and returns the manifest together with every skipped entry.
pub fn scan_dataset_with_warnings(root: &Path) -> Result<(DatasetManifest, Vec<ScanWarning>)> {
    if !root.is_dir() {
        return Err(Error::Input(format!(
            "dataset root {} does not exist or is not a directory",
            root.display()
        )));
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for entry in entries {
        if !entry.is_dir() {
            continue;
        }
        let name = entry.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(label) = ClassLabel::from_dir_name(name) else {
            log::warn!("skipping unrecognized directory {}", entry.display());
            warnings.push(ScanWarning::UnknownDirectory(entry));
            continue;
        };
        for file in walkdir::WalkDir::new(&entry).sort_by_file_name() {
            let file = file.map_err(|e| Error::Input(e.to_string()))?;
            if !file.file_type().is_file() {
                continue;
            }
            let path = file.into_path();
            if has_supported_extension(&path) {
                records.push(ImageRecord { path, label, split: None });
            } else {
                warnings.push(ScanWarning::UnsupportedFile(path));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok((DatasetManifest::new(records), warnings))
}

pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    scan_dataset_with_warnings(root).map(|(m, _)| m)
}

/// Lists every supported image under `root` (recursively), sorted by path.
pub fn list_images(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.exists() {
        return Err(Error::Input(format!("{} does not exist", root.display())));
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Input(e.to_string()))?;
        if entry.file_type().is_file() && has_supported_extension(entry.path()) {
            out.push(entry.into_path());
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(out)
}

pub fn class_distribution(manifest: &DatasetManifest) -> BTreeMap<ClassLabel, usize> {
    ClassLabel::ALL.iter().map(|&c| (c, manifest.count(c))).collect()
}

/// How fractional per-class split sizes are turned into integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRounding {
    /// Floor for train and val, remainder to test.
    Floor,
    /// Floor everything, then hand leftover samples to the largest fractional
    /// parts (ties go to the earlier split).
    #[default]
    LargestRemainder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
    #[serde(default)]
    pub rounding: SplitRounding,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.7, 0.2, 0.1],
            seed: 42,
            rounding: SplitRounding::default(),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.fractions.iter().enumerate() {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::config(
                    format!("split.fractions[{i}]"),
                    format!("fraction {f} is outside [0, 1]"),
                ));
            }
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split.fractions",
                format!("fractions sum to {sum}, expected 1"),
            ));
        }
        Ok(())
    }

    /// Split sizes for a class with `n` members.
    pub fn class_sizes(&self, n: usize) -> [usize; 3] {
        let exact = self.fractions.map(|f| f * n as f64);
        match self.rounding {
            SplitRounding::Floor => {
                let train = (exact[0].floor() as usize).min(n);
                let val = (exact[1].floor() as usize).min(n - train);
                [train, val, n - train - val]
            }
            SplitRounding::LargestRemainder => {
                let mut sizes = exact.map(|x| x.floor() as usize);
                let assigned: usize = sizes.iter().sum();
                let mut order = [0usize, 1, 2];
                // stable sort keeps train < val < test on equal remainders
                order.sort_by(|&a, &b| {
                    let ra = exact[a] - exact[a].floor();
                    let rb = exact[b] - exact[b].floor();
                    rb.total_cmp(&ra)
                });
                for &i in order.iter().take(n.saturating_sub(assigned)) {
                    sizes[i] += 1;
                }
                sizes
            }
        }
    }
}

/// Stratified deterministic split. Within each class the records are shuffled
/// with a RNG derived from `(spec.seed, class)` and cut according to
/// [`SplitSpec::class_sizes`]. Returned manifests carry their split tag.
pub fn split_dataset(
    manifest: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    spec.validate()?;
    if manifest.is_empty() {
        return Err(Error::Input("cannot split an empty manifest".into()));
    }
    let mut parts: [Vec<ImageRecord>; 3] = Default::default();
    let tags = [SplitTag::Train, SplitTag::Val, SplitTag::Test];
    for (class_idx, label) in ClassLabel::ALL.iter().enumerate() {
        let mut members = manifest.with_label(*label);
        let n = members.len();
        if n == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(class_idx as u64 + 1);
        members.shuffle(&mut rng);
        let sizes = spec.class_sizes(n);
        for (i, size) in sizes.iter().enumerate() {
            if *size == 0 && spec.fractions[i] > 0.0 && n >= 3 {
                log::warn!("{} split is empty for class {label} (n = {n})", tags[i].as_str());
            }
        }
        let mut iter = members.into_iter();
        for (i, size) in sizes.iter().enumerate() {
            for mut rec in iter.by_ref().take(*size) {
                rec.split = Some(tags[i]);
                parts[i].push(rec);
            }
        }
    }
    let [train, val, test] = parts;
    Ok((
        DatasetManifest::new(train),
        DatasetManifest::new(val),
        DatasetManifest::new(test),
    ))
}

/// Returns a copy of `manifest` where every record carries its split tag.
pub fn assign_splits(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<DatasetManifest> {
    let (a, b, c) = split_dataset(manifest, spec)?;
    let mut records = a.records;
    records.extend(b.records);
    records.extend(c.records);
    Ok(DatasetManifest::new(records))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntensityHistogram {
    pub bins: Vec<u64>,
    pub class_label: ClassLabel,
    pub n_images: usize,
}

impl IntensityHistogram {
    pub fn empty(class_label: ClassLabel) -> Self {
        Self {
            bins: vec![0; 256],
            class_label,
            n_images: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Writes `value,count` rows, one per grey level.
    pub fn write_csv(&self, out: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["value", "count"])?;
        for (v, c) in self.bins.iter().enumerate() {
            w.write_record([v.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(out, e))?;
        Ok(())
    }
}

/// Luma of an RGB pixel, rounded to the nearest grey level.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

fn grey_levels(path: &Path) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma(p[0], p[1], p[2]))
            .collect(),
    })
}

/// Tallies grey levels over all `records`. Files that fail to decode are
/// reported in the second element; the call only fails when none succeed.
pub fn pixel_intensity_histogram(
    records: &[ImageRecord],
) -> Result<(IntensityHistogram, Vec<(PathBuf, String)>)> {
    let Some(first) = records.first() else {
        return Err(Error::Input("no records to histogram".into()));
    };
    let label = first.label;
    if records.iter().any(|r| r.label != label) {
        return Err(Error::Input("histogram records must share one class label".into()));
    }
    let per_file: Vec<_> = records.par_iter().map(|r| (r, grey_levels(&r.path))).collect();
    let mut hist = IntensityHistogram::empty(label);
    let mut failures = Vec::new();
    for (rec, levels) in per_file {
        match levels {
            Ok(levels) => {
                hist.n_images += 1;
                for v in levels {
                    hist.bins[v as usize] += 1;
                }
            }
            Err(e) => failures.push((rec.path.clone(), e.to_string())),
        }
    }
    if hist.n_images == 0 {
        return Err(Error::Input(format!(
            "none of the {} images could be read",
            records.len()
        )));
    }
    Ok((hist, failures))
}
