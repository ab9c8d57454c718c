//! Corpus layout, label map, tensor assembly, train/test split and the
//! synthetic gesture generator.
//!
//! On disk a corpus is `root/<label>/<index>.lmk`, one LMK1 file per video,
//! with the index zero-padded to two digits.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::landmarks::{
    decode_sequence, encode_sequence, FrameFeatures, GestureSequence, SequenceDecodeError,
};

/// The 45 signs of the reference corpus: 26 letters, then 19 words and
/// phrases.
pub const STANDARD_LABELS: [&str; 45] = [
    "A",
    "B",
    "C",
    "D",
    "E",
    "F",
    "G",
    "H",
    "I",
    "J",
    "K",
    "L",
    "M",
    "N",
    "O",
    "P",
    "Q",
    "R",
    "S",
    "T",
    "U",
    "V",
    "W",
    "X",
    "Y",
    "Z",
    "Namaste",
    "Hello",
    "Bye-Bye",
    "Do not understand",
    "Good Afternoon",
    "Good Morning",
    "How are you?",
    "I am fine",
    "My name is",
    "I/Me",
    "India/Indian",
    "Sign",
    "Language",
    "Understand",
    "No",
    "Yes",
    "Sorry",
    "Thank you",
    "Welcome",
];

pub const VIDEOS_PER_LABEL: usize = 30;
pub const SEQUENCE_EXTENSION: &str = "lmk";
pub const LABELS_FILE: &str = "labels.json";

/// Half-width of the uniform per-frame step of a synthetic prototype walk.
pub const SYNTH_STEP: f32 = 0.1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("label map is empty")]
    EmptyLabels,
    #[error("label ids are not exactly 0..{count}: {detail}")]
    BadLabelIds { count: usize, detail: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("class id {id} out of range for {classes} classes")]
    ClassOutOfRange { id: usize, classes: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: PathBuf,
        source: SequenceDecodeError,
    },
    #[error("{path}: file name is not a numeric video index")]
    BadFileName { path: PathBuf },
    #[error("{path}: {found} frames, expected {expected}")]
    FrameCount {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: feature dim {found}, expected {expected}")]
    FeatureDim {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("malformed label map: {0}")]
    LabelJson(String),
    #[error("invalid tensor dataset: {0}")]
    Shape(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid synthesis parameters: {0}")]
    Synth(String),
}

/// Bijection label string ↔ class id, ids `0..C` in insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

impl LabelMap {
    pub fn standard() -> Self {
        build_label_map(STANDARD_LABELS.iter().copied()).expect("standard labels are unique")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// JSON object `{label: id}` with keys in id order.
    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), serde_json::Value::from(i)))
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, DatasetError> {
        let obj = value
            .as_object()
            .ok_or_else(|| DatasetError::LabelJson("expected a JSON object".into()))?;
        let mut slots: Vec<Option<String>> = vec![None; obj.len()];
        for (label, id) in obj {
            let id = id.as_u64().ok_or_else(|| {
                DatasetError::LabelJson(format!("id of {label:?} is not an integer"))
            })? as usize;
            let slot = slots.get_mut(id).ok_or_else(|| DatasetError::BadLabelIds {
                count: obj.len(),
                detail: format!("id {id} of {label:?} out of range"),
            })?;
            if slot.is_some() {
                return Err(DatasetError::BadLabelIds {
                    count: obj.len(),
                    detail: format!("id {id} assigned twice"),
                });
            }
            *slot = Some(label.clone());
        }
        // with no duplicate ids and every id < len, every slot is filled
        build_label_map(slots.into_iter().map(Option::unwrap))
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("label map serializes");
        fs::write(path, text + "\n").map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| DatasetError::LabelJson(e.to_string()))?;
        Self::from_json(&value)
    }
}

/// Assigns id `i` to the `i`-th label.
pub fn build_label_map<I, S>(labels: I) -> Result<LabelMap, DatasetError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut map = LabelMap {
        labels: Vec::new(),
        ids: HashMap::new(),
    };
    for label in labels {
        let label = label.into();
        if map.ids.contains_key(&label) {
            return Err(DatasetError::DuplicateLabel(label));
        }
        map.ids.insert(label.clone(), map.labels.len());
        map.labels.push(label);
    }
    if map.labels.is_empty() {
        return Err(DatasetError::EmptyLabels);
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub label: String,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// One entry per label directory, sorted by directory name.
    pub entries: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct IndexStats {
    pub labels: usize,
    pub files: usize,
    pub per_label: Vec<(String, usize)>,
    /// Labels holding fewer videos than expected.
    pub short_labels: Vec<String>,
}

impl DatasetIndex {
    pub fn file_count(&self) -> usize {
        self.entries.iter().map(|e| e.files.len()).sum()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn stats(&self) -> IndexStats {
        self.stats_expecting(VIDEOS_PER_LABEL)
    }

    pub fn stats_expecting(&self, videos_per_label: usize) -> IndexStats {
        IndexStats {
            labels: self.entries.len(),
            files: self.file_count(),
            per_label: self
                .entries
                .iter()
                .map(|e| (e.label.clone(), e.files.len()))
                .collect(),
            short_labels: self
                .entries
                .iter()
                .filter(|e| e.files.len() < videos_per_label)
                .map(|e| e.label.clone())
                .collect(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_sequence(path: &Path) -> Result<GestureSequence, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_sequence(&bytes).map_err(|source| DatasetError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Indexes `root/<label>/<index>.lmk`, validating that every file decodes.
pub fn scan_dataset(root: &Path) -> Result<DatasetIndex, DatasetError> {
    let mut label_dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if path.is_dir() {
            label_dirs.push(path);
        }
    }
    label_dirs.sort();

    let mut entries = Vec::with_capacity(label_dirs.len());
    for dir in label_dirs {
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(SEQUENCE_EXTENSION) {
                continue;
            }
            let index = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| DatasetError::BadFileName { path: path.clone() })?;
            files.push((index, path));
        }
        files.sort();
        let files: Vec<PathBuf> = files.into_iter().map(|(_, p)| p).collect();
        files
            .par_iter()
            .try_for_each(|p| read_sequence(p).map(drop))?;
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        entries.push(LabelEntry { label, files });
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
    })
}

/// Returns `e_id` of length `classes`.
pub fn one_hot(id: usize, classes: usize) -> Result<Vec<f64>, DatasetError> {
    if id >= classes {
        return Err(DatasetError::ClassOutOfRange { id, classes });
    }
    let mut v = vec![0.0; classes];
    v[id] = 1.0;
    Ok(v)
}

/// `N × T × D` features plus `N × C` one-hot targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDataset {
    samples: usize,
    frames: usize,
    dims: usize,
    classes: usize,
    x: Vec<f32>,
    y: Vec<f64>,
}

impl TensorDataset {
    pub fn new(
        (samples, frames, dims, classes): (usize, usize, usize, usize),
        x: Vec<f32>,
        y: Vec<f64>,
    ) -> Result<Self, DatasetError> {
        if x.len() != samples * frames * dims {
            return Err(DatasetError::Shape(format!(
                "x has {} values, expected {samples}×{frames}×{dims}",
                x.len()
            )));
        }
        if y.len() != samples * classes {
            return Err(DatasetError::Shape(format!(
                "y has {} values, expected {samples}×{classes}",
                y.len()
            )));
        }
        if classes > 0 {
            for (i, row) in y.chunks_exact(classes).enumerate() {
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || zeros != classes - 1 {
                    return Err(DatasetError::Shape(format!("y row {i} is not one-hot")));
                }
            }
        }
        Ok(Self {
            samples,
            frames,
            dims,
            classes,
            x,
            y,
        })
    }

    /// Builds targets from class ids.
    pub fn from_class_ids(
        (frames, dims, classes): (usize, usize, usize),
        x: Vec<f32>,
        ids: &[usize],
    ) -> Result<Self, DatasetError> {
        let mut y = Vec::with_capacity(ids.len() * classes);
        for &id in ids {
            y.extend(one_hot(id, classes)?);
        }
        Self::new((ids.len(), frames, dims, classes), x, y)
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn x(&self) -> &[f32] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// `T × D` features of sample `i`.
    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.frames * self.dims;
        &self.x[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.y[i * self.classes..(i + 1) * self.classes]
    }

    pub fn class_id(&self, i: usize) -> usize {
        self.target(i).iter().position(|&v| v == 1.0).unwrap()
    }

    /// Copies the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> TensorDataset {
        let mut x = Vec::with_capacity(rows.len() * self.frames * self.dims);
        let mut y = Vec::with_capacity(rows.len() * self.classes);
        for &r in rows {
            x.extend_from_slice(self.sample(r));
            y.extend_from_slice(self.target(r));
        }
        TensorDataset {
            samples: rows.len(),
            frames: self.frames,
            dims: self.dims,
            classes: self.classes,
            x,
            y,
        }
    }
}

/// Stacks every indexed file in (label id, video index) order.
pub fn load_tensors(
    index: &DatasetIndex,
    labels: &LabelMap,
    frames: usize,
) -> Result<TensorDataset, DatasetError> {
    let mut items: Vec<(usize, &Path)> = Vec::with_capacity(index.file_count());
    for entry in &index.entries {
        let id = labels
            .id(&entry.label)
            .ok_or_else(|| DatasetError::UnknownLabel(entry.label.clone()))?;
        items.extend(entry.files.iter().map(|f| (id, f.as_path())));
    }
    // stable: video order within a label is kept
    items.sort_by_key(|&(id, _)| id);

    let sequences = items
        .par_iter()
        .map(|&(_, path)| read_sequence(path).map(|s| (path, s)))
        .collect::<Result<Vec<_>, _>>()?;

    let dims = sequences.first().map_or(0, |(_, s)| s.dim());
    let mut x = Vec::with_capacity(items.len() * frames * dims);
    for (path, seq) in &sequences {
        if seq.len() != frames {
            return Err(DatasetError::FrameCount {
                path: path.to_path_buf(),
                expected: frames,
                found: seq.len(),
            });
        }
        if seq.dim() != dims {
            return Err(DatasetError::FeatureDim {
                path: path.to_path_buf(),
                expected: dims,
                found: seq.dim(),
            });
        }
        for f in seq.frames() {
            x.extend_from_slice(f.values());
        }
    }
    let ids: Vec<usize> = items.iter().map(|&(id, _)| id).collect();
    TensorDataset::from_class_ids((frames, dims, labels.len()), x, &ids)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.05,
            seed: 0,
        }
    }
}

/// `ceil(test_fraction · n)`, tolerant of representation error in the
/// product (0.05 · 20 must give 1, not 2).
pub fn test_size(n: usize, test_fraction: f64) -> usize {
    let raw = test_fraction * n as f64;
    let nearest = raw.round();
    if (raw - nearest).abs() <= 1e-9 * raw.max(1.0) {
        nearest as usize
    } else {
        raw.ceil() as usize
    }
}

/// Seeded unstratified split. The first `test_size` rows of a uniform
/// permutation form the test set.
pub fn train_test_split(
    data: &TensorDataset,
    cfg: SplitConfig,
) -> Result<(TensorDataset, TensorDataset), DatasetError> {
    let (train, test) = split_indices(data.len(), cfg)?;
    Ok((data.select(&train), data.select(&test)))
}

/// Row indices `(train, test)` of [`train_test_split`].
pub fn split_indices(n: usize, cfg: SplitConfig) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(DatasetError::Split(format!(
            "test fraction {} not in (0, 1)",
            cfg.test_fraction
        )));
    }
    let k = test_size(n, cfg.test_fraction);
    if k == 0 || k >= n {
        return Err(DatasetError::Split(format!(
            "{k} test rows out of {n} leaves an empty side"
        )));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let train = rows.split_off(k);
    Ok((train, rows))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub videos: usize,
    pub frames: usize,
    pub dims: usize,
    pub noise_sd: f32,
    pub seed: u64,
}

/// Random-walk prototype per class plus Gaussian jitter per video, all in
/// `[0, 1]`. Samples are ordered class-major.
pub fn synth_gestures(cfg: SynthConfig) -> Result<TensorDataset, DatasetError> {
    let SynthConfig {
        classes,
        videos,
        frames,
        dims,
        noise_sd,
        seed,
    } = cfg;
    if classes == 0 || videos == 0 || frames == 0 || dims == 0 {
        return Err(DatasetError::Synth("counts must be at least 1".into()));
    }
    let noise = Normal::new(0.0f32, noise_sd)
        .map_err(|_| DatasetError::Synth(format!("bad noise sd {noise_sd}")))?;

    let per_video = frames * dims;
    let mut x = Vec::with_capacity(classes * videos * per_video);
    let mut ids = Vec::with_capacity(classes * videos);
    for class in 0..classes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2 * class as u64);
        let proto = prototype_walk(&mut rng, frames, dims);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2 * class as u64 + 1);
        for _ in 0..videos {
            if noise_sd == 0.0 {
                x.extend_from_slice(&proto);
            } else {
                x.extend(
                    proto
                        .iter()
                        .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0)),
                );
            }
            ids.push(class);
        }
    }
    TensorDataset::from_class_ids((frames, dims, classes), x, &ids)
}

fn prototype_walk(rng: &mut ChaCha8Rng, frames: usize, dims: usize) -> Vec<f32> {
    let mut walk = Vec::with_capacity(frames * dims);
    let mut pos: Vec<f32> = (0..dims).map(|_| rng.random::<f32>()).collect();
    for t in 0..frames {
        if t > 0 {
            for p in &mut pos {
                *p = (*p + rng.random_range(-SYNTH_STEP..=SYNTH_STEP)).clamp(0.0, 1.0);
            }
        }
        walk.extend_from_slice(&pos);
    }
    walk
}

/// Writes a tensor dataset as a corpus directory plus `labels.json`.
pub fn write_corpus(
    root: &Path,
    data: &TensorDataset,
    labels: &LabelMap,
) -> Result<(), DatasetError> {
    if labels.len() != data.classes() {
        return Err(DatasetError::Shape(format!(
            "{} labels for {} classes",
            labels.len(),
            data.classes()
        )));
    }
    fs::create_dir_all(root).map_err(io_err(root))?;
    labels.save(&root.join(LABELS_FILE))?;
    let mut next_index = vec![0usize; data.classes()];
    for i in 0..data.len() {
        let id = data.class_id(i);
        let dir = root.join(labels.label(id).unwrap());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let frames = data
            .sample(i)
            .chunks_exact(data.dims())
            .map(|f| FrameFeatures::with_dim(f.to_vec(), data.dims()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DatasetError::Shape(e.to_string()))?;
        let seq = GestureSequence::with_dim(data.dims(), frames, None)
            .map_err(|e| DatasetError::Shape(e.to_string()))?;
        let path = dir.join(format!("{:02}.{SEQUENCE_EXTENSION}", next_index[id]));
        next_index[id] += 1;
        fs::write(&path, encode_sequence(&seq)).map_err(io_err(&path))?;
    }
    Ok(())
}
