//! Dataset ingestion: IDX files, PGM directories, manifests, resizing and
//! train/test splits.
//!
//! Pixel bytes are scaled to `[0, 1]` by dividing by the format's maximum
//! value (255 for IDX).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated file ({needed} bytes needed, {actual} present)")]
    Truncated {
        path: PathBuf,
        needed: usize,
        actual: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: invalid PGM: {reason}")]
    BadPgm { path: PathBuf, reason: String },
    #[error("{path}: sample is {actual:?} but the set is {expected:?}")]
    InconsistentDims {
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("{0}: no matching files")]
    NoFiles(PathBuf),
    #[error("{path}:{line}: {reason}")]
    BadManifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("sample set is empty")]
    Empty,
    #[error("sample set has no labels")]
    MissingLabels,
    #[error("class {label} has {size} samples, need more than {needed}")]
    ClassTooSmall {
        label: u32,
        size: usize,
        needed: usize,
    },
    #[error("invalid sample set: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `N` grayscale samples of identical shape with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    samples: Vec<Matrix>,
    labels: Option<Vec<u32>>,
    provenance: Vec<String>,
}

impl SampleSet {
    /// Builds a set from arbitrary real matrices. Shapes must agree and labels,
    /// when given, must cover every sample. Pixel range is not checked here;
    /// image loaders additionally guarantee values in `[0, 1]`.
    pub fn new(samples: Vec<Matrix>, labels: Option<Vec<u32>>) -> Result<Self> {
        let first = samples.first().ok_or(DataError::Empty)?.shape();
        if let Some(bad) = samples.iter().position(|s| s.shape() != first) {
            return Err(DataError::InconsistentDims {
                path: PathBuf::from(format!("<sample {bad}>")),
                expected: first,
                actual: samples[bad].shape(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(DataError::CountMismatch {
                    images: samples.len(),
                    labels: l.len(),
                });
            }
        }
        Ok(Self {
            samples,
            labels,
            provenance: Vec::new(),
        })
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Self {
        self.provenance.push(note.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(p, q)`.
    pub fn dims(&self) -> (usize, usize) {
        self.samples[0].shape()
    }

    pub fn samples(&self) -> &[Matrix] {
        &self.samples
    }

    pub fn sample(&self, n: usize) -> &Matrix {
        &self.samples[n]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// Subset in the given order, labels and provenance carried along.
    pub fn select(&self, indices: &[usize]) -> SampleSet {
        SampleSet {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            provenance: self.provenance.clone(),
        }
    }

    /// Sample indices grouped by label, in file order, classes ascending.
    pub fn class_indices(&self) -> Result<BTreeMap<u32, Vec<usize>>> {
        let labels = self.labels.as_ref().ok_or(DataError::MissingLabels)?;
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        Ok(by_class)
    }

    /// True when every value lies in `[0, 1]`.
    pub fn in_unit_range(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.as_slice().iter().all(|v| (0.0..=1.0).contains(v)))
    }
}

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            needed: at + 4,
            actual: bytes.len(),
        })
}

/// Reads IDX image data (and optionally labels).
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<SampleSet> {
    let bytes = fs::read(images_path).map_err(io_err(images_path))?;
    let magic = read_u32_be(&bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = read_u32_be(&bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&bytes, 12, images_path)? as usize;
    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if bytes.len() < needed {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            needed,
            actual: bytes.len(),
        });
    }
    if count == 0 {
        return Err(DataError::Empty);
    }
    let samples: Vec<Matrix> = bytes[16..needed]
        .chunks_exact(pixels)
        .map(|chunk| {
            let data = chunk.iter().map(|&b| f64::from(b) / 255.0).collect();
            Matrix::new(rows, cols, data).expect("finite pixel values")
        })
        .collect();

    let labels = match labels_path {
        None => None,
        Some(path) => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            let magic = read_u32_be(&bytes, 0, path)?;
            if magic != IDX_LABELS_MAGIC {
                return Err(DataError::BadMagic {
                    path: path.to_path_buf(),
                    found: magic,
                    expected: IDX_LABELS_MAGIC,
                });
            }
            let n = read_u32_be(&bytes, 4, path)? as usize;
            if bytes.len() < 8 + n {
                return Err(DataError::Truncated {
                    path: path.to_path_buf(),
                    needed: 8 + n,
                    actual: bytes.len(),
                });
            }
            if n != count {
                return Err(DataError::CountMismatch {
                    images: count,
                    labels: n,
                });
            }
            Some(bytes[8..8 + n].iter().map(|&b| u32::from(b)).collect())
        }
    };

    let mut set = SampleSet::new(samples, labels)?
        .with_provenance(format!("idx:{}", images_path.display()))
        .with_provenance("pixels scaled by 1/255");
    if let Some(p) = labels_path {
        set = set.with_provenance(format!("idx-labels:{}", p.display()));
    }
    Ok(set)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an IDX image file (and label file when labels are present and a path is given).
/// Values are quantized to bytes with `round(255·v)`.
pub fn save_idx(set: &SampleSet, images_path: &Path, labels_path: Option<&Path>) -> Result<()> {
    let (p, q) = set.dims();
    let mut out = Vec::with_capacity(16 + set.len() * p * q);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.len() as u32).to_be_bytes());
    out.extend_from_slice(&(p as u32).to_be_bytes());
    out.extend_from_slice(&(q as u32).to_be_bytes());
    for s in set.samples() {
        out.extend(s.as_slice().iter().map(|&v| quantize(v)));
    }
    fs::write(images_path, out).map_err(io_err(images_path))?;
    if let (Some(path), Some(labels)) = (labels_path, set.labels()) {
        let mut out = Vec::with_capacity(8 + labels.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend(labels.iter().map(|&l| l as u8));
        fs::write(path, out).map_err(io_err(path))?;
    }
    Ok(())
}

/// Parses a binary (P5) PGM with maxval up to 255.
pub fn load_pgm(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |reason: &str| DataError::BadPgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("only binary P5 images are supported"));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad("non-numeric header field"))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            needed: pos + n,
            actual: bytes.len(),
        });
    }
    let max = maxval as f64;
    let data = bytes[pos..pos + n]
        .iter()
        .map(|&b| (f64::from(b) / max).min(1.0))
        .collect();
    Matrix::new(height, width, data).map_err(|e| bad(&e.to_string()))
}

/// Writes a P5 PGM, quantizing `[0, 1]` values to bytes.
pub fn save_pgm(path: &Path, image: &Matrix) -> Result<()> {
    save_pgm_annotated(path, image, &[])
}

/// Like [`save_pgm`], with `# ` comment lines placed after the magic number.
pub fn save_pgm_annotated(path: &Path, image: &Matrix, comments: &[String]) -> Result<()> {
    let mut header = String::from("P5\n");
    for line in comments {
        header.push_str("# ");
        header.push_str(&line.replace('\n', " "));
        header.push('\n');
    }
    header.push_str(&format!("{} {}\n255\n", image.cols(), image.rows()));
    let mut out = header.into_bytes();
    out.extend(image.as_slice().iter().map(|&v| quantize(v)));
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

/// Minimal glob supporting `*` and `?`.
fn glob_match(pattern: &[u8], name: &[u8]) -> bool {
    match (pattern.first(), name.first()) {
        (None, None) => true,
        (Some(b'*'), _) => {
            glob_match(&pattern[1..], name) || (!name.is_empty() && glob_match(pattern, &name[1..]))
        }
        (Some(b'?'), Some(_)) => glob_match(&pattern[1..], &name[1..]),
        (Some(a), Some(b)) if a == b => glob_match(&pattern[1..], &name[1..]),
        _ => false,
    }
}

fn list_files(dir: &Path, pattern: &str, recurse: bool, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            if recurse {
                list_files(&path, pattern, false, out)?;
            }
        } else if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if glob_match(pattern.as_bytes(), name.as_bytes()) {
                out.push(path);
            }
        }
    }
    Ok(())
}

fn assemble(paths: &[PathBuf], resize_to: Option<(usize, usize)>) -> Result<Vec<Matrix>> {
    let mut samples = Vec::with_capacity(paths.len());
    let mut dims = None;
    for path in paths {
        let mut img = load_pgm(path)?;
        if let Some((p, q)) = resize_to {
            img = resize_matrix(&img, p, q);
        }
        match dims {
            None => dims = Some(img.shape()),
            Some(d) if d != img.shape() => {
                return Err(DataError::InconsistentDims {
                    path: path.clone(),
                    expected: d,
                    actual: img.shape(),
                })
            }
            _ => {}
        }
        samples.push(img);
    }
    Ok(samples)
}

/// Loads every file under `root` matching `pattern` (e.g. `*.pgm`), sorted by path.
///
/// With `label_from_subdir`, files are read from the immediate subdirectories and
/// each subdirectory (in sorted order) becomes label 0, 1, ….
pub fn load_image_dir(
    root: &Path,
    pattern: &str,
    label_from_subdir: bool,
    resize_to: Option<(usize, usize)>,
) -> Result<SampleSet> {
    let mut paths = Vec::new();
    let mut labels = None;
    if label_from_subdir {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(io_err(root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        let mut l = Vec::new();
        for (label, dir) in subdirs.iter().enumerate() {
            let before = paths.len();
            list_files(dir, pattern, false, &mut paths)?;
            l.extend(std::iter::repeat_n(label as u32, paths.len() - before));
        }
        labels = Some(l);
    } else {
        list_files(root, pattern, false, &mut paths)?;
    }
    if paths.is_empty() {
        return Err(DataError::NoFiles(root.to_path_buf()));
    }
    let samples = assemble(&paths, resize_to)?;
    let mut set = SampleSet::new(samples, labels)?
        .with_provenance(format!("image-dir:{}/{}", root.display(), pattern))
        .with_provenance("pixels scaled by 1/maxval");
    if let Some((p, q)) = resize_to {
        set = set.with_provenance(format!("bilinear resize to {p}x{q}"));
    }
    Ok(set)
}

/// Loads a plain-text manifest of `path,label` lines; relative paths resolve
/// against the manifest's directory. Blank lines and `#` comments are skipped.
pub fn load_manifest(manifest: &Path, resize_to: Option<(usize, usize)>) -> Result<SampleSet> {
    let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut paths = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| DataError::BadManifest {
            path: manifest.to_path_buf(),
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let (path, label) = line
            .rsplit_once(',')
            .ok_or_else(|| bad("expected path,label"))?;
        let label: u32 = label
            .trim()
            .parse()
            .map_err(|_| bad("label is not a non-negative integer"))?;
        let path = Path::new(path.trim());
        paths.push(if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        });
        labels.push(label);
    }
    if paths.is_empty() {
        return Err(DataError::NoFiles(manifest.to_path_buf()));
    }
    let samples = assemble(&paths, resize_to)?;
    Ok(SampleSet::new(samples, Some(labels))?
        .with_provenance(format!("manifest:{}", manifest.display())))
}

/// Bilinear interpolation with corner-aligned sampling.
pub fn resize_matrix(img: &Matrix, new_p: usize, new_q: usize) -> Matrix {
    let (p, q) = img.shape();
    if (p, q) == (new_p, new_q) {
        return img.clone();
    }
    let coord = |i: usize, from: usize, to: usize| -> f64 {
        if to <= 1 || from <= 1 {
            0.0
        } else {
            i as f64 * (from - 1) as f64 / (to - 1) as f64
        }
    };
    Matrix::from_fn(new_p, new_q, |i, j| {
        let y = coord(i, p, new_p);
        let x = coord(j, q, new_q);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(p - 1), (x0 + 1).min(q - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = img[(y0, x0)] * (1.0 - fx) + img[(y0, x1)] * fx;
        let bottom = img[(y1, x0)] * (1.0 - fx) + img[(y1, x1)] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

pub fn resize(set: &SampleSet, new_p: usize, new_q: usize) -> SampleSet {
    SampleSet {
        samples: set
            .samples
            .iter()
            .map(|s| resize_matrix(s, new_p, new_q))
            .collect(),
        labels: set.labels.clone(),
        provenance: set
            .provenance
            .iter()
            .cloned()
            .chain(std::iter::once(format!(
                "bilinear resize to {new_p}x{new_q}"
            )))
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Random `train_per_class` items per class, drawn under the seed.
    PerClassCount,
    /// The first `train_per_class` items per class in file order.
    FixedIndex,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train_per_class: usize,
    /// Caps the test items per class; `None` sends the whole remainder to test.
    pub test_per_class: Option<usize>,
    pub seed: u64,
}

/// Index-level split; returns `(train, test)` indices in ascending order.
pub fn split_indices(set: &SampleSet, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if spec.train_per_class == 0 {
        return Err(DataError::Invalid(
            "train-per-class must be at least 1".into(),
        ));
    }
    let classes = set.class_indices()?;
    let mut rng = rng::seeded(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (&label, members) in &classes {
        if members.len() <= spec.train_per_class {
            return Err(DataError::ClassTooSmall {
                label,
                size: members.len(),
                needed: spec.train_per_class,
            });
        }
        let mut order = members.clone();
        if spec.mode == SplitMode::PerClassCount {
            order.shuffle(&mut rng);
        }
        let (tr, rest) = order.split_at(spec.train_per_class);
        let take = spec.test_per_class.unwrap_or(rest.len()).min(rest.len());
        train.extend_from_slice(tr);
        test.extend_from_slice(&rest[..take]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(set: &SampleSet, spec: &SplitSpec) -> Result<(SampleSet, SampleSet)> {
    let (train, test) = split_indices(set, spec)?;
    Ok((set.select(&train), set.select(&test)))
}
