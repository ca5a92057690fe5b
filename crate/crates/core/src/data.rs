//! Labeled datasets, binary parsers and the class-incremental task stream.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, ParseError, Result};
use crate::math::{Fnv, Matrix};
use crate::rng::Rng;
use crate::NUM_CLASSES;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 1024;
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Features in `[0, 1]` with class labels. `origin[i]` is the row index of
/// sample `i` in the dataset it was carved from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    x: Matrix,
    y: Vec<usize>,
    origin: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: Matrix, y: Vec<usize>) -> Result<Self> {
        let origin = (0..y.len()).collect();
        LabeledSet::with_origin(x, y, origin)
    }

    pub fn with_origin(x: Matrix, y: Vec<usize>, origin: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() || origin.len() != y.len() {
            return Err(CoreError::contract(format!(
                "{} feature rows, {} labels, {} origin indices",
                x.rows(),
                y.len(),
                origin.len()
            )));
        }
        if let Some(&label) = y.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(CoreError::LabelOutOfRange {
                label,
                classes: NUM_CLASSES,
            });
        }
        if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::contract(format!("feature value {v} outside [0, 1]")));
        }
        Ok(LabeledSet { x, y, origin })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledSet {
            x: Matrix::zeros(0, dim),
            y: Vec::new(),
            origin: Vec::new(),
        }
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows at `indices`, keeping their origin indices.
    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            origin: indices.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    /// Rows whose label is in `classes`, in their original order.
    pub fn filter_classes(&self, classes: &[usize]) -> LabeledSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.y[i])).collect();
        self.subset(&idx)
    }

    pub fn concat(parts: &[&LabeledSet]) -> Result<LabeledSet> {
        let dim = parts.first().map_or(0, |p| p.dim());
        let xs: Vec<&Matrix> = parts.iter().map(|p| &p.x).collect();
        Ok(LabeledSet {
            x: Matrix::vstack(&xs).map_err(|_| CoreError::contract(format!("concat: mixed feature dims, expected {dim}")))?,
            y: parts.iter().flat_map(|p| p.y.iter().copied()).collect(),
            origin: parts.iter().flat_map(|p| p.origin.iter().copied()).collect(),
        })
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.y {
            counts[l] += 1;
        }
        counts
    }

    /// Keeps at most `n` samples, chosen by a seeded shuffle.
    pub fn take_random(&self, n: usize, rng: &mut Rng) -> LabeledSet {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx = rng.permutation(self.len());
        idx.truncate(n);
        idx.sort_unstable();
        self.subset(&idx)
    }

    pub(crate) fn hash_into(&self, h: &mut Fnv) {
        h.write_u64(self.len() as u64);
        for (&o, &y) in self.origin.iter().zip(&self.y) {
            h.write_u64(o as u64);
            h.write_u64(y as u64);
        }
    }
}

/// Decoded IDX payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images { count: usize, rows: usize, cols: usize, pixels: Vec<u8> },
    Labels(Vec<u8>),
}

impl IdxData {
    /// Images as an `n x (rows*cols)` matrix of `pixel / 255`.
    pub fn to_matrix(&self) -> Option<Matrix> {
        match self {
            IdxData::Images { count, rows, cols, pixels } => Some(bytes_to_unit_matrix(*count, rows * cols, pixels)),
            IdxData::Labels(_) => None,
        }
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        match self {
            IdxData::Labels(l) => Some(l.iter().map(|&b| usize::from(b)).collect()),
            IdxData::Images { .. } => None,
        }
    }
}

fn bytes_to_unit_matrix(rows: usize, cols: usize, bytes: &[u8]) -> Matrix {
    let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
    Matrix::from_vec(rows, cols, data).expect("pixel buffer sized by caller")
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, ParseError> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(ParseError::Truncated {
            offset,
            needed: 4,
            available: bytes.len().saturating_sub(offset),
        }),
    }
}

/// Parses an unsigned-byte IDX file: `0x00000803` images (3 dims) or
/// `0x00000801` labels (1 dim). The payload must match the header exactly.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData, ParseError> {
    let magic = read_be_u32(bytes, 0)?;
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        found => return Err(ParseError::BadMagic { offset: 0, found }),
    };
    let mut dims = [0usize; 3];
    for (d, dim) in dims.iter_mut().enumerate().take(ndims) {
        *dim = read_be_u32(bytes, 4 + 4 * d)? as usize;
    }
    let header = 4 + 4 * ndims;
    let payload = dims[..ndims]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| ParseError::DimMismatch {
            offset: 4,
            detail: format!("dimensions {:?} overflow", &dims[..ndims]),
        })?;
    let available = bytes.len() - header;
    if available < payload {
        return Err(ParseError::Truncated {
            offset: bytes.len(),
            needed: payload,
            available,
        });
    }
    if available > payload {
        return Err(ParseError::DimMismatch {
            offset: header + payload,
            detail: format!("{} bytes past the declared payload", available - payload),
        });
    }
    let body = bytes[header..].to_vec();
    Ok(match ndims {
        3 => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: body,
        },
        _ => IdxData::Labels(body),
    })
}

/// Pairs IDX image and label files into a labeled set.
pub fn idx_labeled_set(images: &[u8], labels: &[u8]) -> Result<LabeledSet> {
    let img = parse_idx(images)?;
    let lab = parse_idx(labels)?;
    let x = img
        .to_matrix()
        .ok_or_else(|| CoreError::contract("image file holds labels"))?;
    let y = lab
        .labels()
        .ok_or_else(|| CoreError::contract("label file holds images"))?;
    if x.rows() != y.len() {
        return Err(ParseError::DimMismatch {
            offset: 4,
            detail: format!("{} images but {} labels", x.rows(), y.len()),
        }
        .into());
    }
    if let Some(i) = y.iter().position(|&l| l >= NUM_CLASSES) {
        return Err(ParseError::BadLabel {
            record: i,
            offset: 8 + i,
            label: y[i] as u8,
        }
        .into());
    }
    LabeledSet::new(x, y)
}

/// CIFAR-10 binary batch: per record one label byte and 3072 pixel bytes
/// (1024 red, 1024 green, 1024 blue, each row-major 32x32).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarBatch {
    pub labels: Vec<u8>,
    pub rgb: Vec<u8>,
}

impl CifarBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn record_rgb(&self, i: usize) -> &[u8] {
        &self.rgb[i * 3072..(i + 1) * 3072]
    }

    /// Luminance-reduced 1024-column set.
    pub fn to_labeled_set(&self) -> Result<LabeledSet> {
        LabeledSet::new(
            to_grayscale_1024(&self.rgb),
            self.labels.iter().map(|&l| usize::from(l)).collect(),
        )
    }
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<CifarBatch, ParseError> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        let whole = bytes.len() / CIFAR_RECORD_LEN;
        return Err(ParseError::Truncated {
            offset: whole * CIFAR_RECORD_LEN,
            needed: CIFAR_RECORD_LEN,
            available: bytes.len() % CIFAR_RECORD_LEN,
        });
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut rgb = Vec::with_capacity(n * 3072);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if usize::from(rec[0]) >= NUM_CLASSES {
            return Err(ParseError::BadLabel {
                record: i,
                offset: i * CIFAR_RECORD_LEN,
                label: rec[0],
            });
        }
        labels.push(rec[0]);
        rgb.extend_from_slice(&rec[1..]);
    }
    Ok(CifarBatch { labels, rgb })
}

/// `0.299 R + 0.587 G + 0.114 B` per pixel, scaled to `[0, 1]`.
pub fn to_grayscale_1024(rgb: &[u8]) -> Matrix {
    let n = rgb.len() / 3072;
    let mut data = Vec::with_capacity(n * 1024);
    for rec in rgb.chunks_exact(3072) {
        let (r, rest) = rec.split_at(1024);
        let (g, b) = rest.split_at(1024);
        for p in 0..1024 {
            let y = LUMA[0] * f64::from(r[p]) + LUMA[1] * f64::from(g[p]) + LUMA[2] * f64::from(b[p]);
            data.push((y / 255.0).min(1.0));
        }
    }
    Matrix::from_vec(n, 1024, data).expect("sized from records")
}

/// Gaussian clusters around distinct corners of the unit hypercube, clipped to
/// `[0, 1]`. Class `c` gets `per_class` points with standard deviation `spread`.
pub fn make_blobs(classes: usize, per_class: usize, dim: usize, spread: f64, rng: &mut Rng) -> Result<LabeledSet> {
    if classes > NUM_CLASSES {
        return Err(CoreError::contract(format!("{classes} classes requested, at most {NUM_CLASSES}")));
    }
    if dim == 0 || (dim < 64 && classes > (1usize << dim)) {
        return Err(CoreError::contract(format!("{dim} dimensions cannot hold {classes} distinct corners")));
    }
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while centers.len() < classes {
        let c: Vec<f64> = (0..dim).map(|_| (rng.next_u64() & 1) as f64).collect();
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &m in &centers[c] {
            let v = if spread == 0.0 { m } else { m + spread * rng.gaussian() };
            data.push(v.clamp(0.0, 1.0));
        }
        y.push(c);
    }
    LabeledSet::new(Matrix::from_vec(n, dim, data)?, y)
}

/// One step of the curriculum.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub class_set: Vec<usize>,
    pub train: LabeledSet,
    pub calib: LabeledSet,
    pub test: LabeledSet,
}

/// Ordered tasks of a class-incremental run.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub dataset: String,
    pub tasks: Vec<Task>,
}

/// `{0,1,2,3,4}` followed by the singletons `{5}`, ..., `{9}`.
pub fn default_layout() -> Vec<Vec<usize>> {
    let mut layout = vec![(0..5).collect::<Vec<_>>()];
    layout.extend((5..NUM_CLASSES).map(|c| vec![c]));
    layout
}

/// Number of calibration samples carved from a pool of `n`.
pub fn calibration_count(n: usize, ratio: f64) -> usize {
    libm::floor(n as f64 * ratio) as usize
}

/// Builds the default base + five singleton task stream.
pub fn build_task_stream(full_train: &LabeledSet, full_test: &LabeledSet, calib_ratio: f64, rng: &mut Rng) -> Result<TaskStream> {
    build_task_stream_with_layout(full_train, full_test, calib_ratio, &default_layout(), rng)
}

/// Per task: filter both sets to the task's classes, shuffle the training pool
/// and move the first `floor(n * calib_ratio)` samples into calibration. Test
/// sets are filtered only.
pub fn build_task_stream_with_layout(
    full_train: &LabeledSet,
    full_test: &LabeledSet,
    calib_ratio: f64,
    layout: &[Vec<usize>],
    rng: &mut Rng,
) -> Result<TaskStream> {
    if !(calib_ratio > 0.0 && calib_ratio < 1.0) {
        return Err(CoreError::contract(format!("calibration ratio {calib_ratio} outside (0, 1)")));
    }
    let train_counts = full_train.class_counts();
    let test_counts = full_test.class_counts();
    for class in layout.iter().flatten().copied() {
        if class >= NUM_CLASSES || train_counts[class] == 0 {
            return Err(CoreError::contract(format!("class {class} missing from the training set")));
        }
        if test_counts[class] == 0 {
            return Err(CoreError::contract(format!("class {class} missing from the test set")));
        }
    }
    let mut tasks = Vec::with_capacity(layout.len());
    for classes in layout {
        let mut class_set = classes.clone();
        class_set.sort_unstable();
        let pool = full_train.filter_classes(&class_set);
        let order = rng.permutation(pool.len());
        let n_cal = calibration_count(pool.len(), calib_ratio);
        let calib = pool.subset(&order[..n_cal]);
        let train = pool.subset(&order[n_cal..]);
        tasks.push(Task {
            test: full_test.filter_classes(&class_set),
            class_set,
            train,
            calib,
        });
    }
    Ok(TaskStream {
        dataset: String::new(),
        tasks,
    })
}

impl TaskStream {
    pub fn with_dataset(mut self, name: impl Into<String>) -> Self {
        self.dataset = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.train.dim())
    }

    /// Fingerprint of every split's membership (origin indices and labels).
    pub fn split_hash(&self) -> u64 {
        let mut h = Fnv::new();
        for t in &self.tasks {
            for c in &t.class_set {
                h.write_u64(*c as u64);
            }
            t.train.hash_into(&mut h);
            t.calib.hash_into(&mut h);
            t.test.hash_into(&mut h);
        }
        h.finish()
    }

    /// Calibration sets of tasks `0..upto`, concatenated.
    pub fn pooled_calib(&self, upto: usize) -> Result<LabeledSet> {
        let parts: Vec<&LabeledSet> = self.tasks[..upto].iter().map(|t| &t.calib).collect();
        LabeledSet::concat(&parts)
    }

    /// Test sets of tasks `0..upto`, concatenated.
    pub fn pooled_test(&self, upto: usize) -> Result<LabeledSet> {
        let parts: Vec<&LabeledSet> = self.tasks[..upto].iter().map(|t| &t.test).collect();
        LabeledSet::concat(&parts)
    }

    /// Training sets of every task, concatenated.
    pub fn joint_train(&self) -> Result<LabeledSet> {
        let parts: Vec<&LabeledSet> = self.tasks.iter().map(|t| &t.train).collect();
        LabeledSet::concat(&parts)
    }
}
