//! Dataset registry: where each corpus lives on disk and how it is loaded.
//!
//! ```text
//! <data_dir>/<mnist|kmnist|fashionmnist>/{train,t10k}-images-idx3-ubyte[.gz]
//! <data_dir>/<mnist|kmnist|fashionmnist>/{train,t10k}-labels-idx1-ubyte[.gz]
//! <data_dir>/cifar10/data_batch_{1..5}.bin, test_batch.bin
//! ```

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use cpcf_core::data::{build_task_stream, idx_labeled_set, make_blobs, parse_cifar10, LabeledSet, TaskStream};
use cpcf_core::{Rng, NUM_CLASSES};
use flate2::read::GzDecoder;

use crate::config::{BlobsConfig, ExperimentConfig};
use crate::{CliError, Result};

const SPLIT_STREAM: u64 = 100;

/// Train and test sets of a corpus, before task construction.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

fn idx_files(dir: &Path, split: &str) -> [PathBuf; 2] {
    [
        dir.join(format!("{split}-images-idx3-ubyte")),
        dir.join(format!("{split}-labels-idx1-ubyte")),
    ]
}

/// Reads `path`, or `path.gz` decompressed. `Ok(None)` when neither exists.
pub fn read_maybe_gz(path: &Path) -> Result<Option<Vec<u8>>> {
    if path.is_file() {
        return fs::read(path).map(Some).map_err(|e| CliError::io(path, e));
    }
    let gz = gz_path(path);
    if gz.is_file() {
        let file = fs::File::open(&gz).map_err(|e| CliError::io(&gz, e))?;
        let mut out = Vec::new();
        GzDecoder::new(file).read_to_end(&mut out).map_err(|e| CliError::io(&gz, e))?;
        return Ok(Some(out));
    }
    Ok(None)
}

fn gz_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".gz");
    PathBuf::from(s)
}

fn missing(name: &str, expected: &[PathBuf]) -> CliError {
    let list: Vec<String> = expected.iter().map(|p| format!("  {}", p.display())).collect();
    CliError::Data(format!(
        "dataset '{name}' not found; expected these files (IDX files may also end in .gz):\n{}\nset data_dir or {} to the directory holding '{name}/'",
        list.join("\n"),
        crate::config::DATA_DIR_ENV
    ))
}

fn load_idx_split(name: &str, dir: &Path, split: &str) -> Result<LabeledSet> {
    let [img_path, lbl_path] = idx_files(dir, split);
    let images = read_maybe_gz(&img_path)?;
    let labels = read_maybe_gz(&lbl_path)?;
    match (images, labels) {
        (Some(i), Some(l)) => idx_labeled_set(&i, &l).map_err(|e| CliError::Data(format!("{}: {e}", img_path.display()))),
        _ => {
            let mut expected = idx_files(dir, "train").to_vec();
            expected.extend(idx_files(dir, "t10k"));
            Err(missing(name, &expected))
        }
    }
}

fn cifar_paths(dir: &Path) -> (Vec<PathBuf>, PathBuf) {
    let train = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    (train, dir.join("test_batch.bin"))
}

fn load_cifar(dir: &Path) -> Result<Corpus> {
    let (train_paths, test_path) = cifar_paths(dir);
    let mut all = train_paths.clone();
    all.push(test_path.clone());
    if all.iter().any(|p| !p.is_file()) {
        return Err(missing("cifar10", &all));
    }
    let read = |p: &Path| -> Result<LabeledSet> {
        let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
        let batch = parse_cifar10(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        Ok(batch.to_labeled_set()?)
    };
    let parts = train_paths.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&LabeledSet> = parts.iter().collect();
    Ok(Corpus {
        name: "cifar10".into(),
        train: LabeledSet::concat(&refs)?,
        test: read(&test_path)?,
    })
}

/// The full synthetic corpus, before the train/test split.
pub fn blobs_corpus(cfg: &BlobsConfig) -> Result<LabeledSet> {
    let mut rng = Rng::new(cfg.data_seed);
    Ok(make_blobs(NUM_CLASSES, cfg.per_class, cfg.dim, cfg.spread, &mut rng)?)
}

fn load_blobs(cfg: &BlobsConfig) -> Result<Corpus> {
    let all = blobs_corpus(cfg)?;
    // per-class split so every class appears in both halves
    let mut rng = Rng::new(cfg.data_seed).derive(1);
    let n_test = ((cfg.per_class as f64) * cfg.test_fraction).round().clamp(1.0, (cfg.per_class - 1) as f64) as usize;
    let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
    for class in 0..NUM_CLASSES {
        let mut members: Vec<usize> = (0..all.len()).filter(|&i| all.y()[i] == class).collect();
        rng.shuffle(&mut members);
        test_idx.extend_from_slice(&members[..n_test]);
        train_idx.extend_from_slice(&members[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Corpus {
        name: "blobs".into(),
        train: all.subset(&train_idx),
        test: all.subset(&test_idx),
    })
}

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let dir = cfg.data_dir.join(&cfg.dataset);
    match cfg.dataset.as_str() {
        "blobs" => load_blobs(&cfg.blobs),
        "cifar10" => load_cifar(&dir),
        name @ ("mnist" | "kmnist" | "fashionmnist") => Ok(Corpus {
            name: name.to_string(),
            train: load_idx_split(name, &dir, "train")?,
            test: load_idx_split(name, &dir, "t10k")?,
        }),
        other => Err(CliError::Config(format!("unknown dataset '{other}'"))),
    }
}

/// Task stream for one run; the split depends only on the seed and ratio.
pub fn task_stream(corpus: &Corpus, calib_ratio: f64, seed: u64) -> Result<TaskStream> {
    let mut rng = Rng::new(seed).derive(SPLIT_STREAM);
    Ok(build_task_stream(&corpus.train, &corpus.test, calib_ratio, &mut rng)?.with_dataset(corpus.name.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(n: usize) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3];
        for d in [n as u32, 28, 28] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend((0..n * 784).map(|i| (i % 256) as u8));
        b
    }

    fn idx_labels(n: usize) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 1];
        b.extend_from_slice(&(n as u32).to_be_bytes());
        b.extend((0..n).map(|i| (i % 10) as u8));
        b
    }

    #[test]
    fn gz_and_plain_files_load_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let plain = tmp.path().join("a");
        fs::write(&plain, b"hello").unwrap();
        let zipped = tmp.path().join("b");
        let mut enc = flate2::write::GzEncoder::new(fs::File::create(gz_path(&zipped)).unwrap(), flate2::Compression::default());
        enc.write_all(b"hello").unwrap();
        enc.finish().unwrap();
        assert_eq!(read_maybe_gz(&plain).unwrap().unwrap(), b"hello");
        assert_eq!(read_maybe_gz(&zipped).unwrap().unwrap(), b"hello");
        assert!(read_maybe_gz(&tmp.path().join("c")).unwrap().is_none());
    }

    #[test]
    fn idx_directory_loads() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("kmnist");
        fs::create_dir(&dir).unwrap();
        for (split, n) in [("train", 30), ("t10k", 20)] {
            fs::write(dir.join(format!("{split}-images-idx3-ubyte")), idx_images(n)).unwrap();
            fs::write(dir.join(format!("{split}-labels-idx1-ubyte")), idx_labels(n)).unwrap();
        }
        let mut cfg = ExperimentConfig::default();
        cfg.data_dir = tmp.path().to_path_buf();
        cfg.dataset = "kmnist".into();
        let c = load_corpus(&cfg).unwrap();
        assert_eq!((c.train.len(), c.test.len(), c.train.dim()), (30, 20, 784));
    }

    #[test]
    fn missing_files_name_expected_paths() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.data_dir = tmp.path().to_path_buf();
        let e = load_corpus(&cfg).unwrap_err();
        let msg = e.to_string();
        assert_eq!(e.exit_code(), 3);
        assert!(msg.contains("train-images-idx3-ubyte") && msg.contains("t10k-labels-idx1-ubyte"), "{msg}");
        cfg.dataset = "cifar10".into();
        assert!(load_corpus(&cfg).unwrap_err().to_string().contains("data_batch_5.bin"));
    }

    #[test]
    fn cifar_directory_loads_as_1024_columns() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("cifar10");
        fs::create_dir(&dir).unwrap();
        let record = |label: u8| {
            let mut r = vec![label];
            r.extend(std::iter::repeat_n(200u8, 3072));
            r
        };
        let names = ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"];
        for (i, name) in names.iter().enumerate() {
            fs::write(dir.join(name), [record(i as u8), record(9)].concat()).unwrap();
        }
        let mut cfg = ExperimentConfig::default();
        cfg.data_dir = tmp.path().to_path_buf();
        cfg.dataset = "cifar10".into();
        let c = load_corpus(&cfg).unwrap();
        assert_eq!((c.train.len(), c.test.len(), c.train.dim()), (10, 2, 1024));
        assert!((c.train.x().get(0, 0) - 200.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn blobs_split_per_class() {
        let cfg = BlobsConfig {
            per_class: 20,
            dim: 5,
            ..BlobsConfig::default()
        };
        let c = load_blobs(&cfg).unwrap();
        assert_eq!(c.test.class_counts(), [4; 10]);
        assert_eq!(c.train.class_counts(), [16; 10]);
        let again = load_blobs(&cfg).unwrap();
        assert_eq!(c.train, again.train);
    }
}
