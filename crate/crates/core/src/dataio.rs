//! Dataset ingestion: IDX files, a synthetic fallback corpus, and
//! channel-dataset splits.
//!
//! Tests and experiments default to the synthetic dataset so the repo
//! builds and runs offline; IDX paths are optional configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::ChannelRealization;
use crate::error::{CoreError, Result};
use crate::seed::stage_rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of label classes.
pub const CLASSES: usize = 10;

/// A labeled classification dataset with inputs scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<f64>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<u8>, rows: usize, cols: usize) -> Result<Self> {
        let dim = rows * cols;
        if dim == 0 || labels.is_empty() || inputs.len() != labels.len() * dim {
            return Err(CoreError::Config(format!(
                "dataset needs n x {dim} inputs for {} labels, got {}",
                labels.len(),
                inputs.len()
            )));
        }
        if inputs.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(CoreError::Domain("inputs must lie in [0, 1]".into()));
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize >= CLASSES) {
            return Err(CoreError::IndexOutOfRange {
                op: "LabeledDataset::new",
                index: *bad as usize,
                bound: CLASSES,
            });
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            rows,
            cols,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Input dimensionality (`rows * cols`).
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Copies the given samples into a new dataset.
    pub fn take(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut inputs = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(CoreError::IndexOutOfRange {
                    op: "LabeledDataset::take",
                    index: i,
                    bound: self.len(),
                });
            }
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(inputs, labels, self.rows, self.cols)
    }
}

/// Parses a big-endian IDX image/label file pair.
pub fn read_idx(path_images: impl AsRef<Path>, path_labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (pixels, rows, cols) = read_idx_images(path_images.as_ref())?;
    let labels = read_idx_labels(path_labels.as_ref())?;
    let n = pixels.len() / (rows * cols);
    if n != labels.len() {
        return Err(CoreError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let inputs = pixels.iter().map(|b| f64::from(*b) / 255.0).collect();
    LabeledDataset::new(inputs, labels, rows, cols)
}

fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let pd = path.display().to_string();
    let io_err = |e| CoreError::io(pd.clone(), e);
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let magic = r.read_u32::<BigEndian>().map_err(io_err)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CoreError::BadMagic {
            path: pd,
            expected: IDX_IMAGES_MAGIC,
            observed: magic,
        });
    }
    let count = r.read_u32::<BigEndian>().map_err(io_err)? as usize;
    let rows = r.read_u32::<BigEndian>().map_err(io_err)? as usize;
    let cols = r.read_u32::<BigEndian>().map_err(io_err)? as usize;
    let expected = count * rows * cols;
    let mut pixels = vec![0u8; expected];
    let got = read_fully(&mut r, &mut pixels).map_err(io_err)?;
    if got != expected {
        return Err(CoreError::Truncated {
            path: pd,
            expected,
            got,
        });
    }
    Ok((pixels, rows, cols))
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let pd = path.display().to_string();
    let io_err = |e| CoreError::io(pd.clone(), e);
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let magic = r.read_u32::<BigEndian>().map_err(io_err)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CoreError::BadMagic {
            path: pd,
            expected: IDX_LABELS_MAGIC,
            observed: magic,
        });
    }
    let count = r.read_u32::<BigEndian>().map_err(io_err)? as usize;
    let mut labels = vec![0u8; count];
    let got = read_fully(&mut r, &mut labels).map_err(io_err)?;
    if got != count {
        return Err(CoreError::Truncated {
            path: pd,
            expected: count,
            got,
        });
    }
    Ok(labels)
}

fn read_fully(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Writes a dataset as a big-endian IDX image/label pair; pixel values
/// are quantized back to bytes, so byte-derived datasets round-trip
/// bit-exactly.
pub fn write_idx(
    dataset: &LabeledDataset,
    path_images: impl AsRef<Path>,
    path_labels: impl AsRef<Path>,
) -> Result<()> {
    let pi = path_images.as_ref();
    let pl = path_labels.as_ref();
    {
        let pd = pi.display().to_string();
        let io_err = |e| CoreError::io(pd.clone(), e);
        let mut w = BufWriter::new(File::create(pi).map_err(io_err)?);
        w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).map_err(io_err)?;
        w.write_u32::<BigEndian>(dataset.len() as u32).map_err(io_err)?;
        w.write_u32::<BigEndian>(dataset.rows as u32).map_err(io_err)?;
        w.write_u32::<BigEndian>(dataset.cols as u32).map_err(io_err)?;
        for v in &dataset.inputs {
            w.write_all(&[(v * 255.0).round() as u8]).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    {
        let pd = pl.display().to_string();
        let io_err = |e| CoreError::io(pd.clone(), e);
        let mut w = BufWriter::new(File::create(pl).map_err(io_err)?);
        w.write_u32::<BigEndian>(IDX_LABELS_MAGIC).map_err(io_err)?;
        w.write_u32::<BigEndian>(dataset.len() as u32).map_err(io_err)?;
        w.write_all(&dataset.labels).map_err(io_err)?;
        w.flush().map_err(io_err)?;
    }
    Ok(())
}

/// Location of an IDX corpus, if configured: the `FLPOWER_MNIST_DIR`
/// environment variable, pointing at a directory with the standard
/// `train-images-idx3-ubyte` / `train-labels-idx1-ubyte` /
/// `t10k-images-idx3-ubyte` / `t10k-labels-idx1-ubyte` files.
pub fn mnist_dir_from_env() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("FLPOWER_MNIST_DIR")?);
    let have_all = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|f| dir.join(f).exists());
    have_all.then_some(dir)
}

/// Synthetic 784-dimensional 10-class dataset: one Gaussian prototype
/// per class plus clamped noise, class counts balanced within one,
/// deterministic per seed. Train and test sets must be drawn as one
/// corpus (one call) and split, or they would carry different
/// prototypes.
///
/// The noise level is tuned so that a few hundred samples are needed
/// for the FL classifier to generalize: data volume then matters over a
/// 50-round federated run, while staying trivially separable in the
/// prototype geometry.
pub fn synth_dataset(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n < CLASSES {
        return Err(CoreError::Config(format!(
            "synthetic dataset needs n >= {CLASSES}, got {n}"
        )));
    }
    let dim = 28 * 28;
    let mut rng = stage_rng(seed, "synth-dataset");
    let prototypes: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.4..0.6)).collect())
        .collect();
    let noise = Normal::new(0.0, 0.40).expect("positive std");

    let base = n / CLASSES;
    let extra = n % CLASSES;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..CLASSES {
        let count = base + usize::from(class < extra);
        for _ in 0..count {
            labels.push(class as u8);
            inputs.extend(
                prototypes[class]
                    .iter()
                    .map(|p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0)),
            );
        }
    }
    // Shuffle sample order so shards drawn from the front are balanced.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut shuffled_inputs = Vec::with_capacity(n * dim);
    let mut shuffled_labels = Vec::with_capacity(n);
    for &i in &order {
        shuffled_inputs.extend_from_slice(&inputs[i * dim..(i + 1) * dim]);
        shuffled_labels.push(labels[i]);
    }
    LabeledDataset::new(shuffled_inputs, shuffled_labels, 28, 28)
}

/// Channel realizations split for training, validation, and testing.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<ChannelRealization>,
    pub val: Vec<ChannelRealization>,
    pub test: Vec<ChannelRealization>,
}

/// Seeded shuffle followed by contiguous slicing into the three splits.
/// The counts must exhaust the input exactly.
pub fn split_channels(
    mut realizations: Vec<ChannelRealization>,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplits> {
    let (n_train, n_val, n_test) = counts;
    if n_train + n_val + n_test != realizations.len() {
        return Err(CoreError::Config(format!(
            "split counts {n_train}+{n_val}+{n_test} != {} realizations",
            realizations.len()
        )));
    }
    let mut rng = stage_rng(seed, "channel-split");
    realizations.shuffle(&mut rng);
    let test = realizations.split_off(n_train + n_val);
    let val = realizations.split_off(n_train);
    Ok(DatasetSplits {
        train: realizations,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_csi, generate_channels};

    fn fixture_pair(dir: &Path, image_magic: u32, pixels: &[u8], labels: &[u8]) -> (PathBuf, PathBuf) {
        let pi = dir.join("images.idx");
        let pl = dir.join("labels.idx");
        {
            let mut w = File::create(&pi).unwrap();
            w.write_u32::<BigEndian>(image_magic).unwrap();
            w.write_u32::<BigEndian>(labels.len() as u32).unwrap();
            w.write_u32::<BigEndian>(2).unwrap();
            w.write_u32::<BigEndian>(2).unwrap();
            w.write_all(pixels).unwrap();
        }
        {
            let mut w = File::create(&pl).unwrap();
            w.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
            w.write_u32::<BigEndian>(labels.len() as u32).unwrap();
            w.write_all(labels).unwrap();
        }
        (pi, pl)
    }

    #[test]
    fn hand_built_single_image_parses_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = fixture_pair(dir.path(), IDX_IMAGES_MAGIC, &[0, 255, 0, 255], &[7]);
        let ds = read_idx(&pi, &pl).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.input(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.label(0), 7);
    }

    #[test]
    fn swapped_files_are_detected_by_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = fixture_pair(dir.path(), IDX_LABELS_MAGIC, &[0, 0, 0, 0], &[1]);
        match read_idx(&pi, &pl) {
            Err(CoreError::BadMagic { observed, expected, .. }) => {
                assert_eq!(observed, IDX_LABELS_MAGIC);
                assert_eq!(expected, IDX_IMAGES_MAGIC);
            }
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        // Declares one 2x2 image but carries only 3 pixel bytes.
        let (pi, pl) = fixture_pair(dir.path(), IDX_IMAGES_MAGIC, &[0, 255, 0], &[1]);
        assert!(matches!(
            read_idx(&pi, &pl),
            Err(CoreError::Truncated { expected: 4, got: 3, .. })
        ));
    }

    #[test]
    fn image_label_count_mismatch_is_a_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let pi = dir.path().join("images.idx");
        let pl = dir.path().join("labels.idx");
        {
            let mut w = File::create(&pi).unwrap();
            w.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
            w.write_u32::<BigEndian>(1).unwrap();
            w.write_u32::<BigEndian>(1).unwrap();
            w.write_u32::<BigEndian>(1).unwrap();
            w.write_all(&[42]).unwrap();
        }
        {
            let mut w = File::create(&pl).unwrap();
            w.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
            w.write_u32::<BigEndian>(2).unwrap();
            w.write_all(&[0, 1]).unwrap();
        }
        assert!(matches!(
            read_idx(&pi, &pl),
            Err(CoreError::CountMismatch { images: 1, labels: 2 })
        ));
    }

    #[test]
    fn idx_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = {
            let (pi, pl) = fixture_pair(
                dir.path(),
                IDX_IMAGES_MAGIC,
                &[0, 17, 255, 128, 3, 99, 200, 1],
                &[4, 9],
            );
            read_idx(&pi, &pl).unwrap()
        };
        let pi2 = dir.path().join("out-images.idx");
        let pl2 = dir.path().join("out-labels.idx");
        write_idx(&ds, &pi2, &pl2).unwrap();
        let back = read_idx(&pi2, &pl2).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn parses_published_corpus_when_available() {
        let Some(dir) = mnist_dir_from_env() else {
            eprintln!("FLPOWER_MNIST_DIR not set; skipping corpus parse test");
            return;
        };
        let ds = read_idx(
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        )
        .unwrap();
        assert_eq!(ds.len(), 10_000);
        assert!(ds.labels().iter().all(|l| (*l as usize) < CLASSES));
    }

    #[test]
    fn synth_ten_samples_cover_every_class() {
        let ds = synth_dataset(10, 0).unwrap();
        let mut seen = [false; CLASSES];
        for i in 0..10 {
            seen[ds.label(i)] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_dataset(105, 3).unwrap();
        let b = synth_dataset(105, 3).unwrap();
        assert_eq!(a, b);
        let mut counts = [0usize; CLASSES];
        for l in a.labels() {
            counts[*l as usize] += 1;
        }
        let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(max - min <= 1);
    }

    #[test]
    fn synth_classes_are_linearly_separable() {
        use crate::diffcore::{adam_step, AdamHyper, AdamState, Tape, Tensor};

        let ds = synth_dataset(2000, 7).unwrap();
        let dim = ds.dim();
        // Multinomial logistic regression on the raw pixels.
        let mut params = vec![Tensor::zeros(vec![dim, CLASSES])];
        let mut adam = AdamState::new(&params);
        let labels: Vec<usize> = (0..ds.len()).map(|i| ds.label(i)).collect();
        for _ in 0..120 {
            let mut tape = Tape::new();
            let w = tape.param(params[0].clone());
            let x = tape.leaf(Tensor::new(vec![ds.len(), dim], ds.inputs().to_vec()).unwrap());
            let logits = tape.matmul(x, w).unwrap();
            let loss = tape.softmax_cross_entropy(logits, &labels).unwrap();
            tape.backward(loss).unwrap();
            let grads = vec![tape.grad(w).unwrap().to_vec()];
            let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            adam_step(&mut params, &refs, &mut adam, &AdamHyper::with_lr(0.1)).unwrap();
        }
        // Error of the trained linear model.
        let mut wrong = 0usize;
        for i in 0..ds.len() {
            let x = ds.input(i);
            let mut best = (f64::NEG_INFINITY, 0usize);
            for c in 0..CLASSES {
                let score: f64 = (0..dim).map(|d| x[d] * params[0].values()[d * CLASSES + c]).sum();
                if score > best.0 {
                    best = (score, c);
                }
            }
            if best.1 != ds.label(i) {
                wrong += 1;
            }
        }
        let err = wrong as f64 / ds.len() as f64;
        assert!(err < 0.05, "linear classifier error {err}");
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let chans = generate_channels(30, 2, 3, 1, 4.0).unwrap();
        let s1 = split_channels(chans.clone(), (10, 10, 10), 9).unwrap();
        let s2 = split_channels(chans.clone(), (10, 10, 10), 9).unwrap();
        assert_eq!(s1.train, s2.train);
        assert_eq!(s1.val, s2.val);
        assert_eq!(s1.test, s2.test);

        // Union equals the input set, pairwise disjoint.
        let mut all: Vec<&ChannelRealization> = s1
            .train
            .iter()
            .chain(s1.val.iter())
            .chain(s1.test.iter())
            .collect();
        assert_eq!(all.len(), 30);
        for ch in &chans {
            let pos = all.iter().position(|c| *c == ch).expect("present");
            all.swap_remove(pos);
        }
        assert!(all.is_empty());
    }

    #[test]
    fn split_counts_must_match() {
        let chans = generate_channels(5, 2, 2, 1, 0.0).unwrap();
        assert!(matches!(
            split_channels(chans, (2, 2, 2), 0),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn splits_have_balanced_csi_statistics() {
        let chans = generate_channels(900, 4, 6, 11, 4.0).unwrap();
        let splits = split_channels(chans, (300, 300, 300), 5).unwrap();
        let mean_entry = |set: &[ChannelRealization]| {
            let mut acc = 0.0;
            let mut n = 0usize;
            for ch in set {
                let csi = build_csi(ch, 1.0).unwrap();
                acc += csi.entries().iter().sum::<f64>();
                n += csi.entries().len();
            }
            acc / n as f64
        };
        let (a, b, c) = (
            mean_entry(&splits.train),
            mean_entry(&splits.val),
            mean_entry(&splits.test),
        );
        for (x, y) in [(a, b), (a, c), (b, c)] {
            assert!(
                (x - y).abs() / x.max(y) < 0.10,
                "split means diverge: {a} {b} {c}"
            );
        }
    }
}
