//! Binary pattern sets: the 6x6 three-glyph task and binarized MNIST, plus
//! pixel-flip noise and the noisy example streams every protocol draws from.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A binary image, one entry per crossbar input line.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern(Vec<bool>);

impl Pattern {
    pub fn new(bits: Vec<bool>) -> Self {
        Pattern(bits)
    }

    pub fn zeros(len: usize) -> Self {
        Pattern(vec![false; len])
    }

    pub fn from_indices(len: usize, active: &[usize]) -> Self {
        let mut bits = vec![false; len];
        for &i in active {
            bits[i] = true;
        }
        Pattern(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn hamming(&self, other: &Pattern) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct PatternSet {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub split: Split,
    pub items: Vec<(Pattern, usize)>,
}

impl PatternSet {
    /// Pixels per image.
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Indices of the items of each class.
    pub fn class_index(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, (_, label)) in self.items.iter().enumerate() {
            by_class[*label].push(i);
        }
        by_class
    }

    /// Mean number of active pixels per image.
    pub fn mean_active(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        let total: usize = self.items.iter().map(|(p, _)| p.popcount()).sum();
        total as f64 / self.items.len() as f64
    }

    pub fn truncated(&self, n: usize) -> PatternSet {
        PatternSet {
            items: self.items.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

pub const GLYPH_SIDE: usize = 6;

// Reconstructed 6x6 glyphs, eight active pixels each, as (row, column).
const GLYPH_O: [(usize, usize); 8] = [
    (1, 2),
    (1, 3),
    (2, 1),
    (2, 4),
    (3, 1),
    (3, 4),
    (4, 2),
    (4, 3),
];
const GLYPH_Z: [(usize, usize); 8] = [
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 3),
    (3, 2),
    (4, 1),
    (4, 2),
    (4, 3),
];
const GLYPH_X: [(usize, usize); 8] = [
    (1, 1),
    (1, 4),
    (2, 2),
    (2, 3),
    (3, 2),
    (3, 3),
    (4, 1),
    (4, 4),
];

pub const GLYPH_NAMES: [&str; 3] = ["O", "Z", "X"];

/// The canonical 'O', 'Z', 'X' glyphs as classes 0, 1, 2.
pub fn make_glyphs() -> PatternSet {
    let items = [GLYPH_O, GLYPH_Z, GLYPH_X]
        .iter()
        .enumerate()
        .map(|(label, cells)| {
            let idx: Vec<usize> = cells.iter().map(|(r, c)| r * GLYPH_SIDE + c).collect();
            (Pattern::from_indices(GLYPH_SIDE * GLYPH_SIDE, &idx), label)
        })
        .collect();
    PatternSet {
        width: GLYPH_SIDE,
        height: GLYPH_SIDE,
        classes: 3,
        split: Split::Train,
        items,
    }
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_THRESHOLD: u8 = 128;
pub const MNIST_CLASSES: usize = 10;

/// Raw IDX image file contents.
#[derive(Debug, Clone)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, header: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Parses a big-endian IDX3 image file (magic 0x00000803).
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    check_header(path, bytes, IMAGE_MAGIC, 16)?;
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

/// Parses a big-endian IDX1 label file (magic 0x00000801).
pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    check_header(path, bytes, LABEL_MAGIC, 8)?;
    let count = be_u32(bytes, 4) as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Active iff the raw intensity is at least `threshold`.
pub fn binarize(raw: &[u8], threshold: u8) -> Pattern {
    Pattern(raw.iter().map(|&v| v >= threshold).collect())
}

fn mnist_files(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let stem = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    (
        dir.join(format!("{stem}-images-idx3-ubyte")),
        dir.join(format!("{stem}-labels-idx1-ubyte")),
    )
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::DatasetMissing(path.into()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_mnist(dir: &Path, split: Split) -> Result<PatternSet> {
    load_mnist_with_threshold(dir, split, MNIST_THRESHOLD)
}

pub fn load_mnist_with_threshold(dir: &Path, split: Split, threshold: u8) -> Result<PatternSet> {
    let (image_path, label_path) = mnist_files(dir, split);
    let images = parse_idx_images(&image_path, &read_file(&image_path)?)?;
    let labels = parse_idx_labels(&label_path, &read_file(&label_path)?)?;
    if images.count() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count(),
            labels: labels.len(),
        });
    }
    let mut items = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        if label as usize >= MNIST_CLASSES {
            return Err(Error::invalid(format!(
                "{}: label {label} at item {i} is not a digit",
                label_path.display()
            )));
        }
        items.push((binarize(images.image(i), threshold), label as usize));
    }
    Ok(PatternSet {
        width: images.cols,
        height: images.rows,
        classes: MNIST_CLASSES,
        split,
        items,
    })
}

/// Flips each pixel independently with probability `flip_prob`. Exactly one
/// uniform draw is consumed per pixel whatever the probability.
pub fn add_noise<R: Rng + ?Sized>(img: &Pattern, flip_prob: f64, rng: &mut R) -> Pattern {
    Pattern(
        img.0
            .iter()
            .map(|&b| b ^ (rng.gen::<f64>() < flip_prob))
            .collect(),
    )
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("flip probability {p} outside [0, 1]")))
    }
}

/// A stream of noisy labeled examples.
pub trait PatternSource {
    /// A noisy example of `class`.
    fn example_of(&mut self, class: usize) -> Result<Pattern>;
    /// The next noisy example and its label.
    fn next_labeled(&mut self) -> Result<(Pattern, usize)>;
}

/// Draws items uniformly at random (with replacement) and corrupts each draw
/// with fresh noise. Never exhausts.
pub struct NoisySampler<'a> {
    set: &'a PatternSet,
    by_class: Vec<Vec<usize>>,
    flip_prob: f64,
    rng: ChaCha8Rng,
}

impl<'a> NoisySampler<'a> {
    pub fn new(set: &'a PatternSet, flip_prob: f64, seed: u64) -> Result<Self> {
        check_probability(flip_prob)?;
        if set.is_empty() {
            return Err(Error::invalid("cannot sample from an empty pattern set"));
        }
        Ok(NoisySampler {
            set,
            by_class: set.class_index(),
            flip_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl PatternSource for NoisySampler<'_> {
    fn example_of(&mut self, class: usize) -> Result<Pattern> {
        let pool = self.by_class.get(class).ok_or(Error::OutOfRange {
            index: class,
            limit: self.set.classes,
        })?;
        if pool.is_empty() {
            return Err(Error::SourceExhausted(0));
        }
        let pick = pool[self.rng.gen_range(0..pool.len())];
        Ok(add_noise(&self.set.items[pick].0, self.flip_prob, &mut self.rng))
    }

    fn next_labeled(&mut self) -> Result<(Pattern, usize)> {
        let pick = self.rng.gen_range(0..self.set.len());
        let (img, label) = &self.set.items[pick];
        Ok((add_noise(img, self.flip_prob, &mut self.rng), *label))
    }
}

/// Walks the set in stored order, corrupting each item with fresh noise.
/// Exhausts at the end of the set.
pub struct NoisySequence<'a> {
    set: &'a PatternSet,
    next: usize,
    class_cursor: Vec<usize>,
    by_class: Vec<Vec<usize>>,
    flip_prob: f64,
    rng: ChaCha8Rng,
}

impl<'a> NoisySequence<'a> {
    pub fn new(set: &'a PatternSet, flip_prob: f64, seed: u64) -> Result<Self> {
        check_probability(flip_prob)?;
        Ok(NoisySequence {
            set,
            next: 0,
            class_cursor: vec![0; set.classes],
            by_class: set.class_index(),
            flip_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl PatternSource for NoisySequence<'_> {
    fn example_of(&mut self, class: usize) -> Result<Pattern> {
        let pool = self.by_class.get(class).ok_or(Error::OutOfRange {
            index: class,
            limit: self.set.classes,
        })?;
        let cursor = &mut self.class_cursor[class];
        let pick = *pool.get(*cursor).ok_or(Error::SourceExhausted(*cursor))?;
        *cursor += 1;
        Ok(add_noise(&self.set.items[pick].0, self.flip_prob, &mut self.rng))
    }

    fn next_labeled(&mut self) -> Result<(Pattern, usize)> {
        let (img, label) = self
            .set
            .items
            .get(self.next)
            .ok_or(Error::SourceExhausted(self.next))?;
        self.next += 1;
        Ok((add_noise(img, self.flip_prob, &mut self.rng), *label))
    }
}
