//! Dual-crossbar ELM-style classifier.
//!
//! The first crossbar is either imprinted with training examples (one epoch
//! per hidden neuron) or holds random OFF-state conductances. Its read currents
//! go through a bank of offset `tanh` activations, and a linear readout is
//! fitted in closed form by ridge regression:
//!
//! ```text
//! h_m   = tanh(gain * I_m / current_scale + offset_m)
//! W_out = Y H^T (H H^T + lambda I)^-1
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::crossbar::{write_csv_row, ConductanceMap, Crossbar, VariabilitySpec};
use crate::dataset::{add_noise, check_probability, NoisySampler, Pattern, PatternSet};
use crate::device::{DeviceParams, DEFAULT_INITIAL_CONDUCTANCE};
use crate::error::{check_len, Error, Result};
use crate::linalg::solve_spd;
use crate::seed::{derive, stream, Stream};

pub const DEFAULT_GAIN: f64 = 10.0;

/// Per-neuron `tanh` nonlinearities sharing one gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBank {
    offsets: Vec<f64>,
    gain: f64,
    current_scale: f64,
}

impl ActivationBank {
    pub fn new(offsets: Vec<f64>, gain: f64, current_scale: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::invalid(format!("gain must be positive, got {gain}")));
        }
        if !(current_scale > 0.0 && current_scale.is_finite()) {
            return Err(Error::invalid(format!("current scale must be positive, got {current_scale}")));
        }
        Ok(ActivationBank {
            offsets,
            gain,
            current_scale,
        })
    }

    /// Offsets drawn uniformly from `[-half_width, half_width]`.
    pub fn random<R: Rng>(neurons: usize, gain: f64, current_scale: f64, half_width: f64, rng: &mut R) -> Result<Self> {
        let offsets = (0..neurons)
            .map(|_| if half_width > 0.0 { rng.gen_range(-half_width..=half_width) } else { 0.0 })
            .collect();
        Self::new(offsets, gain, current_scale)
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn current_scale(&self) -> f64 {
        self.current_scale
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Applies the bank in place to a vector of currents.
    #[inline]
    pub fn activate(&self, currents: &mut [f64]) {
        let k = self.gain / self.current_scale;
        for (v, o) in currents.iter_mut().zip(&self.offsets) {
            *v = (k * *v + o).tanh();
        }
    }
}

/// Normalization that brings a typical read current to O(1):
/// `V_read * A * (mean active pixels per image)`.
pub fn default_current_scale(v_read: f64, g_max: f64, mean_active: f64) -> f64 {
    v_read * g_max * mean_active.max(1.0)
}

/// Hidden vector `h` for one image read from the first crossbar.
pub fn project(cb: &Crossbar, bank: &ActivationBank, img: &Pattern) -> Result<Vec<f64>> {
    check_len(cb.cols(), bank.len())?;
    let mut h = cb.read_currents(img)?;
    bank.activate(&mut h);
    Ok(h)
}

/// What feeds the readout.
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenLayer {
    /// First-crossbar currents through an activation bank.
    Projection { map: ConductanceMap, bank: ActivationBank },
    /// Raw binary pixels, no first layer.
    Pixels { len: usize },
}

impl HiddenLayer {
    pub fn inputs(&self) -> usize {
        match self {
            HiddenLayer::Projection { map, .. } => map.rows,
            HiddenLayer::Pixels { len } => *len,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            HiddenLayer::Projection { map, .. } => map.cols,
            HiddenLayer::Pixels { len } => *len,
        }
    }

    /// Writes the features of `img` into `out` (length [`HiddenLayer::dim`]).
    pub fn features_into(&self, img: &Pattern, out: &mut [f64]) {
        match self {
            HiddenLayer::Projection { map, bank } => {
                map.currents_into(&img.active_indices(), out);
                bank.activate(out);
            }
            HiddenLayer::Pixels { .. } => {
                for (o, &b) in out.iter_mut().zip(img.bits()) {
                    *o = if b { 1.0 } else { 0.0 };
                }
            }
        }
    }

    pub fn features(&self, img: &Pattern) -> Result<Vec<f64>> {
        check_len(self.inputs(), img.len())?;
        let mut h = vec![0.0; self.dim()];
        self.features_into(img, &mut h);
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// `lambda = factor * trace(H H^T) / dim`.
    Relative(f64),
    Absolute(f64),
}

impl Regularization {
    fn resolve(self, gram: &Array2<f64>) -> Result<f64> {
        let lambda = match self {
            Regularization::Absolute(l) => l,
            Regularization::Relative(f) => f * gram.diag().sum() / gram.nrows().max(1) as f64,
        };
        if lambda >= 0.0 && lambda.is_finite() {
            Ok(lambda)
        } else {
            Err(Error::invalid(format!("ridge regularizer must be >= 0, got {lambda}")))
        }
    }
}

/// Streaming sufficient statistics `H H^T` and `Y H^T` of the normal equations.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    gram: Array2<f64>,
    cross: Array2<f64>,
    count: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize, classes: usize) -> Self {
        GramAccumulator {
            gram: Array2::zeros((dim, dim)),
            cross: Array2::zeros((classes, dim)),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds examples given as rows of `hidden` with one-hot class targets.
    pub fn add_labeled(&mut self, hidden: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
        check_len(self.gram.nrows(), hidden.ncols())?;
        check_len(hidden.nrows(), labels.len())?;
        general_mat_mul(1.0, &hidden.t(), &hidden, 1.0, &mut self.gram);
        for (row, &label) in hidden.rows().into_iter().zip(labels) {
            if label >= self.cross.nrows() {
                return Err(Error::OutOfRange {
                    index: label,
                    limit: self.cross.nrows(),
                });
            }
            let mut target = self.cross.row_mut(label);
            target += &row;
        }
        self.count += labels.len();
        Ok(())
    }

    /// Adds examples given as rows of `hidden` with real-valued targets (rows of `targets`).
    pub fn add(&mut self, hidden: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<()> {
        check_len(self.gram.nrows(), hidden.ncols())?;
        check_len(self.cross.nrows(), targets.ncols())?;
        check_len(hidden.nrows(), targets.nrows())?;
        general_mat_mul(1.0, &hidden.t(), &hidden, 1.0, &mut self.gram);
        general_mat_mul(1.0, &targets.t(), &hidden, 1.0, &mut self.cross);
        self.count += hidden.nrows();
        Ok(())
    }

    /// Readout weights (`classes x dim`) and the absolute lambda used.
    pub fn solve(&self, reg: Regularization) -> Result<(Array2<f64>, f64)> {
        if self.count == 0 {
            return Err(Error::invalid("no training examples accumulated"));
        }
        let lambda = reg.resolve(&self.gram)?;
        let mut a = self.gram.clone();
        a.diag_mut().mapv_inplace(|d| d + lambda);
        let w_t = solve_spd(a.view(), self.cross.t())?;
        Ok((w_t.reversed_axes(), lambda))
    }
}

/// `W_out = Y H^T (H H^T + lambda I)^-1` for `H` of shape `dim x N` and `Y` of
/// shape `classes x N`.
pub fn solve_readout(h: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if h.ncols() == 0 {
        return Err(Error::invalid("solve_readout needs N >= 1"));
    }
    let mut acc = GramAccumulator::new(h.nrows(), y.nrows());
    acc.add(h.t(), y.t())?;
    acc.solve(Regularization::Absolute(lambda)).map(|(w, _)| w)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    /// `classes x dim` readout weights.
    pub weights: Array2<f64>,
    pub lambda: f64,
    pub hidden: HiddenLayer,
}

impl ReadoutModel {
    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn scores(&self, img: &Pattern) -> Result<Vec<f64>> {
        let h = self.hidden.features(img)?;
        Ok(self.weights.rows().into_iter().map(|w| w.iter().zip(&h).map(|(a, b)| a * b).sum()).collect())
    }

    pub fn predict(&self, img: &Pattern) -> Result<usize> {
        Ok(argmax(&self.scores(img)?))
    }

    fn predict_into(&self, img: &Pattern, h: &mut [f64]) -> usize {
        self.hidden.features_into(img, h);
        let scores: Vec<f64> = self
            .weights
            .rows()
            .into_iter()
            .map(|w| w.iter().zip(h.iter()).map(|(a, b)| a * b).sum())
            .collect();
        argmax(&scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstLayerMode {
    /// STP-to-LTP imprinting of one training epoch per hidden neuron.
    Imprinted,
    /// i.i.d. random low conductances.
    Random,
    /// No first layer: raw pixels go straight to the readout.
    Direct,
}

impl std::str::FromStr for FirstLayerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imprinted" => Ok(FirstLayerMode::Imprinted),
            "random" => Ok(FirstLayerMode::Random),
            "direct" => Ok(FirstLayerMode::Direct),
            other => Err(Error::Config(format!("unknown first-layer mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for FirstLayerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FirstLayerMode::Imprinted => "imprinted",
            FirstLayerMode::Random => "random",
            FirstLayerMode::Direct => "direct",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElmConfig {
    pub mode: FirstLayerMode,
    /// Hidden neurons `M` (= imprinting epochs).
    pub hidden: usize,
    /// Presentations per epoch `n`.
    pub presentations: usize,
    /// Presentation period `dt` (s).
    pub period: f64,
    /// Wait after imprinting `T` (s).
    pub wait: f64,
    /// Training examples `N`, taken in stored order.
    pub n_train: usize,
    pub noise: f64,
    pub cv: f64,
    pub device: DeviceParams,
    pub g_init: f64,
    pub gain: f64,
    /// Overrides [`default_current_scale`].
    pub current_scale: Option<f64>,
    pub offset_half_width: f64,
    /// Conductance range of the random-weight baseline (S).
    pub random_range: (f64, f64),
    pub regularization: Regularization,
    pub seed: u64,
    /// Examples per Gram update; fixed so results never depend on thread count.
    pub batch: usize,
    /// Cycle the training set when `n_train` exceeds its length.
    pub wrap: bool,
}

impl Default for ElmConfig {
    fn default() -> Self {
        ElmConfig {
            mode: FirstLayerMode::Imprinted,
            hidden: 100,
            presentations: 50,
            period: 200e-6,
            wait: 1.0,
            n_train: 60_000,
            noise: 0.1,
            cv: 0.0,
            device: DeviceParams::default(),
            g_init: DEFAULT_INITIAL_CONDUCTANCE,
            gain: DEFAULT_GAIN,
            current_scale: None,
            offset_half_width: 1.0,
            random_range: (DEFAULT_INITIAL_CONDUCTANCE, 50.0 * DEFAULT_INITIAL_CONDUCTANCE),
            regularization: Regularization::Relative(DEFAULT_RIDGE),
            seed: 0,
            batch: 1000,
            wrap: false,
        }
    }
}

/// Default relative ridge factor.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// A trained system: the first crossbar (absent in direct mode) and the readout.
#[derive(Debug, Clone)]
pub struct ElmSystem {
    pub config: ElmConfig,
    pub first_layer: Option<Crossbar>,
    pub model: ReadoutModel,
}

/// Builds the first layer for `config` on `train`; `None` in direct mode.
pub fn build_first_layer(config: &ElmConfig, train: &PatternSet) -> Result<Option<Crossbar>> {
    let pixels = train.pixels();
    let seed = config.seed;
    match config.mode {
        FirstLayerMode::Direct => Ok(None),
        FirstLayerMode::Imprinted => {
            let var = VariabilitySpec::new(config.cv, stream(seed, Stream::Variability));
            let mut cb = Crossbar::build_with(pixels, config.hidden, &config.device, &var, config.g_init)?;
            let epochs: Vec<(usize, usize)> = (0..config.hidden).map(|m| (m, m % train.classes)).collect();
            let mut source = NoisySampler::new(train, config.noise, stream(seed, Stream::Imprint))?;
            cb.run_imprint_phase(&epochs, config.presentations, config.period, &mut source)?;
            cb.wait(config.wait)?;
            Ok(Some(cb))
        }
        FirstLayerMode::Random => {
            let var = VariabilitySpec::new(config.cv, stream(seed, Stream::Variability));
            let mut cb = Crossbar::build_with(pixels, config.hidden, &config.device, &var, config.g_init)?;
            let mut rng = ChaCha8Rng::seed_from_u64(stream(seed, Stream::RandomWeights));
            let (lo, hi) = config.random_range;
            cb.randomize(lo, hi, &mut rng)?;
            Ok(Some(cb))
        }
    }
}

/// Hidden layer read from a prepared first crossbar (or raw pixels).
pub fn hidden_layer(config: &ElmConfig, first_layer: Option<&Crossbar>, train: &PatternSet) -> Result<HiddenLayer> {
    match first_layer {
        None => Ok(HiddenLayer::Pixels { len: train.pixels() }),
        Some(cb) => {
            // mean active pixels of a noisy image
            let p = train.mean_active() / train.pixels() as f64;
            let noisy_active = train.pixels() as f64 * (p * (1.0 - config.noise) + (1.0 - p) * config.noise);
            let scale = config
                .current_scale
                .unwrap_or_else(|| default_current_scale(cb.v_read, config.device.g_max, noisy_active));
            let mut rng = ChaCha8Rng::seed_from_u64(stream(config.seed, Stream::Offsets));
            let bank = ActivationBank::random(cb.cols(), config.gain, scale, config.offset_half_width, &mut rng)?;
            Ok(HiddenLayer::Projection { map: cb.snapshot(), bank })
        }
    }
}

/// Example `index` of the stream over `set`: item `index mod len` with noise
/// keyed by `index`.
fn noisy_item(set: &PatternSet, index: usize, noise: f64, seed: u64) -> (Pattern, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, index as u64));
    let (img, label) = &set.items[index % set.len()];
    (add_noise(img, noise, &mut rng), *label)
}

fn check_stream(set: &PatternSet, n: usize, wrap: bool) -> Result<()> {
    if set.is_empty() || (!wrap && n > set.len()) {
        Err(Error::SourceExhausted(set.len()))
    } else {
        Ok(())
    }
}

/// Accumulates the normal equations over the first `n` examples of `set`,
/// each corrupted with noise keyed by its index. With `wrap` the set is cycled,
/// otherwise `n` may not exceed its length.
pub fn accumulate(
    hidden: &HiddenLayer,
    set: &PatternSet,
    n: usize,
    noise: f64,
    noise_seed: u64,
    batch: usize,
    wrap: bool,
) -> Result<GramAccumulator> {
    check_stream(set, n, wrap)?;
    check_len(hidden.inputs(), set.pixels())?;
    let dim = hidden.dim();
    let batch = batch.max(1);
    let mut acc = GramAccumulator::new(dim, set.classes);
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let mut rows = Array2::zeros((end - start, dim));
        rows.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(k, row)| {
                let (img, _) = noisy_item(set, start + k, noise, noise_seed);
                hidden.features_into(&img, row);
            });
        let labels: Vec<usize> = (start..end).map(|i| set.items[i % set.len()].1).collect();
        acc.add_labeled(rows.view(), &labels)?;
        start = end;
    }
    Ok(acc)
}

/// Full training: first layer, hidden projection of `n_train` images, ridge readout.
pub fn train_elm(config: &ElmConfig, train: &PatternSet) -> Result<ElmSystem> {
    check_probability(config.noise)?;
    if config.hidden == 0 && config.mode != FirstLayerMode::Direct {
        return Err(Error::invalid("hidden layer must have at least one neuron"));
    }
    if config.n_train == 0 {
        return Err(Error::invalid("n_train must be >= 1"));
    }
    let first_layer = build_first_layer(config, train)?;
    let hidden = hidden_layer(config, first_layer.as_ref(), train)?;
    let acc = accumulate(
        &hidden,
        train,
        config.n_train,
        config.noise,
        stream(config.seed, Stream::TrainNoise),
        config.batch,
        config.wrap,
    )?;
    let (weights, lambda) = acc.solve(config.regularization)?;
    Ok(ElmSystem {
        config: config.clone(),
        first_layer,
        model: ReadoutModel { weights, lambda, hidden },
    })
}

/// Accuracy over the first `k` examples of `test`, each with fresh noise.
/// `wrap` cycles the set as in [`accumulate`].
pub fn evaluate_elm(model: &ReadoutModel, test: &PatternSet, k: usize, noise: f64, seed: u64, wrap: bool) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("evaluation needs at least one test example"));
    }
    check_stream(test, k, wrap)?;
    check_len(model.hidden.inputs(), test.pixels())?;
    let noise_seed = stream(seed, Stream::TestNoise);
    let correct: usize = (0..k)
        .into_par_iter()
        .map_init(
            || vec![0.0; model.hidden.dim()],
            |h, i| {
                let (img, label) = noisy_item(test, i, noise, noise_seed);
                usize::from(model.predict_into(&img, h) == label)
            },
        )
        .sum();
    Ok(correct as f64 / k as f64)
}

/// Non-negative conductance pair encoding of signed readout weights,
/// `W = scale * (G+ - G-)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductancePairs {
    pub positive: Array2<f64>,
    pub negative: Array2<f64>,
    pub scale: f64,
    /// Entries whose magnitude exceeded `scale * g_max` and were clipped.
    pub clipped: usize,
}

impl ConductancePairs {
    pub fn reconstruct(&self) -> Array2<f64> {
        (&self.positive - &self.negative) * self.scale
    }
}

/// Maps `W` onto conductance pairs with the smallest scale that avoids clipping.
pub fn map_weights_to_conductance_pairs(weights: ArrayView2<f64>, g_max: f64) -> ConductancePairs {
    let peak = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let scale = if peak > 0.0 { peak / g_max } else { 1.0 };
    map_weights_with_scale(weights, scale, g_max)
}

/// Maps `W` onto conductance pairs at a fixed `scale`, clipping at `g_max`.
pub fn map_weights_with_scale(weights: ArrayView2<f64>, scale: f64, g_max: f64) -> ConductancePairs {
    let mut clipped = 0;
    let mut split = |sign: f64| {
        weights.mapv(|w| {
            let g = (sign * w).max(0.0) / scale;
            if g > g_max {
                clipped += 1;
                g_max
            } else {
                g
            }
        })
    };
    let positive = split(1.0);
    let negative = split(-1.0);
    ConductancePairs {
        positive,
        negative,
        scale,
        clipped,
    }
}

/// Writes `weights.csv`, `offsets.csv`, `first_layer.csv` and `metadata.txt`
/// into `dir`.
pub fn write_bundle(dir: &Path, system: &ElmSystem) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| -> Result<BufWriter<fs::File>> {
        let p = dir.join(name);
        fs::File::create(&p).map(BufWriter::new).map_err(|e| Error::io(p, e))
    };
    let io = |name: &'static str| move |e| Error::io(dir.join(name), e);

    let mut w = open("weights.csv")?;
    for row in system.model.weights.rows() {
        write_csv_row(&mut w, &row.to_vec()).map_err(io("weights.csv"))?;
    }
    w.flush().map_err(io("weights.csv"))?;

    let cfg = &system.config;
    let mut meta = open("metadata.txt")?;
    let mut lines = vec![
        format!("mode={}", cfg.mode),
        format!("classes={}", system.model.classes()),
        format!("hidden={}", system.model.hidden.dim()),
        format!("inputs={}", system.model.hidden.inputs()),
        format!("lambda={:e}", system.model.lambda),
        format!("presentations={}", cfg.presentations),
        format!("period={:e}", cfg.period),
        format!("wait={:e}", cfg.wait),
        format!("n_train={}", cfg.n_train),
        format!("noise={}", cfg.noise),
        format!("cv={}", cfg.cv),
        format!("seed={}", cfg.seed),
    ];
    if let HiddenLayer::Projection { map, bank } = &system.model.hidden {
        lines.push(format!("gain={}", bank.gain()));
        lines.push(format!("current_scale={:e}", bank.current_scale()));
        lines.push(format!("v_read={}", map.v_read));

        let mut o = open("offsets.csv")?;
        write_csv_row(&mut o, bank.offsets()).map_err(io("offsets.csv"))?;
        o.flush().map_err(io("offsets.csv"))?;

        let mut f = open("first_layer.csv")?;
        map.write_csv(&mut f).map_err(io("first_layer.csv"))?;
        f.flush().map_err(io("first_layer.csv"))?;
    }
    for l in lines {
        writeln!(meta, "{l}").map_err(io("metadata.txt"))?;
    }
    meta.flush().map_err(io("metadata.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_glyphs;
    use rand::Rng;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn zero_input_zero_offset_is_zero() {
        let bank = ActivationBank::new(vec![0.0; 4], 10.0, 1e-3).unwrap();
        let mut h = vec![0.0; 4];
        bank.activate(&mut h);
        assert_eq!(h, vec![0.0; 4]);
        assert!(ActivationBank::new(vec![0.0], 0.0, 1.0).is_err());
        assert!(ActivationBank::new(vec![0.0], 1.0, -1.0).is_err());
    }

    #[test]
    fn offsets_separate_identical_columns() {
        let bank = ActivationBank::new(vec![-0.3, 0.4], 10.0, 1.0).unwrap();
        let mut h = vec![0.02, 0.02];
        bank.activate(&mut h);
        assert!(h[0] != h[1]);
    }

    #[test]
    fn project_matches_manual_formula() {
        let set = make_glyphs();
        let mut cb = Crossbar::build(36, 2, &DeviceParams::default(), &VariabilitySpec::uniform()).unwrap();
        cb.imprint_pattern(&set.items[0].0, 0, 1e-4).unwrap();
        let bank = ActivationBank::new(vec![0.1, -0.2], 10.0, 2e-4).unwrap();
        let img = &set.items[2].0;
        let h = project(&cb, &bank, img).unwrap();
        let i = cb.read_currents(img).unwrap();
        for m in 0..2 {
            assert_relative_eq!(h[m], (10.0 * i[m] / 2e-4 + bank.offsets()[m]).tanh(), max_relative = 1e-12);
            assert!(h[m].abs() < 1.0);
        }
        let short = ActivationBank::new(vec![0.0], 10.0, 1.0).unwrap();
        assert!(project(&cb, &short, img).is_err());
    }

    #[test]
    fn identity_hidden_recovers_targets() {
        let n = 5;
        let h = Array2::<f64>::eye(n);
        let y = Array2::from_shape_fn((3, n), |(j, i)| if i % 3 == j { 1.0 } else { 0.0 });
        let w = solve_readout(h.view(), y.view(), 0.0).unwrap();
        assert!((&w - &y).iter().all(|d| d.abs() < 1e-12));
        for i in 0..n {
            let scores: Vec<f64> = w.column(i).to_vec();
            assert_eq!(argmax(&scores), i % 3);
        }
    }

    #[test]
    fn small_instance_matches_exact_solution() {
        let h = Array2::from_shape_fn((4, 6), |(r, c)| (((3 * r + 5 * c) % 7) as f64 - 3.0) / 4.0);
        let y = Array2::from_shape_fn((3, 6), |(j, c)| if c % 3 == j { 1.0 } else { 0.0 });
        let w = solve_readout(h.view(), y.view(), 0.1).unwrap();
        // exact rational solution of the regularized normal equations
        let expect = [
            [-0.8365900653610309, -0.19867236176556058, -0.056960791482561716, -0.30453524759192735],
            [0.5388433959862531, -0.07976579405150834, 0.07976579405150834, -0.5388433959862531],
            [0.30453524759192735, 0.056960791482561716, 0.19867236176556058, 0.8365900653610309],
        ];
        for j in 0..3 {
            for m in 0..4 {
                assert_relative_eq!(w[[j, m]], expect[j][m], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn singular_gram_without_ridge() {
        let h = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).unwrap();
        let y = Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(solve_readout(h.view(), y.view(), 0.0), Err(Error::RankDeficient { .. })));
        assert!(solve_readout(h.view(), y.view(), 0.1).is_ok());
    }

    #[test]
    fn residual_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Array2::from_shape_fn((6, 20), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((3, 20), |_| rng.gen_range(0.0..1.0));
        let w = solve_readout(h.view(), y.view(), 0.0).unwrap();
        let r = (&y - &w.dot(&h)).dot(&h.t());
        let scale = y.dot(&h.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(r.iter().all(|v| v.abs() <= 1e-8 * scale));
    }

    fn loss(w: &Array2<f64>, h: &Array2<f64>, y: &Array2<f64>, lambda: f64) -> f64 {
        let r = y - &w.dot(h);
        r.iter().map(|v| v * v).sum::<f64>() + lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn ridge_solution_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Array2::from_shape_fn((5, 12), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((2, 12), |_| rng.gen_range(0.0..1.0));
        let lambda = 0.3;
        let w = solve_readout(h.view(), y.view(), lambda).unwrap();
        let best = loss(&w, &h, &y, lambda);
        for _ in 0..200 {
            let dw = Array2::from_shape_fn(w.raw_dim(), |_| rng.gen_range(-1e-3..1e-3));
            assert!(loss(&(&w + &dw), &h, &y, lambda) >= best);
        }
    }

    #[test]
    fn labeled_and_dense_accumulation_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = Array2::from_shape_fn((30, 4), |_| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let targets = Array2::from_shape_fn((30, 3), |(i, j)| if labels[i] == j { 1.0 } else { 0.0 });
        let mut a = GramAccumulator::new(4, 3);
        a.add_labeled(rows.view(), &labels).unwrap();
        let mut b = GramAccumulator::new(4, 3);
        b.add(rows.view(), targets.view()).unwrap();
        let (wa, la) = a.solve(Regularization::Relative(1e-3)).unwrap();
        let (wb, lb) = b.solve(Regularization::Relative(1e-3)).unwrap();
        assert_eq!(la, lb);
        assert!((wa - wb).iter().all(|d| d.abs() < 1e-12));
        assert!(GramAccumulator::new(4, 3).solve(Regularization::Absolute(1.0)).is_err());
    }

    #[test]
    fn conductance_pair_examples() {
        let zero = Array2::<f64>::zeros((2, 3));
        let p = map_weights_to_conductance_pairs(zero.view(), 4e-3);
        assert!(p.positive.iter().chain(p.negative.iter()).all(|&g| g == 0.0));

        let w = Array2::from_shape_vec((1, 2), vec![0.5, -2.0]).unwrap();
        let p = map_weights_with_scale(w.view(), 1000.0, 4e-3);
        assert_eq!(p.positive[[0, 0]], 0.5 / 1000.0);
        assert_eq!(p.negative[[0, 0]], 0.0);
        assert_eq!(p.positive[[0, 1]], 0.0);
        assert_eq!(p.negative[[0, 1]], 2.0 / 1000.0);
        assert_eq!(p.clipped, 0);

        let tight = map_weights_with_scale(w.view(), 100.0, 4e-3);
        assert_eq!(tight.clipped, 2);
        assert!(tight.positive.iter().chain(tight.negative.iter()).all(|&g| (0.0..=4e-3).contains(&g)));
    }

    #[test]
    fn glyph_elm_learns() {
        let set = make_glyphs();
        // With three hidden neurons the outcome hinges on the drawn offsets,
        // so the claim is checked on a seed average.
        let mut total = 0.0;
        for seed in 0..20 {
            let cfg = ElmConfig {
                hidden: 3,
                presentations: 45,
                period: 4e-4,
                n_train: 600,
                current_scale: Some(8e-3),
                seed,
                wrap: true,
                ..Default::default()
            };
            let sys = train_elm(&cfg, &set).unwrap();
            total += evaluate_elm(&sys.model, &set, 300, 0.1, 99 + seed, true).unwrap();
        }
        let acc = total / 20.0;
        assert!(acc >= 0.9, "{acc}");
    }

    #[test]
    fn bundle_files_written() {
        let set = make_glyphs();
        let cfg = ElmConfig {
            hidden: 6,
            n_train: 60,
            wrap: true,
            ..Default::default()
        };
        let sys = train_elm(&cfg, &set).unwrap();
        assert!(train_elm(&ElmConfig { wrap: false, ..cfg.clone() }, &set).is_err());
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &sys).unwrap();
        for f in ["weights.csv", "offsets.csv", "first_layer.csv", "metadata.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let weights = fs::read_to_string(dir.path().join("weights.csv")).unwrap();
        assert_eq!(weights.lines().count(), 3);
        assert_eq!(weights.lines().next().unwrap().split(',').count(), 6);
        let meta = fs::read_to_string(dir.path().join("metadata.txt")).unwrap();
        assert!(meta.contains("mode=imprinted") && meta.contains("gain=10"));
    }

    proptest! {
        #[test]
        fn hidden_values_bounded(i in prop::collection::vec(-1.0f64..1.0, 8), o in prop::collection::vec(-1.0f64..1.0, 8)) {
            let bank = ActivationBank::new(o, 10.0, 1e-2).unwrap();
            let mut h = i.clone();
            bank.activate(&mut h);
            prop_assert!(h.iter().all(|v| v.abs() < 1.0 || v.abs() == 1.0 && i.iter().any(|x| x.abs() > 1e-3)));
        }

        #[test]
        fn pair_round_trip(values in prop::collection::vec(-5.0f64..5.0, 12)) {
            let w = Array2::from_shape_vec((3, 4), values).unwrap();
            let p = map_weights_to_conductance_pairs(w.view(), 4e-3);
            prop_assert_eq!(p.clipped, 0);
            let back = p.reconstruct();
            let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            prop_assert!(back.iter().zip(w.iter()).all(|(a, b)| (a - b).abs() <= 1e-6 * peak));
            prop_assert!(p.positive.iter().chain(p.negative.iter()).all(|&g| (0.0..=4e-3 * (1.0 + 1e-12)).contains(&g)));
        }

        #[test]
        fn prediction_invariant_to_positive_rescaling(values in prop::collection::vec(-1.0f64..1.0, 8), k in 0.01f64..100.0) {
            let w = Array2::from_shape_vec((2, 4), values).unwrap();
            let model = ReadoutModel { weights: w.clone(), lambda: 0.0, hidden: HiddenLayer::Pixels { len: 4 } };
            let scaled = ReadoutModel { weights: w * k, ..model.clone() };
            for bits in 0u8..16 {
                let img = Pattern::new((0..4).map(|b| bits >> b & 1 == 1).collect());
                let s = model.scores(&img).unwrap();
                if (s[0] - s[1]).abs() > 1e-9 {
                    prop_assert_eq!(model.predict(&img).unwrap(), scaled.predict(&img).unwrap());
                }
            }
        }
    }
}
