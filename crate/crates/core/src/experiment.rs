//! Seeded experiment runs and parameter sweeps with CSV output.
//!
//! A config is a flat `key=value` text file. Every field is echoed into the
//! `#` header of the results CSV, so a run can be rebuilt from its output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::crossbar::{Crossbar, VariabilitySpec};
use crate::dataset::{load_mnist_with_threshold, make_glyphs, NoisySampler, PatternSet, Split, MNIST_THRESHOLD};
use crate::device::{DeviceParams, DEFAULT_INITIAL_CONDUCTANCE};
use crate::elm::{evaluate_elm, train_elm, ElmConfig, ElmSystem, FirstLayerMode, Regularization, DEFAULT_GAIN, DEFAULT_RIDGE};
use crate::error::{Error, Result};
use crate::seed::{derive, stream, Stream};
use crate::signature::{evaluate, train_register, ReadTiming, SignatureRegister};

/// Environment variable that overrides the MNIST directory of a config.
pub const DATA_DIR_ENV: &str = "ECM_SIM_MNIST_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Glyphs,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Simple,
    Elm,
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    None,
    Period,
    Presentations,
    Wait,
    Cv,
    Noise,
    Hidden,
    NTrain,
    NTest,
    Ridge,
}

macro_rules! keyword_enum {
    ($ty:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}' (expected one of: ", $($s, " ",)+ ")"),
                        other
                    ))),
                }
            }
        }
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($ty::$var => $s,)+ })
            }
        }
    };
}

keyword_enum!(Task { Glyphs => "glyphs", Mnist => "mnist" });
keyword_enum!(Architecture { Simple => "simple", Elm => "elm" });
keyword_enum!(SweepAxis {
    None => "none",
    Period => "period",
    Presentations => "presentations",
    Wait => "wait",
    Cv => "cv",
    Noise => "noise",
    Hidden => "hidden",
    NTrain => "n_train",
    NTest => "n_test",
    Ridge => "ridge",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RidgeMode {
    Relative,
    Absolute,
}

keyword_enum!(RidgeMode { Relative => "relative", Absolute => "absolute" });

/// Every knob of a run. Units are SI (seconds, siemens).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub architecture: Architecture,
    pub first_layer: FirstLayerMode,
    pub sweep: SweepAxis,
    pub grid: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub presentations: usize,
    pub period: f64,
    pub wait: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub hidden: usize,
    pub noise: f64,
    pub cv: f64,
    pub ridge: f64,
    pub ridge_mode: RidgeMode,
    pub gain: f64,
    /// `None` selects the automatic scale.
    pub current_scale: Option<f64>,
    pub offset_half_width: f64,
    pub random_low: f64,
    pub random_high: f64,
    pub g_init: f64,
    pub read_period: f64,
    pub threshold: u8,
    pub column: usize,
    pub batch: usize,
    pub data_dir: PathBuf,
    pub device: DeviceParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Glyphs,
            architecture: Architecture::Simple,
            first_layer: FirstLayerMode::Imprinted,
            sweep: SweepAxis::None,
            grid: Vec::new(),
            repeats: 1,
            seed: 0,
            presentations: 45,
            period: 400e-6,
            wait: 1.0,
            n_train: 100,
            n_test: 100,
            hidden: 100,
            noise: 0.1,
            cv: 0.0,
            ridge: DEFAULT_RIDGE,
            ridge_mode: RidgeMode::Relative,
            gain: DEFAULT_GAIN,
            current_scale: None,
            offset_half_width: 1.0,
            random_low: DEFAULT_INITIAL_CONDUCTANCE,
            random_high: 50.0 * DEFAULT_INITIAL_CONDUCTANCE,
            g_init: DEFAULT_INITIAL_CONDUCTANCE,
            read_period: 0.0,
            threshold: MNIST_THRESHOLD,
            column: 0,
            batch: 1000,
            data_dir: PathBuf::from("data/mnist"),
            device: DeviceParams::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl ExperimentConfig {
    /// Parses `key=value` lines on top of the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "task" => self.task = v.parse()?,
            "architecture" => self.architecture = v.parse()?,
            "first_layer" => self.first_layer = v.parse()?,
            "sweep" => self.sweep = v.parse()?,
            "grid" => {
                self.grid = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "repeats" => self.repeats = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "presentations" => self.presentations = parse_num(key, v)?,
            "period" => self.period = parse_num(key, v)?,
            "wait" => self.wait = parse_num(key, v)?,
            "n_train" => self.n_train = parse_num(key, v)?,
            "n_test" => self.n_test = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "noise" => self.noise = parse_num(key, v)?,
            "cv" => self.cv = parse_num(key, v)?,
            "ridge" => self.ridge = parse_num(key, v)?,
            "ridge_mode" => self.ridge_mode = v.parse()?,
            "gain" => self.gain = parse_num(key, v)?,
            "current_scale" => {
                self.current_scale = if v == "auto" { None } else { Some(parse_num(key, v)?) }
            }
            "offset_half_width" => self.offset_half_width = parse_num(key, v)?,
            "random_low" => self.random_low = parse_num(key, v)?,
            "random_high" => self.random_high = parse_num(key, v)?,
            "g_init" => self.g_init = parse_num(key, v)?,
            "read_period" => self.read_period = parse_num(key, v)?,
            "threshold" => self.threshold = parse_num(key, v)?,
            "column" => self.column = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "efficiency" => self.device.efficiency = parse_num(key, v)?,
            "g_max" => self.device.g_max = parse_num(key, v)?,
            "tau_prefactor" => self.device.tau_prefactor = parse_num(key, v)?,
            "tau_exponent" => self.device.tau_exponent = parse_num(key, v)?,
            "v_threshold" => self.device.v_threshold = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.sweep != SweepAxis::None && self.grid.is_empty() {
            return bad(format!("sweep over {} needs a non-empty grid", self.sweep));
        }
        if self.grid.iter().any(|g| !g.is_finite()) {
            return bad("grid values must be finite".into());
        }
        if self.architecture == Architecture::Simple && self.first_layer != FirstLayerMode::Imprinted {
            return bad("the simple architecture only supports first_layer=imprinted".into());
        }
        let non_negative = |x: f64| x >= 0.0;
        if self.period.is_nan() || self.period <= 0.0 || !non_negative(self.wait) || !non_negative(self.read_period) {
            return bad("period must be > 0, wait and read_period >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1]", self.noise));
        }
        if self.n_test == 0 {
            return bad("n_test must be >= 1".into());
        }
        if self.random_low > self.random_high {
            return bad("random_low exceeds random_high".into());
        }
        self.device
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// One `key=value` line per field, in a fixed order; [`ExperimentConfig::parse`]
    /// reads it back to an equal config.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        let grid = self.grid.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("task", self.task.to_string()),
            ("architecture", self.architecture.to_string()),
            ("first_layer", self.first_layer.to_string()),
            ("sweep", self.sweep.to_string()),
            ("grid", grid),
            ("repeats", self.repeats.to_string()),
            ("seed", self.seed.to_string()),
            ("presentations", self.presentations.to_string()),
            ("period", self.period.to_string()),
            ("wait", self.wait.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("hidden", self.hidden.to_string()),
            ("noise", self.noise.to_string()),
            ("cv", self.cv.to_string()),
            ("ridge", self.ridge.to_string()),
            ("ridge_mode", self.ridge_mode.to_string()),
            ("gain", self.gain.to_string()),
            ("current_scale", self.current_scale.map_or("auto".into(), |s| s.to_string())),
            ("offset_half_width", self.offset_half_width.to_string()),
            ("random_low", self.random_low.to_string()),
            ("random_high", self.random_high.to_string()),
            ("g_init", self.g_init.to_string()),
            ("read_period", self.read_period.to_string()),
            ("threshold", self.threshold.to_string()),
            ("column", self.column.to_string()),
            ("batch", self.batch.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("efficiency", self.device.efficiency.to_string()),
            ("g_max", self.device.g_max.to_string()),
            ("tau_prefactor", self.device.tau_prefactor.to_string()),
            ("tau_exponent", self.device.tau_exponent.to_string()),
            ("v_threshold", self.device.v_threshold.to_string()),
        ]
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_key_values() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Copy with the sweep parameter set to `value`.
    pub fn at(&self, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("sweep value {v} is not a count")))
            }
        };
        match self.sweep {
            SweepAxis::None => {}
            SweepAxis::Period => c.period = value,
            SweepAxis::Presentations => c.presentations = count(value)?,
            SweepAxis::Wait => c.wait = value,
            SweepAxis::Cv => c.cv = value,
            SweepAxis::Noise => c.noise = value,
            SweepAxis::Hidden => c.hidden = count(value)?,
            SweepAxis::NTrain => c.n_train = count(value)?,
            SweepAxis::NTest => c.n_test = count(value)?,
            SweepAxis::Ridge => c.ridge = value,
        }
        c.validate()?;
        Ok(c)
    }

    /// Grid of the sweep; a single `NaN`-free placeholder point when there is none.
    pub fn points(&self) -> Vec<f64> {
        if self.sweep == SweepAxis::None {
            vec![0.0]
        } else {
            self.grid.clone()
        }
    }

    pub fn elm_config(&self, seed: u64) -> ElmConfig {
        ElmConfig {
            mode: self.first_layer,
            hidden: self.hidden,
            presentations: self.presentations,
            period: self.period,
            wait: self.wait,
            n_train: self.n_train,
            noise: self.noise,
            cv: self.cv,
            device: self.device,
            g_init: self.g_init,
            gain: self.gain,
            current_scale: self.current_scale,
            offset_half_width: self.offset_half_width,
            random_range: (self.random_low, self.random_high),
            regularization: match self.ridge_mode {
                RidgeMode::Relative => Regularization::Relative(self.ridge),
                RidgeMode::Absolute => Regularization::Absolute(self.ridge),
            },
            seed,
            batch: self.batch,
            wrap: self.task == Task::Glyphs,
        }
    }

    /// MNIST directory: the environment override if set, else `data_dir`.
    pub fn resolved_data_dir(&self) -> PathBuf {
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.data_dir.clone())
    }
}

/// Train and test sets of a task.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: PatternSet,
    pub test: PatternSet,
}

impl TaskData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.task {
            Task::Glyphs => {
                let g = make_glyphs();
                Ok(TaskData { train: g.clone(), test: g })
            }
            Task::Mnist => {
                let dir = cfg.resolved_data_dir();
                Ok(TaskData {
                    train: load_mnist_with_threshold(&dir, Split::Train, cfg.threshold)?,
                    test: load_mnist_with_threshold(&dir, Split::Test, cfg.threshold)?,
                })
            }
        }
    }
}

/// Outcome of one single-crossbar run.
#[derive(Debug, Clone)]
pub struct SimpleRun {
    pub crossbar: Crossbar,
    pub register: SignatureRegister,
    pub accuracy: f64,
}

/// Imprints one column per class, waits, then trains and tests the register.
pub fn imprint_simple(cfg: &ExperimentConfig, data: &TaskData, seed: u64) -> Result<Crossbar> {
    let classes = data.train.classes;
    let var = VariabilitySpec::new(cfg.cv, stream(seed, Stream::Variability));
    let mut cb = Crossbar::build_with(data.train.pixels(), classes, &cfg.device, &var, cfg.g_init)?;
    let mut source = NoisySampler::new(&data.train, cfg.noise, stream(seed, Stream::Imprint))?;
    let epochs: Vec<(usize, usize)> = (0..classes).map(|c| (c, c)).collect();
    cb.run_imprint_phase(&epochs, cfg.presentations, cfg.period, &mut source)?;
    cb.wait(cfg.wait)?;
    Ok(cb)
}

pub fn run_simple(cfg: &ExperimentConfig, data: &TaskData, seed: u64) -> Result<SimpleRun> {
    let mut cb = imprint_simple(cfg, data, seed)?;
    let timing = ReadTiming {
        per_read: cfg.read_period,
    };
    let mut train = NoisySampler::new(&data.train, cfg.noise, stream(seed, Stream::TrainNoise))?;
    let register = train_register(&mut cb, &mut train, cfg.n_train, data.train.classes, timing)?;
    let mut test = NoisySampler::new(&data.test, cfg.noise, stream(seed, Stream::TestNoise))?;
    let accuracy = evaluate(&register, &mut cb, &mut test, cfg.n_test, timing)?;
    Ok(SimpleRun {
        crossbar: cb,
        register,
        accuracy,
    })
}

/// Outcome of one ELM run.
#[derive(Debug, Clone)]
pub struct ElmRun {
    pub system: ElmSystem,
    pub accuracy: f64,
}

pub fn run_elm(cfg: &ExperimentConfig, data: &TaskData, seed: u64) -> Result<ElmRun> {
    let system = train_elm(&cfg.elm_config(seed), &data.train)?;
    let wrap = cfg.task == Task::Glyphs;
    let accuracy = evaluate_elm(&system.model, &data.test, cfg.n_test, cfg.noise, seed, wrap)?;
    Ok(ElmRun { system, accuracy })
}

/// Test accuracy of one run of `cfg` under `seed`.
pub fn run_point(cfg: &ExperimentConfig, data: &TaskData, seed: u64) -> Result<f64> {
    match cfg.architecture {
        Architecture::Simple => run_simple(cfg, data, seed).map(|r| r.accuracy),
        Architecture::Elm => run_elm(cfg, data, seed).map(|r| r.accuracy),
    }
}

/// Seed of repeat `repeat` at sweep value `value`. Keyed by the value itself so
/// inserting grid points never changes existing points.
pub fn point_seed(base: u64, value: f64, repeat: usize) -> u64 {
    derive(derive(base, value.to_bits()), repeat as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub point: usize,
    pub value: f64,
    pub repeat: usize,
    pub accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub value: f64,
    pub mean: f64,
    /// Sample standard deviation (zero for a single repeat).
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    /// Sorted by (grid point, repeat).
    pub rows: Vec<SweepRow>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

impl SweepResult {
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let points = self.rows.iter().map(|r| r.point).max().map_or(0, |p| p + 1);
        (0..points)
            .filter_map(|p| {
                let acc: Vec<f64> = self.rows.iter().filter(|r| r.point == p).map(|r| r.accuracy).collect();
                let value = self.rows.iter().find(|r| r.point == p)?.value;
                let (mean, std) = mean_std(&acc);
                Some(Aggregate { value, mean, std })
            })
            .collect()
    }

    /// Results CSV: `#` header with every config field, per-repeat rows, then
    /// `mean` and `std` aggregate rows per grid point. Contains no timings, so
    /// reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.config.to_key_values() {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str("sweep_value,repeat,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.value, r.repeat, r.accuracy);
        }
        for a in self.aggregates() {
            let _ = writeln!(s, "{},mean,{}", a.value, a.mean);
            let _ = writeln!(s, "{},std,{}", a.value, a.std);
        }
        s
    }

    /// Per-run wall-clock times, kept apart from the results.
    pub fn timings_csv(&self) -> String {
        let mut s = String::from("sweep_value,repeat,wall_seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.3}", r.value, r.repeat, r.wall_seconds);
        }
        s
    }

    /// Writes `results.csv` and `timings.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("results.csv"), self.to_csv().as_bytes())?;
        write_file(&dir.join("timings.csv"), self.timings_csv().as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

/// Runs every (grid point, repeat) pair on the current rayon pool.
pub fn run_sweep(cfg: &ExperimentConfig, data: &TaskData) -> Result<SweepResult> {
    cfg.validate()?;
    let points = cfg.points();
    let jobs: Vec<(usize, f64, usize)> = points
        .iter()
        .enumerate()
        .flat_map(|(p, &v)| (0..cfg.repeats).map(move |r| (p, v, r)))
        .collect();
    let configs: Vec<ExperimentConfig> = points.iter().map(|&v| cfg.at(v)).collect::<Result<_>>()?;
    let rows = jobs
        .par_iter()
        .map(|&(point, value, repeat)| {
            let start = Instant::now();
            let accuracy = run_point(&configs[point], data, point_seed(cfg.seed, value, repeat))?;
            log::info!("{}={value} repeat {repeat}: accuracy {accuracy}", cfg.sweep);
            Ok(SweepRow {
                point,
                value,
                repeat,
                accuracy,
                wall_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        config: cfg.clone(),
        rows,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// `run_sweep` on a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(cfg: &ExperimentConfig, data: &TaskData, threads: usize) -> Result<SweepResult> {
    with_threads(threads, || run_sweep(cfg, data))?
}

/// One column's conductances reshaped to a `height x width` image.
pub fn emit_conductance_map(cb: &Crossbar, column: usize, width: usize, height: usize) -> Result<Vec<Vec<f64>>> {
    if column >= cb.cols() {
        return Err(Error::OutOfRange {
            index: column,
            limit: cb.cols(),
        });
    }
    if width * height != cb.rows() {
        return Err(Error::ShapeMismatch {
            expected: cb.rows(),
            actual: width * height,
        });
    }
    Ok((0..height)
        .map(|y| (0..width).map(|x| cb.conductance(y * width + x, column)).collect())
        .collect())
}

pub fn image_csv(image: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in image {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Writes the header block plus a single-run results table.
pub fn single_run_csv(cfg: &ExperimentConfig, seed: u64, accuracy: f64) -> String {
    let mut c = cfg.clone();
    c.seed = seed;
    c.sweep = SweepAxis::None;
    SweepResult {
        config: c,
        rows: vec![SweepRow {
            point: 0,
            value: 0.0,
            repeat: 0,
            accuracy,
            wall_seconds: 0.0,
        }],
    }
    .to_csv()
}

/// Artifacts of the `simple` command: results, register and per-column maps.
pub fn write_simple_outputs(dir: &Path, cfg: &ExperimentConfig, data: &TaskData, run: &SimpleRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("results.csv"), single_run_csv(cfg, cfg.seed, run.accuracy).as_bytes())?;
    let mut reg = Vec::new();
    run.register.write_csv(&mut reg).map_err(|e| Error::io(dir.join("register.csv"), e))?;
    write_file(&dir.join("register.csv"), &reg)?;
    for c in 0..run.crossbar.cols() {
        let img = emit_conductance_map(&run.crossbar, c, data.train.width, data.train.height)?;
        write_file(&dir.join(format!("conductance_col{c}.csv")), image_csv(&img).as_bytes())?;
    }
    Ok(())
}

/// Chooses the output directory: explicit, else `out` under the working dir.
pub fn output_dir(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_defaults_and_overrides() {
        let cfg = ExperimentConfig::parse(
            "# comment\n\ntask = glyphs\nsweep=period\ngrid=2e-4, 4e-4\nrepeats=3\ncurrent_scale=auto\n",
        )
        .unwrap();
        assert_eq!(cfg.sweep, SweepAxis::Period);
        assert_eq!(cfg.grid, vec![2e-4, 4e-4]);
        assert_eq!(cfg.repeats, 3);
        assert_eq!(cfg.current_scale, None);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(ExperimentConfig::parse("bogus=1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("repeats"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("repeats=x"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("repeats=0"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("sweep=cv"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("task=cifar"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("first_layer=random"), Err(Error::Config(_))));
    }

    #[test]
    fn serialize_round_trips() {
        let cfg = ExperimentConfig {
            task: Task::Mnist,
            architecture: Architecture::Elm,
            first_layer: FirstLayerMode::Random,
            sweep: SweepAxis::Hidden,
            grid: vec![50.0, 100.0],
            current_scale: Some(1.25e-4),
            period: 1.1e-3,
            seed: u64::MAX,
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::parse(&cfg.serialize()).unwrap(), cfg);
    }

    #[test]
    fn count_axes_reject_fractions() {
        let cfg = ExperimentConfig::parse("sweep=presentations\ngrid=10").unwrap();
        assert_eq!(cfg.at(20.0).unwrap().presentations, 20);
        assert!(cfg.at(2.5).is_err());
    }

    #[test]
    fn seeds_independent_of_grid_layout() {
        assert_eq!(point_seed(5, 4e-4, 2), point_seed(5, 4e-4, 2));
        assert_ne!(point_seed(5, 4e-4, 2), point_seed(5, 4e-4, 3));
        assert_ne!(point_seed(5, 4e-4, 2), point_seed(5, 2e-4, 2));
    }

    #[test]
    fn single_point_sweep_has_one_row() {
        let cfg = ExperimentConfig::parse("n_train=30\nn_test=30").unwrap();
        let data = TaskData::load(&cfg).unwrap();
        let res = run_sweep(&cfg, &data).unwrap();
        assert_eq!(res.rows.len(), 1);
        let csv = res.to_csv();
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], "sweep_value,repeat,accuracy");
        assert_eq!(body.len(), 4);
        assert!(body[1].starts_with("0,0,"));
    }

    #[test]
    fn header_reconstructs_config() {
        let cfg = ExperimentConfig::parse("sweep=period\ngrid=4e-4\nn_train=20\nn_test=20\nrepeats=2").unwrap();
        let data = TaskData::load(&cfg).unwrap();
        let csv = run_sweep(&cfg, &data).unwrap().to_csv();
        let header: String = csv
            .lines()
            .filter_map(|l| l.strip_prefix("# "))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(ExperimentConfig::parse(&header).unwrap(), cfg);
    }

    #[test]
    fn aggregates_match_rows() {
        let cfg = ExperimentConfig::parse("sweep=period\ngrid=2e-4,4e-3\nn_train=20\nn_test=40\nrepeats=3").unwrap();
        let data = TaskData::load(&cfg).unwrap();
        let res = run_sweep(&cfg, &data).unwrap();
        assert_eq!(res.rows.len(), 6);
        for (p, agg) in res.aggregates().iter().enumerate() {
            let acc: Vec<f64> = res.rows[p * 3..p * 3 + 3].iter().map(|r| r.accuracy).collect();
            let mean = acc.iter().sum::<f64>() / 3.0;
            assert!((agg.mean - mean).abs() < 1e-15);
        }
        assert!(res.rows.windows(2).all(|w| (w[0].point, w[0].repeat) < (w[1].point, w[1].repeat)));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = ExperimentConfig::parse("sweep=cv\ngrid=0,0.1\nn_train=20\nn_test=30\nrepeats=3").unwrap();
        let data = TaskData::load(&cfg).unwrap();
        let a = run_sweep_with_threads(&cfg, &data, 1).unwrap().to_csv();
        let b = run_sweep_with_threads(&cfg, &data, 3).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_map_is_uniform() {
        let cb = Crossbar::build(36, 3, &DeviceParams::default(), &VariabilitySpec::uniform()).unwrap();
        let img = emit_conductance_map(&cb, 1, 6, 6).unwrap();
        assert_eq!(img.len(), 6);
        assert!(img.iter().flatten().all(|&g| g == DEFAULT_INITIAL_CONDUCTANCE));
        assert!(emit_conductance_map(&cb, 3, 6, 6).is_err());
        assert!(emit_conductance_map(&cb, 0, 5, 6).is_err());
    }

    #[test]
    fn imprinted_glyph_map_contrast() {
        let cfg = ExperimentConfig::default();
        let data = TaskData::load(&cfg).unwrap();
        let cb = imprint_simple(&cfg, &data, 1).unwrap();
        for (c, (glyph, _)) in data.train.items.iter().enumerate() {
            let img = emit_conductance_map(&cb, c, 6, 6).unwrap();
            let on: Vec<f64> = glyph.active_indices().iter().map(|&i| img[i / 6][i % 6]).collect();
            let off_max = (0..36)
                .filter(|i| !glyph.bits()[*i])
                .map(|i| img[i / 6][i % 6])
                .fold(0.0, f64::max);
            assert!(on.iter().all(|&g| g >= 10.0 * off_max), "column {c}");
        }
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn float_fields_round_trip(period in 1e-6f64..1e-2, cv in 0.0f64..0.5, noise in 0.0f64..=1.0) {
            let cfg = ExperimentConfig { period, cv, noise, ..Default::default() };
            prop_assert_eq!(ExperimentConfig::parse(&cfg.serialize()).unwrap(), cfg);
        }
    }
}
