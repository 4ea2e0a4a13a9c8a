//! An `rows x cols` grid of ECM cells sharing one simulation clock.
//!
//! Rows are input lines (pixels), columns are output neurons. Device states are
//! lazy: a cell is only touched when it receives a spike, and its conductance
//! at the current clock is computed on read.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Pattern, PatternSource};
use crate::device::{DeviceParams, DeviceState, DEFAULT_INITIAL_CONDUCTANCE};
use crate::error::{check_len, Error, Result};

pub const DEFAULT_V_PROG: f64 = 0.42;
pub const DEFAULT_PULSE_WIDTH: f64 = 100e-6;
pub const DEFAULT_V_READ: f64 = 0.1;

/// Device-to-device variability: `U`, `A` and `a` are drawn from
/// `Normal(nominal, cv * nominal)`, resampled until physical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariabilitySpec {
    pub cv: f64,
    pub seed: u64,
}

impl VariabilitySpec {
    pub fn uniform() -> Self {
        VariabilitySpec { cv: 0.0, seed: 0 }
    }

    pub fn new(cv: f64, seed: u64) -> Self {
        VariabilitySpec { cv, seed }
    }
}

fn draw_positive<R: Rng>(rng: &mut R, dist: &Normal<f64>, upper: f64) -> f64 {
    loop {
        let x = dist.sample(rng);
        if x > 0.0 && x <= upper {
            return x;
        }
    }
}

/// Per-device parameters for an `n`-device array, in row-major device order.
pub fn sample_params(n: usize, nominal: &DeviceParams, var: &VariabilitySpec) -> Result<Vec<DeviceParams>> {
    nominal.validate()?;
    if !(var.cv >= 0.0 && var.cv.is_finite()) {
        return Err(Error::invalid(format!("coefficient of variation {} must be >= 0", var.cv)));
    }
    if var.cv == 0.0 {
        return Ok(vec![*nominal; n]);
    }
    let normal = |mu: f64| Normal::new(mu, var.cv * mu).expect("finite sigma");
    let u_dist = normal(nominal.efficiency);
    let a_dist = normal(nominal.g_max);
    let pre_dist = normal(nominal.tau_prefactor);
    let mut rng = ChaCha8Rng::seed_from_u64(var.seed);
    Ok((0..n)
        .map(|_| DeviceParams {
            efficiency: draw_positive(&mut rng, &u_dist, 1.0),
            g_max: draw_positive(&mut rng, &a_dist, f64::INFINITY),
            tau_prefactor: draw_positive(&mut rng, &pre_dist, f64::INFINITY),
            ..*nominal
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Crossbar {
    rows: usize,
    cols: usize,
    devices: Vec<DeviceState>,
    params: Vec<DeviceParams>,
    clock: f64,
    /// Programming pulse amplitude (V); metadata.
    pub v_prog: f64,
    /// Programming pulse width (s); metadata, spikes are instantaneous.
    pub pulse_width: f64,
    pub v_read: f64,
}

impl Crossbar {
    pub fn build(rows: usize, cols: usize, nominal: &DeviceParams, var: &VariabilitySpec) -> Result<Self> {
        Self::build_with(rows, cols, nominal, var, DEFAULT_INITIAL_CONDUCTANCE)
    }

    /// Like [`Crossbar::build`] with an explicit initial conductance.
    pub fn build_with(
        rows: usize,
        cols: usize,
        nominal: &DeviceParams,
        var: &VariabilitySpec,
        g_init: f64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("crossbar dimensions must be positive, got {rows}x{cols}")));
        }
        if !(g_init > 0.0 && g_init <= nominal.g_max) {
            return Err(Error::invalid(format!("initial conductance {g_init} outside (0, A]")));
        }
        if DEFAULT_V_PROG <= nominal.v_threshold {
            return Err(Error::invalid("programming amplitude does not exceed the device threshold"));
        }
        let params = sample_params(rows * cols, nominal, var)?;
        let devices = params
            .iter()
            .map(|p| DeviceState::new(g_init.min(p.g_max), 0.0, p))
            .collect();
        Ok(Crossbar {
            rows,
            cols,
            devices,
            params,
            clock: 0.0,
            v_prog: DEFAULT_V_PROG,
            pulse_width: DEFAULT_PULSE_WIDTH,
            v_read: DEFAULT_V_READ,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn params(&self) -> &[DeviceParams] {
        &self.params
    }

    pub fn device(&self, row: usize, col: usize) -> &DeviceState {
        &self.devices[row * self.cols + col]
    }

    pub fn device_params(&self, row: usize, col: usize) -> &DeviceParams {
        &self.params[row * self.cols + col]
    }

    /// Conductance of one cell at the current clock.
    pub fn conductance(&self, row: usize, col: usize) -> f64 {
        self.device(row, col).relaxed_unchecked(self.clock)
    }

    fn check_column(&self, column: usize) -> Result<()> {
        if column < self.cols {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                index: column,
                limit: self.cols,
            })
        }
    }

    /// One presentation slot of length `dt`: every cell at (active row,
    /// `column`) spikes at the current clock, then the clock advances by `dt`.
    pub fn imprint_pattern(&mut self, pixels: &Pattern, column: usize, dt: f64) -> Result<()> {
        self.check_column(column)?;
        check_len(self.rows, pixels.len())?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("presentation period must be positive, got {dt}")));
        }
        let t = self.clock;
        for (row, _) in pixels.bits().iter().enumerate().filter(|(_, &b)| b) {
            let k = row * self.cols + column;
            self.devices[k] = self.devices[k].spike_unchecked(t, &self.params[k]);
        }
        self.clock += dt;
        Ok(())
    }

    /// Imprints each `(column, class)` epoch with `n` noisy examples of the class.
    pub fn run_imprint_phase<S: PatternSource + ?Sized>(
        &mut self,
        epochs: &[(usize, usize)],
        n: usize,
        dt: f64,
        source: &mut S,
    ) -> Result<()> {
        for &(column, _) in epochs {
            self.check_column(column)?;
        }
        for &(column, class) in epochs {
            for _ in 0..n {
                let img = source.example_of(class)?;
                self.imprint_pattern(&img, column, dt)?;
            }
        }
        Ok(())
    }

    /// Spike-free interval of length `duration`.
    pub fn wait(&mut self, duration: f64) -> Result<()> {
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(Error::invalid(format!("wait period must be >= 0, got {duration}")));
        }
        self.clock += duration;
        Ok(())
    }

    /// Read-mode output currents `I_j = V_read * sum_i pixel_i * G_ij`.
    /// Does not advance the clock.
    pub fn read_currents(&self, pixels: &Pattern) -> Result<Vec<f64>> {
        check_len(self.rows, pixels.len())?;
        let mut out = vec![0.0; self.cols];
        for (row, _) in pixels.bits().iter().enumerate().filter(|(_, &b)| b) {
            let line = &self.devices[row * self.cols..(row + 1) * self.cols];
            for (acc, dev) in out.iter_mut().zip(line) {
                *acc += dev.relaxed_unchecked(self.clock);
            }
        }
        for v in &mut out {
            *v *= self.v_read;
        }
        Ok(out)
    }

    /// Replaces every conductance with an i.i.d. uniform draw from `[low, high]`,
    /// timestamped at the current clock.
    pub fn randomize<R: Rng>(&mut self, low: f64, high: f64, rng: &mut R) -> Result<()> {
        if !(low > 0.0 && high >= low) {
            return Err(Error::invalid(format!("bad conductance range [{low}, {high}]")));
        }
        let t = self.clock;
        for (dev, p) in self.devices.iter_mut().zip(&self.params) {
            let g = if high > low { rng.gen_range(low..=high) } else { low };
            *dev = DeviceState::new(g.min(p.g_max), t, p);
        }
        Ok(())
    }

    /// Frozen conductances at the current clock, for repeated reads.
    pub fn snapshot(&self) -> ConductanceMap {
        let t = self.clock;
        ConductanceMap {
            rows: self.rows,
            cols: self.cols,
            v_read: self.v_read,
            values: self.devices.iter().map(|d| d.relaxed_unchecked(t)).collect(),
        }
    }
}

/// Row-major `rows x cols` conductances (S) captured at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceMap {
    pub rows: usize,
    pub cols: usize,
    pub v_read: f64,
    pub values: Vec<f64>,
}

impl ConductanceMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Currents for an image given by its active rows; `out` must hold `cols` values.
    pub fn currents_into(&self, active: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &r in active {
            for (acc, g) in out.iter_mut().zip(self.row(r)) {
                *acc += g;
            }
        }
        for v in out.iter_mut() {
            *v *= self.v_read;
        }
    }

    pub fn read_currents(&self, pixels: &Pattern) -> Result<Vec<f64>> {
        check_len(self.rows, pixels.len())?;
        let mut out = vec![0.0; self.cols];
        self.currents_into(&pixels.active_indices(), &mut out);
        Ok(out)
    }

    /// CSV matrix, one line per input row, values in siemens.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for r in 0..self.rows {
            write_csv_row(w, self.row(r))?;
        }
        Ok(())
    }
}

pub(crate) fn write_csv_row<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        write!(w, "{v:e}")?;
    }
    w.write_all(b"\n")
}
