//! Single-crossbar classifier: class-conditional mean read currents are kept in
//! a register and a test image is assigned to the class whose stored signature
//! is nearest in L1 distance.

use std::io::Write;

use crate::crossbar::{write_csv_row, ConductanceMap, Crossbar};
use crate::dataset::PatternSource;
use crate::error::{check_len, Error, Result};

/// `classes x outputs` running means of read currents (A).
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureRegister {
    classes: usize,
    outputs: usize,
    means: Vec<f64>,
    counts: Vec<usize>,
}

impl SignatureRegister {
    pub fn new(classes: usize, outputs: usize) -> Self {
        SignatureRegister {
            classes,
            outputs,
            means: vec![0.0; classes * outputs],
            counts: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn signature(&self, class: usize) -> &[f64] {
        &self.means[class * self.outputs..(class + 1) * self.outputs]
    }

    /// Folds one read into the running mean of `class`.
    pub fn observe(&mut self, class: usize, currents: &[f64]) -> Result<()> {
        if class >= self.classes {
            return Err(Error::OutOfRange {
                index: class,
                limit: self.classes,
            });
        }
        check_len(self.outputs, currents.len())?;
        self.counts[class] += 1;
        let n = self.counts[class] as f64;
        let row = &mut self.means[class * self.outputs..(class + 1) * self.outputs];
        for (m, &i) in row.iter_mut().zip(currents) {
            *m += (i - *m) / n;
        }
        Ok(())
    }

    /// Summed absolute difference between the stored signature of `class` and `currents`.
    pub fn distance(&self, class: usize, currents: &[f64]) -> f64 {
        self.signature(class)
            .iter()
            .zip(currents)
            .map(|(m, i)| (m - i).abs())
            .sum()
    }

    /// Class minimizing the L1 distance; ties go to the lowest index.
    pub fn classify(&self, currents: &[f64]) -> Result<usize> {
        check_len(self.outputs, currents.len())?;
        if let Some(c) = self.counts.iter().position(|&n| n == 0) {
            return Err(Error::UntrainedClass(c));
        }
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for c in 0..self.classes {
            let e = self.distance(c, currents);
            if e < best_err {
                best = c;
                best_err = e;
            }
        }
        Ok(best)
    }

    /// `classes` lines of `outputs` currents in amperes.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for c in 0..self.classes {
            write_csv_row(w, self.signature(c))?;
        }
        Ok(())
    }
}

/// Read timing used while the register is trained and tested.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReadTiming {
    /// Clock advance after every read (s). Zero freezes the clock.
    pub per_read: f64,
}

fn read(cb: &mut Crossbar, map: &Option<ConductanceMap>, img: &crate::dataset::Pattern, timing: ReadTiming) -> Result<Vec<f64>> {
    match map {
        Some(m) => m.read_currents(img),
        None => {
            let i = cb.read_currents(img)?;
            cb.wait(timing.per_read)?;
            Ok(i)
        }
    }
}

fn frozen(cb: &Crossbar, timing: ReadTiming) -> Option<ConductanceMap> {
    (timing.per_read == 0.0).then(|| cb.snapshot())
}

/// Presents `n` noisy training examples in read mode and averages the output
/// currents per true class.
pub fn train_register<S: PatternSource + ?Sized>(
    cb: &mut Crossbar,
    source: &mut S,
    n: usize,
    classes: usize,
    timing: ReadTiming,
) -> Result<SignatureRegister> {
    let mut reg = SignatureRegister::new(classes, cb.cols());
    let map = frozen(cb, timing);
    for _ in 0..n {
        let (img, label) = source.next_labeled()?;
        let currents = read(cb, &map, &img, timing)?;
        reg.observe(label, &currents)?;
    }
    Ok(reg)
}

/// Fraction of `k` noisy test examples classified correctly.
pub fn evaluate<S: PatternSource + ?Sized>(
    reg: &SignatureRegister,
    cb: &mut Crossbar,
    source: &mut S,
    k: usize,
    timing: ReadTiming,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("evaluation needs at least one test example"));
    }
    let map = frozen(cb, timing);
    let mut correct = 0usize;
    for _ in 0..k {
        let (img, label) = source.next_labeled()?;
        let currents = read(cb, &map, &img, timing)?;
        if reg.classify(&currents)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossbar::VariabilitySpec;
    use crate::dataset::{make_glyphs, NoisySampler, NoisySequence};
    use crate::device::DeviceParams;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn one_example_per_class_is_stored_verbatim() {
        let mut reg = SignatureRegister::new(3, 3);
        let rows = [[1.0, 2.0, 3.0], [0.5, 0.0, 7.0], [4.0, 4.0, 4.0]];
        for (c, r) in rows.iter().enumerate() {
            reg.observe(c, r).unwrap();
        }
        for (c, r) in rows.iter().enumerate() {
            assert_eq!(reg.signature(c), r);
            assert_eq!(reg.classify(r).unwrap(), c);
            assert_eq!(reg.distance(c, r), 0.0);
        }
    }

    #[test]
    fn hand_evaluated_distance() {
        let mut reg = SignatureRegister::new(2, 2);
        reg.observe(0, &[1e-6, 0.0]).unwrap();
        reg.observe(1, &[0.0, 1e-6]).unwrap();
        let test = [0.9e-6, 0.2e-6];
        assert_relative_eq!(reg.distance(0, &test), 0.3e-6, max_relative = 1e-12);
        assert_relative_eq!(reg.distance(1, &test), 1.7e-6, max_relative = 1e-12);
        assert_eq!(reg.classify(&test).unwrap(), 0);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let mut reg = SignatureRegister::new(3, 1);
        reg.observe(0, &[2.0]).unwrap();
        reg.observe(1, &[0.0]).unwrap();
        reg.observe(2, &[0.0]).unwrap();
        assert_eq!(reg.classify(&[1.0]).unwrap(), 0);
        assert_eq!(reg.classify(&[0.0]).unwrap(), 1);
    }

    #[test]
    fn untrained_row_is_an_error() {
        let mut reg = SignatureRegister::new(2, 2);
        reg.observe(0, &[1.0, 1.0]).unwrap();
        assert!(matches!(reg.classify(&[1.0, 1.0]), Err(Error::UntrainedClass(1))));
        assert!(reg.observe(2, &[0.0, 0.0]).is_err());
        assert!(reg.observe(0, &[0.0]).is_err());
    }

    fn glyph_crossbar(seed: u64) -> Crossbar {
        let set = make_glyphs();
        let mut cb = Crossbar::build(36, 3, &DeviceParams::default(), &VariabilitySpec::uniform()).unwrap();
        let mut src = NoisySampler::new(&set, 0.1, seed).unwrap();
        cb.run_imprint_phase(&[(0, 0), (1, 1), (2, 2)], 45, 4e-4, &mut src).unwrap();
        cb.wait(1.0).unwrap();
        cb
    }

    #[test]
    fn own_class_column_dominates_signature() {
        let set = make_glyphs();
        let mut cb = glyph_crossbar(3);
        let mut src = NoisySampler::new(&set, 0.1, 4).unwrap();
        let reg = train_register(&mut cb, &mut src, 100, 3, ReadTiming::default()).unwrap();
        assert_eq!(reg.total(), 100);
        for c in 0..3 {
            let row = reg.signature(c);
            let argmax = (0..3).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, c, "{row:?}");
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn noiseless_reads_classify_perfectly() {
        let set = make_glyphs();
        let mut cb = glyph_crossbar(8);
        let mut train = NoisySequence::new(&set, 0.0, 0).unwrap();
        let reg = train_register(&mut cb, &mut train, 3, 3, ReadTiming::default()).unwrap();
        let mut test = NoisySampler::new(&set, 0.0, 1).unwrap();
        let acc = evaluate(&reg, &mut cb, &mut test, 50, ReadTiming::default()).unwrap();
        assert_eq!(acc, 1.0);
        assert!(evaluate(&reg, &mut cb, &mut test, 0, ReadTiming::default()).is_err());
    }

    #[test]
    fn timed_reads_advance_the_clock() {
        let set = make_glyphs();
        let mut cb = glyph_crossbar(2);
        let t0 = cb.clock();
        let mut src = NoisySampler::new(&set, 0.1, 2).unwrap();
        let timing = ReadTiming { per_read: 1e-3 };
        let reg = train_register(&mut cb, &mut src, 20, 3, timing).unwrap();
        assert_relative_eq!(cb.clock() - t0, 20e-3, max_relative = 1e-9);
        assert!(evaluate(&reg, &mut cb, &mut src, 10, timing).unwrap() > 0.5);
    }

    proptest! {
        #[test]
        fn iterative_mean_matches_batch(values in prop::collection::vec(prop::collection::vec(0.0f64..1e-3, 4), 1..40)) {
            let mut reg = SignatureRegister::new(1, 4);
            for v in &values {
                reg.observe(0, v).unwrap();
            }
            for j in 0..4 {
                let batch = values.iter().map(|v| v[j]).sum::<f64>() / values.len() as f64;
                prop_assert!((reg.signature(0)[j] - batch).abs() <= 1e-12 * batch.max(1e-300));
            }
        }

        #[test]
        fn prediction_scale_invariant(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 3),
                                      test in prop::collection::vec(0.0f64..1.0, 3),
                                      k in prop::sample::select(vec![0.5f64, 2.0, 4.0, 1024.0])) {
            let mut a = SignatureRegister::new(3, 3);
            let mut b = SignatureRegister::new(3, 3);
            for (c, r) in rows.iter().enumerate() {
                a.observe(c, r).unwrap();
                b.observe(c, &r.iter().map(|x| x * k).collect::<Vec<_>>()).unwrap();
            }
            let scaled: Vec<f64> = test.iter().map(|x| x * k).collect();
            prop_assert_eq!(a.classify(&test).unwrap(), b.classify(&scaled).unwrap());
        }
    }
}
