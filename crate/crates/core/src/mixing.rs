//! Exponent-weighted multiplicative signal mixing (CDIs).
//!
//! `CDIs(x) = prod_i S_i(x)^rho_i` is evaluated as
//! `exp(sum_i rho_i * ln max(S_i(x), floor))`. Results above the largest
//! finite `f32` saturate to that value, so every output is storable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    fit_adc, synth_signal, synthesize_signals, AdcFitResult, DEFAULT_SIGNAL_FLOOR,
};
use crate::error::{Error, Result};
use crate::volume::{BValueList, DwiVolume, ScalarVolume, Unit};

/// Largest finite `f32`, the saturation ceiling of [`mix`].
pub const SATURATION: f64 = f32::MAX as f64;

#[inline]
fn saturating_exp(x: f64) -> f64 {
    if x >= SATURATION.ln() {
        SATURATION
    } else {
        x.exp().min(SATURATION)
    }
}

#[inline]
pub fn log_signal(s: f64, signal_floor: f64) -> f64 {
    s.max(signal_floor).ln()
}

/// Mix one voxel from its log-signals.
#[inline]
pub fn mix_logs(log_signals: impl Iterator<Item = f64>, rho: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (l, r) in log_signals.zip(rho) {
        acc += r * l;
    }
    saturating_exp(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingConfig {
    pub s_hat: BValueList,
    pub rho: Vec<f64>,
    pub rho_bounds: (f64, f64),
    #[serde(default = "default_floor")]
    pub signal_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_SIGNAL_FLOOR
}

impl MixingConfig {
    pub const BOUNDS: (f64, f64) = (-10.0, 10.0);

    /// Tuned starting point: eight synthetic b-values from 50 to 7000.
    pub fn initial() -> Self {
        MixingConfig {
            s_hat: BValueList::new(vec![
                50.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0, 6000.0, 7000.0,
            ])
            .expect("static b-values"),
            rho: vec![
                1.6160, 1.5209, 1.2006, 0.8362, 1.1630, 0.8666, 1.1424, -0.4635,
            ],
            rho_bounds: Self::BOUNDS,
            signal_floor: DEFAULT_SIGNAL_FLOOR,
        }
    }

    /// Untuned baseline: unit exponents over b = 0, 1000, ..., 5000.
    pub fn unoptimized() -> Self {
        MixingConfig {
            s_hat: BValueList::new(vec![0.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0])
                .expect("static b-values"),
            rho: vec![1.0; 6],
            rho_bounds: Self::BOUNDS,
            signal_floor: DEFAULT_SIGNAL_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rho_bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::validation(format!(
                "rho bounds ({lo}, {hi}) are not an interval"
            )));
        }
        if self.rho.len() != self.s_hat.len() {
            return Err(Error::validation(format!(
                "{} rho values for {} synthetic b-values",
                self.rho.len(),
                self.s_hat.len()
            )));
        }
        if let Some(r) = self.rho.iter().find(|r| !(lo..=hi).contains(*r)) {
            return Err(Error::validation(format!(
                "rho {r} outside bounds [{lo}, {hi}]"
            )));
        }
        if !(self.signal_floor > 0.0 && self.signal_floor.is_finite()) {
            return Err(Error::validation("signal_floor must be positive"));
        }
        Ok(())
    }

    pub fn with_rho(&self, rho: Vec<f64>) -> Self {
        MixingConfig {
            rho,
            ..self.clone()
        }
    }
}

pub fn mix(signals: &DwiVolume, rho: &[f64], signal_floor: f64) -> Result<ScalarVolume> {
    if rho.len() != signals.nb() {
        return Err(Error::validation(format!(
            "{} rho values for {} signals",
            rho.len(),
            signals.nb()
        )));
    }
    if !(signal_floor > 0.0) {
        return Err(Error::validation("signal_floor must be positive"));
    }
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(Error::validation("rho must be finite"));
    }
    let n = signals.shape().len();
    let nb = signals.nb();
    let data = signals.data();
    let out: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            mix_logs(
                (0..nb).map(|ib| log_signal(data[ib * n + i], signal_floor)),
                rho,
            )
        })
        .collect();
    ScalarVolume::new(signals.shape(), Unit::Dimensionless, out)
}

/// Fit, synthesize at `config.s_hat`, mix. Voxels the fit rejects are 0.
pub fn compute_cdis(
    native: &DwiVolume,
    config: &MixingConfig,
    r2_min: f64,
) -> Result<ScalarVolume> {
    config.validate()?;
    let fit = fit_adc(native, r2_min, DEFAULT_SIGNAL_FLOOR)?;
    cdis_from_fit(&fit, config)
}

pub fn cdis_from_fit(fit: &AdcFitResult, config: &MixingConfig) -> Result<ScalarVolume> {
    config.validate()?;
    let synth = synthesize_signals(fit, &config.s_hat)?;
    let mixed = mix(&synth, &config.rho, config.signal_floor)?;
    let data = mixed
        .into_data()
        .into_iter()
        .enumerate()
        .map(|(i, v)| if fit.valid.is_set(i) { v } else { 0.0 })
        .collect();
    ScalarVolume::new(fit.adc.shape(), Unit::Dimensionless, data)
}

/// Log-signals at fixed synthetic b-values for a subset of voxels, so CDIs
/// can be re-mixed for many exponent vectors without refitting. Scores are
/// bit-identical to [`cdis_from_fit`] at the same voxels.
#[derive(Debug, Clone)]
pub struct LogSignalTable {
    n_hat: usize,
    logs: Vec<f64>,
    valid: Vec<bool>,
}

impl LogSignalTable {
    pub fn new(
        fit: &AdcFitResult,
        s_hat: &BValueList,
        signal_floor: f64,
        voxels: &[usize],
    ) -> Self {
        let b = s_hat.values();
        let (adc, s0) = (fit.adc.data(), fit.s0.data());
        let mut logs = Vec::with_capacity(voxels.len() * b.len());
        let mut valid = Vec::with_capacity(voxels.len());
        for &i in voxels {
            let ok = fit.valid.is_set(i);
            valid.push(ok);
            for &bv in b {
                let s = if ok {
                    synth_signal(s0[i], adc[i], bv)
                } else {
                    0.0
                };
                logs.push(log_signal(s, signal_floor));
            }
        }
        LogSignalTable {
            n_hat: b.len(),
            logs,
            valid,
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn scores(&self, rho: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rho.len(), self.n_hat);
        self.logs
            .chunks_exact(self.n_hat)
            .zip(&self.valid)
            .map(|(l, &ok)| {
                if ok {
                    mix_logs(l.iter().copied(), rho)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shape3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn column(values: &[f64]) -> DwiVolume {
        let b: Vec<f64> = (0..values.len()).map(|i| i as f64 * 100.0).collect();
        DwiVolume::new(
            BValueList::new(b).unwrap(),
            Shape3::new(1, 1, 1).unwrap(),
            values.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn plain_product() {
        let out = mix(&column(&[2.0, 4.0]), &[1.0, 1.0], 1e-6).unwrap();
        assert!((out.data()[0] - 8.0).abs() / 8.0 < 1e-12);
    }

    #[test]
    fn zero_rho_gives_one() {
        let out = mix(&column(&[3.0, 0.0, 1e9]), &[0.0; 3], 1e-6).unwrap();
        assert_eq!(out.data(), &[1.0]);
    }

    #[test]
    fn negative_exponent() {
        let out = mix(&column(&[4.0]), &[-1.0], 1e-6).unwrap();
        assert!((out.data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(mix(&column(&[4.0, 2.0]), &[1.0], 1e-6).is_err());
    }

    #[test]
    fn saturates_instead_of_overflowing() {
        let out = mix(&column(&[1e30, 1e30]), &[10.0, 10.0], 1e-6).unwrap();
        assert_eq!(out.data(), &[SATURATION]);
        let out = mix(&column(&[0.0, 1e30]), &[-10.0, 10.0], 1e-6).unwrap();
        assert_eq!(out.data(), &[SATURATION]);
    }

    #[test]
    fn matches_direct_power_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..2000 {
            let k = rng.random_range(1..=8);
            let s: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..2000.0)).collect();
            let rho: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let direct: f64 = s.iter().zip(&rho).map(|(s, r)| s.powf(*r)).product();
            let got = mix(&column(&s), &rho, 1e-6).unwrap().data()[0];
            if direct.is_finite() && direct < SATURATION && direct > f64::MIN_POSITIVE {
                assert!((got - direct).abs() / direct < 1e-9, "{got} vs {direct}");
            }
        }
    }

    #[test]
    fn homogeneity_under_scaling() {
        let s = [120.0, 45.0, 9.5];
        let rho = [1.3, -0.4, 0.8];
        let c: f64 = 3.7;
        let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
        let a = mix(&column(&s), &rho, 1e-6).unwrap().data()[0];
        let b = mix(&column(&scaled), &rho, 1e-6).unwrap().data()[0];
        let expected = a * c.powf(rho.iter().sum());
        assert!((b - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn default_configs_valid() {
        MixingConfig::initial().validate().unwrap();
        MixingConfig::unoptimized().validate().unwrap();
        let mut c = MixingConfig::initial();
        c.rho[0] = 11.0;
        assert!(c.validate().is_err());
        let mut c = MixingConfig::unoptimized();
        c.rho.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_shape() {
        let text = serde_json::to_string(&MixingConfig::unoptimized()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["rho_bounds"], serde_json::json!([-10.0, 10.0]));
        assert_eq!(v["s_hat"].as_array().unwrap().len(), 6);
        let back: MixingConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, MixingConfig::unoptimized());
    }

    fn decay_volume(s0: &[f64], adc: &[f64]) -> DwiVolume {
        let b = BValueList::new(vec![0.0, 100.0, 600.0, 800.0]).unwrap();
        let n = s0.len();
        let mut data = vec![0.0; 4 * n];
        for (ib, &bv) in b.values().iter().enumerate() {
            for i in 0..n {
                data[ib * n + i] = s0[i] * (-bv * adc[i]).exp();
            }
        }
        DwiVolume::new(b, Shape3::new(1, 1, n).unwrap(), data).unwrap()
    }

    #[test]
    fn cdis_unoptimized_closed_form() {
        let s0 = [900.0, 1000.0, 1100.0];
        let adc = [1.0e-3, 1.5e-3, 0.5e-3];
        let out =
            compute_cdis(&decay_volume(&s0, &adc), &MixingConfig::unoptimized(), 0.8).unwrap();
        for i in 0..3 {
            let expected = (6.0 * f64::ln(s0[i]) - 15000.0 * adc[i]).exp();
            assert!((out.data()[i] - expected).abs() / expected < 1e-9);
        }
    }

    #[test]
    fn cdis_single_factor_selects_s0() {
        let mut cfg = MixingConfig::unoptimized();
        cfg.rho = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let out = compute_cdis(&decay_volume(&[750.0], &[1.2e-3]), &cfg, 0.8).unwrap();
        assert!((out.data()[0] - 750.0).abs() / 750.0 < 1e-9);
    }

    #[test]
    fn cdis_saturates_at_upper_bound() {
        let mut cfg = MixingConfig::unoptimized();
        cfg.rho = vec![10.0; 6];
        let out = compute_cdis(&decay_volume(&[5e4], &[1e-5]), &cfg, 0.8).unwrap();
        assert_eq!(out.data(), &[SATURATION]);
    }

    #[test]
    fn table_scores_match_full_path() {
        let s0 = [900.0, 1000.0, 1100.0, 0.0];
        let adc = [1.0e-3, 1.5e-3, 0.5e-3, 0.0];
        let mut vol = decay_volume(&s0, &adc);
        // make the last voxel fail the fit
        let mut d = vol.data().to_vec();
        d[3] = 5.0;
        d[7] = 900.0;
        d[11] = 1.0;
        d[15] = 800.0;
        vol = DwiVolume::new(vol.bvalues().clone(), vol.shape(), d).unwrap();
        let fit = fit_adc(&vol, 0.8, DEFAULT_SIGNAL_FLOOR).unwrap();
        assert!(!fit.valid.is_set(3));
        let cfg = MixingConfig::initial();
        let full = cdis_from_fit(&fit, &cfg).unwrap();
        let table = LogSignalTable::new(&fit, &cfg.s_hat, cfg.signal_floor, &[0, 1, 2, 3]);
        assert_eq!(table.scores(&cfg.rho), full.data());
    }
}
