//! Per-voxel log-linear ADC fitting and synthetic signal acquisition.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{BValueList, DwiVolume, MaskVolume, ScalarVolume, Unit};

pub const DEFAULT_R2_MIN: f64 = 0.8;
pub const DEFAULT_SIGNAL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdcFitResult {
    pub adc: ScalarVolume,
    pub s0: ScalarVolume,
    pub r2: ScalarVolume,
    pub valid: MaskVolume,
}

/// OLS line through `(b, ln S)`, computed on deviations from the first
/// sample so constant input gives exactly zero slope and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelFit {
    pub adc: f64,
    pub s0: f64,
    pub r2: f64,
}

/// Precomputed design for a fixed b-value list.
#[derive(Debug, Clone)]
pub struct LogLinearDesign {
    centered_b: Vec<f64>,
    mean_b: f64,
    sxx: f64,
}

impl LogLinearDesign {
    pub fn new(bvalues: &BValueList) -> Result<Self> {
        let b = bvalues.values();
        if b.len() < 2 {
            return Err(Error::validation(format!(
                "ADC fit needs at least 2 b-values, got {}",
                b.len()
            )));
        }
        let mean_b = b.iter().sum::<f64>() / b.len() as f64;
        let centered_b: Vec<f64> = b.iter().map(|&v| v - mean_b).collect();
        let sxx = centered_b.iter().map(|d| d * d).sum();
        Ok(LogLinearDesign {
            centered_b,
            mean_b,
            sxx,
        })
    }

    /// Fit one voxel from its signals (one per b-value, in order).
    pub fn fit(&self, signals: impl Iterator<Item = f64>, signal_floor: f64) -> VoxelFit {
        let n = self.centered_b.len();
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if n <= y.len() {
            &mut y[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for (yi, s) in y.iter_mut().zip(signals) {
            *yi = s.max(signal_floor).ln();
        }
        let y0 = y[0];
        let mut mean_d = 0.0;
        for yi in y.iter_mut() {
            *yi -= y0;
            mean_d += *yi;
        }
        mean_d /= n as f64;

        let mut sxy = 0.0;
        let mut syy = 0.0;
        for (d, cb) in y.iter().zip(&self.centered_b) {
            let dy = d - mean_d;
            sxy += cb * dy;
            syy += dy * dy;
        }
        let slope = sxy / self.sxx;
        let intercept = y0 + mean_d - slope * self.mean_b;
        let r2 = if syy == 0.0 {
            1.0
        } else {
            let ss_res: f64 = y
                .iter()
                .zip(&self.centered_b)
                .map(|(d, cb)| {
                    let r = d - mean_d - slope * cb;
                    r * r
                })
                .sum();
            1.0 - ss_res / syy
        };
        VoxelFit {
            adc: -slope,
            s0: intercept.exp(),
            r2,
        }
    }
}

/// Fit `ln max(S(b), floor) = ln S0 - b * ADC` in every voxel.
///
/// A voxel is valid when `r2 >= r2_min`, `ADC >= 0` and the fit is finite.
/// Invalid voxels report `adc = 0` and `s0 = 0` (their `r2` is kept).
pub fn fit_adc(dwi: &DwiVolume, r2_min: f64, signal_floor: f64) -> Result<AdcFitResult> {
    if !(0.0..=1.0).contains(&r2_min) {
        return Err(Error::validation(format!(
            "r2_min must lie in [0, 1], got {r2_min}"
        )));
    }
    if !(signal_floor > 0.0 && signal_floor.is_finite()) {
        return Err(Error::validation("signal_floor must be positive"));
    }
    let design = LogLinearDesign::new(dwi.bvalues())?;
    let shape = dwi.shape();
    let n = shape.len();
    let nb = dwi.nb();
    let data = dwi.data();

    let fits: Vec<(f64, f64, f64, u8)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let f = design.fit((0..nb).map(|ib| data[ib * n + i]), signal_floor);
            let ok = f.r2 >= r2_min
                && f.adc >= 0.0
                && f.adc.is_finite()
                && f.s0 > 0.0
                && f.s0.is_finite();
            let r2 = if f.r2.is_finite() { f.r2 } else { 0.0 };
            if ok {
                (f.adc, f.s0, r2, 1)
            } else {
                (0.0, 0.0, r2, 0)
            }
        })
        .collect();

    let mut adc = Vec::with_capacity(n);
    let mut s0 = Vec::with_capacity(n);
    let mut r2 = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for (a, s, r, v) in fits {
        adc.push(a);
        s0.push(s);
        r2.push(r);
        valid.push(v);
    }
    Ok(AdcFitResult {
        adc: ScalarVolume::new(shape, Unit::AdcMm2PerS, adc)?,
        s0: ScalarVolume::new(shape, Unit::Signal, s0)?,
        r2: ScalarVolume::new(shape, Unit::Dimensionless, r2)?,
        valid: MaskVolume::new(shape, valid)?,
    })
}

/// Mono-exponential signal model.
#[inline]
pub fn synth_signal(s0: f64, adc: f64, b: f64) -> f64 {
    s0 * (-b * adc).exp()
}

impl AdcFitResult {
    pub fn check_shapes(&self) -> Result<()> {
        let sh = self.adc.shape();
        if self.s0.shape() != sh || self.r2.shape() != sh || self.valid.shape() != sh {
            return Err(Error::validation(
                "fit result volumes have inconsistent shapes",
            ));
        }
        Ok(())
    }
}

/// Signals at each `s_hat` b-value from the fitted model; invalid voxels
/// are 0 at every b-value.
pub fn synthesize_signals(fit: &AdcFitResult, s_hat: &BValueList) -> Result<DwiVolume> {
    fit.check_shapes()?;
    let shape = fit.adc.shape();
    let n = shape.len();
    let adc = fit.adc.data();
    let s0 = fit.s0.data();
    let mut data = vec![0.0f64; n * s_hat.len()];
    data.par_chunks_mut(n)
        .zip(s_hat.values().par_iter())
        .for_each(|(slab, &b)| {
            for (i, out) in slab.iter_mut().enumerate() {
                if fit.valid.is_set(i) {
                    *out = synth_signal(s0[i], adc[i], b);
                }
            }
        });
    DwiVolume::new(s_hat.clone(), shape, data)
}
