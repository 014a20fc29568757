//! 8-bit grayscale slice montages.

use std::str::FromStr;

use cdis_core::{Error, Result, ScalarVolume};

/// Intensity window mapping values onto 0..=255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    MinMax,
    /// Clip to the `lo`/`hi` percentiles (0..=100) of the rendered slices.
    Percentile {
        lo: f64,
        hi: f64,
    },
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "minmax" {
            return Ok(Window::MinMax);
        }
        let bad =
            || Error::Validation(format!("window {s:?}: expected minmax or percentile:P1,P2"));
        let rest = s.strip_prefix("percentile:").ok_or_else(bad)?;
        let (a, b) = rest.split_once(',').ok_or_else(bad)?;
        let lo: f64 = a.trim().parse().map_err(|_| bad())?;
        let hi: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return Err(bad());
        }
        Ok(Window::Percentile { lo, hi })
    }
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let t = pos - i as f64;
    sorted[i] + (sorted[j] - sorted[i]) * t
}

/// A rendered montage before PNG encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Montage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

/// Lay the chosen slices side by side, left to right. A zero-width
/// window maps every pixel to 0.
pub fn montage(vol: &ScalarVolume, slices: &[usize], window: Window) -> Result<Montage> {
    let shape = vol.shape();
    if slices.is_empty() {
        return Err(Error::Validation("no slices to render".into()));
    }
    if let Some(&z) = slices.iter().find(|&&z| z >= shape.nz) {
        return Err(Error::Validation(format!(
            "slice {z} out of range for {} slices",
            shape.nz
        )));
    }
    let values: Vec<f64> = slices
        .iter()
        .flat_map(|&z| vol.slice(z).iter().copied())
        .collect();
    let (lo, hi) = match window {
        Window::MinMax => values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            }),
        Window::Percentile { lo, hi } => {
            let mut sorted = values.clone();
            sorted.sort_unstable_by(f64::total_cmp);
            (percentile(&sorted, lo), percentile(&sorted, hi))
        }
    };
    let span = hi - lo;
    let level = |v: f64| -> u8 {
        if !(span > 0.0) {
            return 0;
        }
        ((v.clamp(lo, hi) - lo) / span * 255.0).round() as u8
    };

    let (ny, nx) = (shape.ny, shape.nx);
    let width = nx * slices.len();
    let mut pixels = vec![0u8; width * ny];
    for (k, &z) in slices.iter().enumerate() {
        let src = vol.slice(z);
        for y in 0..ny {
            let row = &mut pixels[y * width + k * nx..y * width + (k + 1) * nx];
            for (p, &v) in row.iter_mut().zip(&src[y * nx..(y + 1) * nx]) {
                *p = level(v);
            }
        }
    }
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| Error::Validation(format!("montage dimension {n} too large")))
    };
    Ok(Montage {
        width: dim(width)?,
        height: dim(ny)?,
        pixels,
    })
}

impl Montage {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width, self.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| Error::Validation(format!("png encoding: {e}"));
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&self.pixels).map_err(png_err)?;
        w.finish().map_err(png_err)?;
        Ok(out)
    }
}

pub fn render_montage(vol: &ScalarVolume, slices: &[usize], window: Window) -> Result<Vec<u8>> {
    montage(vol, slices, window)?.to_png()
}
