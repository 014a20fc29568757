//! Geometric standardization and threshold-derived breast masks.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::volume::{DwiVolume, MaskVolume, ScalarVolume, Shape3};

/// Volumes that can be cropped along z.
pub trait SliceWindow: Sized {
    fn nz(&self) -> usize;
    /// Keep slices `start..start + len`.
    fn crop_z(&self, start: usize, len: usize) -> Self;
}

fn crop_block<T: Copy>(data: &[T], shape: Shape3, start: usize, len: usize) -> Vec<T> {
    let s = shape.slice_len();
    data[start * s..(start + len) * s].to_vec()
}

impl SliceWindow for ScalarVolume {
    fn nz(&self) -> usize {
        self.shape().nz
    }

    fn crop_z(&self, start: usize, len: usize) -> Self {
        let sh = self.shape();
        let out = Shape3 { nz: len, ..sh };
        ScalarVolume::new(out, self.unit(), crop_block(self.data(), sh, start, len))
            .expect("cropped scalar volume keeps invariants")
    }
}

impl SliceWindow for MaskVolume {
    fn nz(&self) -> usize {
        self.shape().nz
    }

    fn crop_z(&self, start: usize, len: usize) -> Self {
        let sh = self.shape();
        let out = Shape3 { nz: len, ..sh };
        MaskVolume::new(out, crop_block(self.data(), sh, start, len))
            .expect("cropped mask keeps invariants")
    }
}

impl SliceWindow for DwiVolume {
    fn nz(&self) -> usize {
        self.shape().nz
    }

    fn crop_z(&self, start: usize, len: usize) -> Self {
        let sh = self.shape();
        let out = Shape3 { nz: len, ..sh };
        let data = (0..self.nb())
            .flat_map(|ib| crop_block(self.slab(ib), sh, start, len))
            .collect();
        DwiVolume::new(self.bvalues().clone(), out, data).expect("cropped dwi keeps invariants")
    }
}

/// Centered window of `target_nz` slices. An odd surplus drops the extra
/// slice from the high-index end.
pub fn select_slices<V: SliceWindow>(vol: &V, target_nz: usize) -> Result<V> {
    if target_nz == 0 {
        return Err(Error::validation("target slice count must be positive"));
    }
    let nz = vol.nz();
    if nz < target_nz {
        return Err(Error::InsufficientSlices {
            available: nz,
            requested: target_nz,
        });
    }
    let start = (nz - target_nz) / 2;
    Ok(vol.crop_z(start, target_nz))
}

/// Source coordinate for output index `i` under edge-aligned sampling.
#[inline]
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let c = source_coord(i, n_in, n_out);
            let i0 = (c.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, c - i0 as f64)
        })
        .collect()
}

fn resize_plane(
    src: &[f64],
    ny: usize,
    nx: usize,
    out_ny: usize,
    out_nx: usize,
    out: &mut Vec<f64>,
) {
    let ty = axis_taps(ny, out_ny);
    let tx = axis_taps(nx, out_nx);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            let a = src[y0 * nx + x0];
            let b = src[y0 * nx + x1];
            let c = src[y1 * nx + x0];
            let d = src[y1 * nx + x1];
            let v = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d);
            // a convex combination; clamp away rounding overshoot
            let lo = a.min(b).min(c).min(d);
            let hi = a.max(b).max(c).max(d);
            out.push(v.clamp(lo, hi));
        }
    }
}

fn check_dims(out_ny: usize, out_nx: usize) -> Result<()> {
    if out_ny == 0 || out_nx == 0 {
        return Err(Error::validation(format!(
            "resize target must be positive, got {out_ny}x{out_nx}"
        )));
    }
    Ok(())
}

/// Per-slice bilinear resize with corner pixel centers mapped onto corner
/// pixel centers.
pub fn resize_bilinear(vol: &ScalarVolume, out_ny: usize, out_nx: usize) -> Result<ScalarVolume> {
    check_dims(out_ny, out_nx)?;
    let sh = vol.shape();
    let mut data = Vec::with_capacity(sh.nz * out_ny * out_nx);
    for z in 0..sh.nz {
        resize_plane(vol.slice(z), sh.ny, sh.nx, out_ny, out_nx, &mut data);
    }
    ScalarVolume::new(Shape3::new(sh.nz, out_ny, out_nx)?, vol.unit(), data)
}

/// [`resize_bilinear`] applied to every b-index.
pub fn resize_dwi_bilinear(dwi: &DwiVolume, out_ny: usize, out_nx: usize) -> Result<DwiVolume> {
    check_dims(out_ny, out_nx)?;
    let sh = dwi.shape();
    let plane = sh.slice_len();
    let mut data = Vec::with_capacity(dwi.nb() * sh.nz * out_ny * out_nx);
    for ib in 0..dwi.nb() {
        let slab = dwi.slab(ib);
        for z in 0..sh.nz {
            resize_plane(
                &slab[z * plane..(z + 1) * plane],
                sh.ny,
                sh.nx,
                out_ny,
                out_nx,
                &mut data,
            );
        }
    }
    DwiVolume::new(
        dwi.bvalues().clone(),
        Shape3::new(sh.nz, out_ny, out_nx)?,
        data,
    )
}

/// Nearest-neighbour resize for masks, using the same edge-aligned mapping.
pub fn resize_mask_nearest(mask: &MaskVolume, out_ny: usize, out_nx: usize) -> Result<MaskVolume> {
    check_dims(out_ny, out_nx)?;
    let sh = mask.shape();
    let ys: Vec<usize> = (0..out_ny)
        .map(|i| (source_coord(i, sh.ny, out_ny).round() as usize).min(sh.ny - 1))
        .collect();
    let xs: Vec<usize> = (0..out_nx)
        .map(|i| (source_coord(i, sh.nx, out_nx).round() as usize).min(sh.nx - 1))
        .collect();
    let mut data = Vec::with_capacity(sh.nz * out_ny * out_nx);
    for z in 0..sh.nz {
        for &y in &ys {
            for &x in &xs {
                data.push(mask.data()[sh.index(z, y, x)]);
            }
        }
    }
    MaskVolume::new(Shape3::new(sh.nz, out_ny, out_nx)?, data)
}

/// Otsu threshold over an `n_bins` equal-width histogram on `[min, max]`.
///
/// Candidates are the interior bin edges; the returned edge maximizes the
/// between-class variance `w0 * w1 * (mu0 - mu1)^2` computed from the
/// actual values in each class, with ties going to the lower edge. Values
/// strictly above the threshold form the upper class.
pub fn otsu_threshold(values: &[f64], n_bins: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("otsu_threshold on empty input"));
    }
    if n_bins < 2 {
        return Err(Error::validation("otsu_threshold needs at least 2 bins"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("otsu_threshold input must be finite"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(min);
    }
    let width = (max - min) / n_bins as f64;
    let edge = |k: usize| min + k as f64 * width;

    let mut counts = vec![0usize; n_bins];
    let mut sums = vec![0.0f64; n_bins];
    for &v in values {
        // bin membership defined by the edges so it agrees with `v > edge(k)`
        let mut b = (((v - min) / width) as usize).min(n_bins - 1);
        while b > 0 && v <= edge(b) {
            b -= 1;
        }
        while b + 1 < n_bins && v > edge(b + 1) {
            b += 1;
        }
        counts[b] += 1;
        sums[b] += v;
    }

    let total_n = values.len() as f64;
    let total_sum: f64 = sums.iter().sum();
    let (mut n0, mut s0) = (0.0, 0.0);
    let mut best: Option<(f64, usize)> = None;
    for k in 1..n_bins {
        n0 += counts[k - 1] as f64;
        s0 += sums[k - 1];
        let n1 = total_n - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let mu0 = s0 / n0;
        let mu1 = (total_sum - s0) / n1;
        let var = n0 * n1 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(b, _)| var > b) {
            best = Some((var, k));
        }
    }
    Ok(best.map_or(min, |(_, k)| edge(k)))
}

const NEIGHBOURS_6: [(isize, isize, isize); 6] = [
    (-1, 0, 0),
    (1, 0, 0),
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, -1),
    (0, 0, 1),
];

fn neighbour(
    shape: Shape3,
    z: usize,
    y: usize,
    x: usize,
    d: (isize, isize, isize),
) -> Option<usize> {
    let nz = z as isize + d.0;
    let ny = y as isize + d.1;
    let nx = x as isize + d.2;
    if nz < 0 || ny < 0 || nx < 0 {
        return None;
    }
    let (nz, ny, nx) = (nz as usize, ny as usize, nx as usize);
    (nz < shape.nz && ny < shape.ny && nx < shape.nx).then(|| shape.index(nz, ny, nx))
}

/// Label 6-connected components; returns labels (0 = background) and the
/// size of each component (index `label - 1`).
pub fn label_components(mask: &MaskVolume) -> (Vec<u32>, Vec<usize>) {
    let sh = mask.shape();
    let mut labels = vec![0u32; sh.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..sh.len() {
        if !mask.is_set(start) || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let z = i / sh.slice_len();
            let y = (i / sh.nx) % sh.ny;
            let x = i % sh.nx;
            for d in NEIGHBOURS_6 {
                if let Some(j) = neighbour(sh, z, y, x, d) {
                    if mask.is_set(j) && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keep the largest 6-connected component (the first in raster order on ties).
pub fn largest_component(mask: &MaskVolume) -> MaskVolume {
    let (labels, sizes) = label_components(mask);
    let Some(keep) = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32 + 1)
    else {
        return MaskVolume::zeros(mask.shape());
    };
    let data = labels.iter().map(|&l| (l == keep) as u8).collect();
    MaskVolume::new(mask.shape(), data).expect("binary by construction")
}

/// Fill background regions of each z-slice that do not touch the slice
/// border (4-connected background).
pub fn fill_holes_per_slice(mask: &MaskVolume) -> MaskVolume {
    let sh = mask.shape();
    let mut data = mask.data().to_vec();
    let plane = sh.slice_len();
    let mut outside = vec![false; plane];
    let mut queue = VecDeque::new();
    for z in 0..sh.nz {
        let slice = &mut data[z * plane..(z + 1) * plane];
        outside.iter_mut().for_each(|o| *o = false);
        for y in 0..sh.ny {
            for x in 0..sh.nx {
                let border = y == 0 || x == 0 || y + 1 == sh.ny || x + 1 == sh.nx;
                let i = y * sh.nx + x;
                if border && slice[i] == 0 && !outside[i] {
                    outside[i] = true;
                    queue.push_back(i);
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / sh.nx, i % sh.nx);
            let mut visit = |j: usize| {
                if slice[j] == 0 && !outside[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - sh.nx);
            }
            if y + 1 < sh.ny {
                visit(i + sh.nx);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < sh.nx {
                visit(i + 1);
            }
        }
        for (v, &o) in slice.iter_mut().zip(&outside) {
            if !o {
                *v = 1;
            }
        }
    }
    MaskVolume::new(sh, data).expect("binary by construction")
}

/// Breast mask from the lowest-b volume: Otsu threshold, largest
/// 6-connected component, per-slice hole filling.
pub fn compute_breast_mask(dwi: &DwiVolume) -> Result<MaskVolume> {
    let reference = dwi.slab(0);
    let threshold = otsu_threshold(reference, 256)?;
    let data: Vec<u8> = reference.iter().map(|&v| (v > threshold) as u8).collect();
    let raw = MaskVolume::new(dwi.shape(), data)?;
    if raw.count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(fill_holes_per_slice(&largest_component(&raw)))
}
