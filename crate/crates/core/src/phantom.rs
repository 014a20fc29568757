//! Seeded synthetic breast DWI phantoms with ground-truth masks.
//!
//! Each region follows mono-exponential decay `S(b) = S0 * exp(-b * ADC)`,
//! then Rician magnitude noise is applied. Noise draws come from ChaCha8
//! with the phantom seed as key and the voxel linear index as stream id, so
//! output does not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BValueList, DwiVolume, MaskVolume, Shape3};

/// Axis-aligned ellipsoid in voxel coordinates, `(z, y, x)` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let r: f64 = (0..3)
            .map(|k| ((p[k] - self.center[k]) / self.semi_axes[k]).powi(2))
            .sum();
        r <= 1.0
    }

    /// Sufficient test for `self ⊆ outer`: every corner of `self`'s bounding
    /// box lies inside `outer` (ellipsoids are convex).
    pub fn is_within(&self, outer: &Ellipsoid) -> bool {
        (0..8).all(|corner| {
            let mut p = [0.0; 3];
            for (k, pk) in p.iter_mut().enumerate() {
                let sign = if corner >> k & 1 == 1 { 1.0 } else { -1.0 };
                *pk = self.center[k] + sign * self.semi_axes[k];
            }
            outer.contains(p)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: Shape3,
    pub bvalues: BValueList,
    pub s0_tissue: f64,
    pub s0_background: f64,
    pub adc_tissue: f64,
    pub adc_tumour: f64,
    pub breast: Ellipsoid,
    pub tumour: Ellipsoid,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            shape: Shape3 {
                nz: 25,
                ny: 224,
                nx: 224,
            },
            bvalues: BValueList::new(vec![0.0, 100.0, 600.0, 800.0]).expect("static b-values"),
            s0_tissue: 1000.0,
            s0_background: 0.0,
            adc_tissue: 1.5e-3,
            adc_tumour: 1.1e-3,
            breast: Ellipsoid {
                center: [12.0, 112.0, 112.0],
                semi_axes: [10.5, 70.0, 92.0],
            },
            tumour: Ellipsoid {
                center: [12.0, 100.0, 128.0],
                semi_axes: [4.0, 12.0, 14.0],
            },
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        Shape3::new(self.shape.nz, self.shape.ny, self.shape.nx)?;
        if !(self.adc_tumour < self.adc_tissue) {
            return Err(Error::validation(format!(
                "adc_tumour ({}) must be below adc_tissue ({})",
                self.adc_tumour, self.adc_tissue
            )));
        }
        if !(self.adc_tumour >= 0.0) {
            return Err(Error::validation("adc values must be non-negative"));
        }
        if !(self.s0_tissue > 0.0) {
            return Err(Error::validation("s0_tissue must be positive"));
        }
        if !(self.s0_background >= 0.0 && self.s0_background.is_finite()) {
            return Err(Error::validation("s0_background must be non-negative"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation("noise_sigma must be non-negative"));
        }
        for e in [&self.breast, &self.tumour] {
            if e.semi_axes.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::validation("ellipsoid semi-axes must be positive"));
            }
        }
        if !self.tumour.is_within(&self.breast) {
            return Err(Error::validation(
                "tumour ellipsoid is not inside the breast",
            ));
        }
        Ok(())
    }

    /// `count` variants for a multi-case suite. Case `i` uses seed
    /// `seed + i` and a tumour displaced (and rescaled) by a draw from that
    /// seed, retried until it stays inside the breast.
    pub fn suite(&self, count: usize) -> Vec<PhantomSpec> {
        (0..count)
            .map(|i| {
                let seed = self.seed.wrapping_add(i as u64);
                let mut spec = self.clone();
                spec.seed = seed;
                if i == 0 {
                    return spec;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(u64::MAX);
                for _ in 0..64 {
                    let mut t = self.tumour;
                    for k in 0..3 {
                        let shift = self.breast.semi_axes[k] * 0.25;
                        t.center[k] += rng.random_range(-shift..=shift);
                        t.semi_axes[k] *= rng.random_range(0.8..=1.2);
                    }
                    if t.is_within(&self.breast) {
                        spec.tumour = t;
                        break;
                    }
                }
                spec
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub dwi: DwiVolume,
    pub breast_mask: MaskVolume,
    pub tumour_mask: MaskVolume,
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let shape = spec.shape;
    let pos = |z: usize, y: usize, x: usize| [z as f64, y as f64, x as f64];
    let breast_mask = MaskVolume::from_fn(shape, |z, y, x| spec.breast.contains(pos(z, y, x)));
    let tumour_mask = MaskVolume::from_fn(shape, |z, y, x| {
        let p = pos(z, y, x);
        spec.tumour.contains(p) && spec.breast.contains(p)
    });

    let b = spec.bvalues.values();
    let nb = b.len();
    let n = shape.len();
    // voxel-major scratch, transposed into (b, z, y, x) below
    let mut voxels = vec![0.0f64; n * nb];
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::validation(e.to_string()))?)
    } else {
        None
    };
    voxels.par_chunks_mut(nb).enumerate().for_each(|(i, out)| {
        let (s0, adc) = if tumour_mask.is_set(i) {
            (spec.s0_tissue, spec.adc_tumour)
        } else if breast_mask.is_set(i) {
            (spec.s0_tissue, spec.adc_tissue)
        } else {
            (spec.s0_background, spec.adc_tissue)
        };
        let mut rng = noise.map(|_| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(i as u64);
            r
        });
        for (ib, o) in out.iter_mut().enumerate() {
            let s = s0 * (-b[ib] * adc).exp();
            *o = match (&noise, rng.as_mut()) {
                (Some(dist), Some(r)) => {
                    let n1 = dist.sample(r);
                    let n2 = dist.sample(r);
                    ((s + n1) * (s + n1) + n2 * n2).sqrt()
                }
                _ => s,
            };
        }
    });

    let mut data = vec![0.0f64; n * nb];
    for (i, chunk) in voxels.chunks_exact(nb).enumerate() {
        for (ib, &v) in chunk.iter().enumerate() {
            data[ib * n + i] = v;
        }
    }
    Ok(Phantom {
        dwi: DwiVolume::new(spec.bvalues.clone(), shape, data)?,
        breast_mask,
        tumour_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec {
            shape: Shape3::new(9, 32, 40).unwrap(),
            breast: Ellipsoid {
                center: [4.0, 16.0, 20.0],
                semi_axes: [4.0, 13.0, 17.0],
            },
            tumour: Ellipsoid {
                center: [4.0, 14.0, 22.0],
                semi_axes: [2.0, 4.0, 5.0],
            },
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn noiseless_tissue_signal_matches_formula() {
        let spec = small();
        let p = generate_phantom(&spec).unwrap();
        // (4, 16, 10) is breast but not tumour
        assert!(p.breast_mask.is_set(spec.shape.index(4, 16, 10)));
        assert!(!p.tumour_mask.is_set(spec.shape.index(4, 16, 10)));
        let v = p.dwi.get(3, 4, 16, 10);
        assert!((v - 1000.0 * (-1.2f64).exp()).abs() < 1e-9);
        assert!((v - 301.194).abs() < 1e-3);
    }

    #[test]
    fn noiseless_b0_is_s0_inside_breast() {
        let spec = small();
        let p = generate_phantom(&spec).unwrap();
        for (i, &v) in p.dwi.slab(0).iter().enumerate() {
            if p.breast_mask.is_set(i) {
                assert_eq!(v, 1000.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn noiseless_log_signal_is_affine_in_b() {
        let p = generate_phantom(&small()).unwrap();
        let b = [0.0, 100.0, 600.0, 800.0];
        let n = small().shape.len();
        for i in (0..n).filter(|&i| p.breast_mask.is_set(i)) {
            let y: Vec<f64> = (0..4).map(|ib| p.dwi.data()[ib * n + i].ln()).collect();
            let slope = (y[3] - y[0]) / (b[3] - b[0]);
            for k in 1..3 {
                let pred = y[0] + slope * b[k];
                assert!((y[k] - pred).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = PhantomSpec {
            noise_sigma: 10.0,
            seed: 7,
            ..small()
        };
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&PhantomSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.dwi, c.dwi);
    }

    #[test]
    fn tumour_brighter_at_high_b_and_inside_breast() {
        let spec = PhantomSpec {
            noise_sigma: 10.0,
            seed: 3,
            ..small()
        };
        let p = generate_phantom(&spec).unwrap();
        assert!(p.tumour_mask.is_subset_of(&p.breast_mask));
        let slab = p.dwi.extract_b_slice(800.0).unwrap();
        let mean = |sel: &dyn Fn(usize) -> bool| {
            let v: Vec<f64> = (0..slab.data().len())
                .filter(|&i| sel(i))
                .map(|i| slab.data()[i])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let tumour = mean(&|i| p.tumour_mask.is_set(i));
        let tissue = mean(&|i| p.breast_mask.is_set(i) && !p.tumour_mask.is_set(i));
        assert!(tumour > tissue, "{tumour} <= {tissue}");
    }

    #[test]
    fn default_spec_produces_valid_volume() {
        let spec = PhantomSpec {
            noise_sigma: 20.0,
            ..PhantomSpec::default()
        };
        let p = generate_phantom(&spec).unwrap();
        assert_eq!(p.dwi.shape(), Shape3::new(25, 224, 224).unwrap());
        assert_eq!(p.dwi.nb(), 4);
        // re-validate through the checked constructor
        DwiVolume::new(
            p.dwi.bvalues().clone(),
            p.dwi.shape(),
            p.dwi.data().to_vec(),
        )
        .unwrap();
        assert!(p.tumour_mask.count() > 0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small();
        s.adc_tumour = s.adc_tissue;
        assert!(generate_phantom(&s).is_err());
        let mut s = small();
        s.tumour.center = [4.0, 3.0, 3.0];
        assert!(generate_phantom(&s).is_err());
        let mut s = small();
        s.noise_sigma = -1.0;
        assert!(generate_phantom(&s).is_err());
    }

    #[test]
    fn suite_variants_stay_valid() {
        let specs = PhantomSpec::default().suite(10);
        assert_eq!(specs.len(), 10);
        for (i, s) in specs.iter().enumerate() {
            assert_eq!(s.seed, i as u64);
            s.validate().unwrap();
        }
        assert_ne!(specs[1].tumour, specs[2].tumour);
        assert_eq!(
            PhantomSpec::default().suite(3),
            PhantomSpec::default().suite(3)
        );
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = small();
        let text = serde_json::to_string(&s).unwrap();
        let back: PhantomSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
