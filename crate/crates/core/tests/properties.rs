use cdis_core::diffusion::{fit_adc, synthesize_signals};
use cdis_core::io::{raw_path, write_volume};
use cdis_core::mixing::mix;
use cdis_core::phantom::Ellipsoid;
use cdis_core::pipeline::{compare_modalities, prepare_case, Aggregation, CaseRecord};
use cdis_core::preprocess::{compute_breast_mask, label_components, otsu_threshold, select_slices};
use cdis_core::{
    auc, generate_phantom, nelder_mead, BValueList, Bounds, DwiVolume, MaskVolume, MixingConfig,
    NmConfig, PhantomSpec, ScalarVolume, Shape3, Unit,
};
use proptest::prelude::*;

fn shape(max_z: usize, max_yx: usize) -> impl Strategy<Value = Shape3> {
    (1..=max_z, 1..=max_yx, 1..=max_yx).prop_map(|(z, y, x)| Shape3::new(z, y, x).unwrap())
}

fn bvalues(max: usize) -> impl Strategy<Value = BValueList> {
    prop::collection::btree_set(0u32..3000, 1..=max)
        .prop_map(|s| BValueList::new(s.into_iter().map(f64::from).collect()).unwrap())
}

fn dwi(max_b: usize) -> impl Strategy<Value = DwiVolume> {
    (bvalues(max_b), shape(3, 6)).prop_flat_map(|(b, sh)| {
        prop::collection::vec(0.0f64..2000.0, b.len() * sh.len())
            .prop_map(move |d| DwiVolume::new(b.clone(), sh, d).unwrap())
    })
}

/// Small phantom with the tumour kept inside the breast.
fn phantom_spec() -> impl Strategy<Value = PhantomSpec> {
    (
        0u64..1000,
        0.0f64..30.0,
        0.5e-3f64..1.4e-3,
        (-1.0f64..1.0, -1.0f64..1.0),
    )
        .prop_map(|(seed, noise, adc_tumour, (dy, dx))| PhantomSpec {
            shape: Shape3::new(7, 24, 28).unwrap(),
            breast: Ellipsoid {
                center: [3.0, 12.0, 14.0],
                semi_axes: [3.0, 9.0, 11.0],
            },
            tumour: Ellipsoid {
                center: [3.0, 12.0 + 2.0 * dy, 14.0 + 2.0 * dx],
                semi_axes: [1.0, 2.5, 3.0],
            },
            adc_tumour,
            noise_sigma: noise,
            seed,
            ..PhantomSpec::default()
        })
}

/// Independent Otsu oracle: between-class variance at each interior edge,
/// class means computed straight from the values.
fn otsu_variance(values: &[f64], t: f64) -> f64 {
    let (lo, hi): (Vec<f64>, Vec<f64>) = values.iter().partition(|&&v| v <= t);
    if lo.is_empty() || hi.is_empty() {
        return 0.0;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let d = mean(&lo) - mean(&hi);
    lo.len() as f64 * hi.len() as f64 * d * d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn extract_b_slice_is_indexing(vol in dwi(5)) {
        let sh = vol.shape();
        for (ib, &b) in vol.bvalues().values().iter().enumerate() {
            let s = vol.extract_b_slice(b).unwrap();
            for z in 0..sh.nz {
                for y in 0..sh.ny {
                    for x in 0..sh.nx {
                        prop_assert_eq!(s.get(z, y, x), vol.get(ib, z, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn raw_size_is_shape_times_dtype(vol in dwi(4), sh in shape(3, 7)) {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("d");
        write_volume(&vol, &d).unwrap();
        let len = std::fs::metadata(raw_path(&d)).unwrap().len() as usize;
        prop_assert_eq!(len, vol.nb() * vol.shape().len() * 4);
        let m = dir.path().join("m");
        write_volume(&MaskVolume::zeros(sh), &m).unwrap();
        prop_assert_eq!(std::fs::metadata(raw_path(&m)).unwrap().len() as usize, sh.len());
    }

    #[test]
    fn phantom_masks_nested_and_deterministic(spec in phantom_spec()) {
        let a = generate_phantom(&spec).unwrap();
        prop_assert!(a.tumour_mask.is_subset_of(&a.breast_mask));
        let b = generate_phantom(&spec).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn noiseless_phantom_log_affine(mut spec in phantom_spec()) {
        spec.noise_sigma = 0.0;
        let p = generate_phantom(&spec).unwrap();
        let b = spec.bvalues.values();
        let n = spec.shape.len();
        for i in (0..n).filter(|&i| p.breast_mask.is_set(i)) {
            let l: Vec<f64> = (0..b.len()).map(|ib| p.dwi.slab(ib)[i].ln()).collect();
            let slope = (l[1] - l[0]) / (b[1] - b[0]);
            for ib in 2..b.len() {
                let predicted = l[0] + slope * (b[ib] - b[0]);
                prop_assert!((l[ib] - predicted).abs() <= 1e-9 * l[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn select_slices_idempotent(vol in dwi(3), target in 1usize..=3) {
        prop_assume!(vol.shape().nz >= target);
        let once = select_slices(&vol, target).unwrap();
        prop_assert_eq!(once.shape().nz, target);
        prop_assert_eq!(select_slices(&once, target).unwrap(), once);
    }

    #[test]
    fn otsu_maximizes_between_class_variance(
        values in prop::collection::vec(prop_oneof![0.0f64..10.0, 50.0f64..60.0, (0u8..4).prop_map(f64::from)], 2..300),
        n_bins in 2usize..=256,
    ) {
        let t = otsu_threshold(&values, n_bins).unwrap();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(min < max);
        let width = (max - min) / n_bins as f64;
        let best = (1..n_bins)
            .map(|k| otsu_variance(&values, min + k as f64 * width))
            .fold(0.0, f64::max);
        let got = otsu_variance(&values, t);
        prop_assert!(got >= best * (1.0 - 1e-9), "threshold {t}: {got} < {best}");
    }

    #[test]
    fn breast_mask_single_component(spec in phantom_spec()) {
        let p = generate_phantom(&spec).unwrap();
        let mask = compute_breast_mask(&p.dwi).unwrap();
        prop_assert_eq!(label_components(&mask).1.len(), 1);
    }

    #[test]
    fn fit_recovers_and_scales(
        s0 in 1.0f64..5000.0,
        adc in 0.0f64..3e-3,
        c in 0.01f64..100.0,
        b in bvalues(6),
    ) {
        prop_assume!(b.len() >= 2);
        let one = Shape3::new(1, 1, 1).unwrap();
        let sig: Vec<f64> = b.values().iter().map(|bv| s0 * (-bv * adc).exp()).collect();
        let fit = fit_adc(&DwiVolume::new(b.clone(), one, sig.clone()).unwrap(), 0.8, 1e-6).unwrap();
        prop_assert!((fit.adc.data()[0] - adc).abs() <= 1e-9 * adc.max(1e-3));
        prop_assert!((fit.s0.data()[0] - s0).abs() <= 1e-9 * s0);
        prop_assert!((fit.r2.data()[0] - 1.0).abs() <= 1e-9);

        let scaled: Vec<f64> = sig.iter().map(|s| s * c).collect();
        let fit_c = fit_adc(&DwiVolume::new(b, one, scaled).unwrap(), 0.8, 1e-6).unwrap();
        prop_assert!((fit_c.adc.data()[0] - fit.adc.data()[0]).abs() <= 1e-9 * adc.max(1e-3));
        prop_assert!((fit_c.s0.data()[0] - c * fit.s0.data()[0]).abs() <= 1e-9 * c * s0);
    }

    #[test]
    fn synthesized_signals_decrease(s0 in 1.0f64..5000.0, adc in 1e-5f64..3e-3, s_hat in bvalues(8)) {
        let one = Shape3::new(1, 1, 1).unwrap();
        let b = BValueList::new(vec![0.0, 800.0]).unwrap();
        let fit = fit_adc(
            &DwiVolume::new(b, one, vec![s0, s0 * (-800.0 * adc).exp()]).unwrap(),
            0.8,
            1e-6,
        )
        .unwrap();
        let out = synthesize_signals(&fit, &s_hat).unwrap();
        for w in out.data().windows(2) {
            prop_assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn mix_homogeneous_and_rank_preserving(
        signals in prop::collection::vec(0.1f64..1e4, 3 * 40),
        rho in prop::collection::vec(-3.0f64..3.0, 3),
        c in 0.01f64..100.0,
    ) {
        let sh = Shape3::new(1, 5, 8).unwrap();
        let b = BValueList::new(vec![0.0, 1.0, 2.0]).unwrap();
        let base = mix(&DwiVolume::new(b.clone(), sh, signals.clone()).unwrap(), &rho, 1e-6).unwrap();
        let scaled: Vec<f64> = signals.iter().map(|s| s * c).collect();
        let out = mix(&DwiVolume::new(b, sh, scaled).unwrap(), &rho, 1e-6).unwrap();
        let k = c.powf(rho.iter().sum());
        for (a, b) in base.data().iter().zip(out.data()) {
            prop_assert!((b - a * k).abs() <= 1e-9 * (a * k));
        }
        let labels: Vec<bool> = (0..sh.len()).map(|i| i % 3 == 0).collect();
        prop_assert_eq!(auc(base.data(), &labels).unwrap(), auc(out.data(), &labels).unwrap());
    }

    #[test]
    fn mix_always_finite(
        signals in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1e-300, 0.0f64..f32::MAX as f64], 4 * 6),
        rho in prop::collection::vec(-10.0f64..=10.0, 4),
    ) {
        let sh = Shape3::new(1, 2, 3).unwrap();
        let b = BValueList::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = mix(&DwiVolume::new(b, sh, signals).unwrap(), &rho, 1e-6).unwrap();
        prop_assert!(out.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn nelder_mead_contracts(
        dim in prop_oneof![Just(6usize), Just(8usize)],
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-12.0..12.0)).collect();
        let weights: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..10.0)).collect();
        let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..=10.0)).collect();
        let f = |x: &[f64]| x.iter().zip(&center).zip(&weights).map(|((a, c), w)| w * (a - c).powi(2)).sum::<f64>();
        let bounds = Bounds::uniform(-10.0, 10.0, dim).unwrap();
        let cfg = NmConfig { max_iter: 300, ..NmConfig::default() };
        let a = nelder_mead(f, &x0, &bounds, &cfg).unwrap();
        prop_assert!(a.f_best <= f(&x0));
        prop_assert!(bounds.contains(&a.x_best));
        for w in a.trace.records.windows(2) {
            prop_assert!(w[1].best_f <= w[0].best_f);
        }
        let b = nelder_mead(f, &x0, &bounds, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn prepared_masks_binary_and_compare_deterministic(spec in phantom_spec(), hw in 8usize..40) {
        let case = CaseRecord::from_phantom("c", generate_phantom(&spec).unwrap());
        let prepared = match prepare_case(&case, 5, hw) {
            Ok(p) => p,
            // small outputs can lose the tumour entirely
            Err(_) => return Ok(()),
        };
        for m in [&prepared.tumour_mask, &prepared.breast_mask] {
            prop_assert!(m.data().iter().all(|&v| v <= 1));
        }
        let cases = [prepared];
        let run = || compare_modalities(
            &cases,
            &MixingConfig::unoptimized(),
            &MixingConfig::initial(),
            0.8,
            Aggregation::Pooled,
        );
        match (run(), run()) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "non-deterministic outcome"),
        }
    }
}

#[test]
fn constant_modality_scores_half() {
    let sh = Shape3::new(1, 4, 4).unwrap();
    let map = ScalarVolume::filled(sh, Unit::Signal, 3.0).unwrap();
    let tumour = MaskVolume::from_fn(sh, |_, y, _| y == 0);
    let breast = MaskVolume::from_fn(sh, |_, _, _| true);
    assert_eq!(
        cdis_core::delineation_auc(&map, &tumour, &breast).unwrap(),
        0.5
    );
}
