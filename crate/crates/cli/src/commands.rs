//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use cdis_core::diffusion::DEFAULT_SIGNAL_FLOOR;
use cdis_core::io::{read_dwi, read_mask, read_scalar};
use cdis_core::pipeline::{
    case_component, compare_modalities, config_hash, load_manifest, optimize_rho, prepare_cases,
    AucObjective, PreparedCase, SkippedCase,
};
use cdis_core::preprocess::compute_breast_mask;
use cdis_core::roc::{delineation_samples, roc_curve};
use cdis_core::{
    compute_cdis, fit_adc, generate_phantom, read_volume, synthesize_signals, write_volume,
    AdcFitResult, BValueList, Error, MaskVolume, MixingConfig, NmConfig, PhantomSpec, ScalarVolume,
    Unit, Volume,
};

use crate::render::render_montage;
use crate::{Cli, CliError, CliResult, Command, Geometry};

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.threads {
        None => dispatch(cli.command),
        Some(0) => Err(Error::Validation("--threads must be at least 1".into()).into()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Phantom {
            spec,
            out,
            count,
            seed,
        } => phantom(&spec, &out, count, seed),
        Command::Mask { dwi, out } => {
            let mask = compute_breast_mask(&read_dwi(&dwi)?)?;
            Ok(write_volume(&mask, &out)?)
        }
        Command::Adc {
            dwi,
            r2_min,
            out_prefix,
        } => {
            let fit = fit_adc(&read_dwi(&dwi)?, r2_min, DEFAULT_SIGNAL_FLOOR)?;
            write_volume(&fit.adc, case_component(&out_prefix, "adc"))?;
            write_volume(&fit.s0, case_component(&out_prefix, "s0"))?;
            write_volume(&fit.r2, case_component(&out_prefix, "r2"))?;
            write_volume(&fit.valid, case_component(&out_prefix, "valid"))?;
            Ok(())
        }
        Command::Synth {
            fit_prefix,
            s_hat,
            out,
        } => {
            let part = |p: &str| case_component(&fit_prefix, p);
            let fit = AdcFitResult {
                adc: read_scalar(part("adc"))?,
                s0: read_scalar(part("s0"))?,
                r2: read_scalar(part("r2"))?,
                valid: read_mask(part("valid"))?,
            };
            let synth = synthesize_signals(&fit, &BValueList::new(s_hat)?)?;
            Ok(write_volume(&synth, &out)?)
        }
        Command::Cdis {
            dwi,
            config,
            r2_min,
            out,
        } => {
            let config = match config {
                Some(p) => read_json(&p)?,
                None => MixingConfig::initial(),
            };
            let map = compute_cdis(&read_dwi(&dwi)?, &config, r2_min)?;
            Ok(write_volume(&map, &out)?)
        }
        Command::Auc {
            modality,
            tumour,
            breast,
            b,
            roc,
        } => {
            let map = match read_volume(&modality)? {
                Volume::Dwi(d) => d.extract_b_slice(b)?,
                v => as_scalar(v),
            };
            let (scores, labels) =
                delineation_samples(&map, &read_mask(&tumour)?, &read_mask(&breast)?)?;
            let curve = roc_curve(&scores, &labels)?;
            if let Some(path) = roc {
                let mut buf = Vec::new();
                curve.write_csv(&mut buf)?;
                write_file(&path, &buf)?;
            }
            println!("{:.4}", curve.auc);
            Ok(())
        }
        Command::Optimize {
            cases,
            config,
            nm,
            out,
            trace,
            holdout,
            run_manifest,
            scoring,
            geometry,
        } => {
            let initial: MixingConfig = read_json(&config)?;
            let nm: NmConfig = match nm {
                Some(p) => read_json(&p)?,
                None => NmConfig::default(),
            };
            nm.validate()?;
            let (prepared, skipped) = load_cases(&cases, &geometry)?;
            let outcome = optimize_rho(
                &prepared,
                &initial,
                &nm,
                scoring.r2_min,
                scoring.aggregation,
            )?;
            write_json(&out, &outcome.config)?;
            let mut buf = Vec::new();
            outcome.trace.write_csv(&mut buf)?;
            write_file(&trace, &buf)?;

            let last = outcome.trace.records.last();
            let mut summary = json!({
                "initial_auc": outcome.initial_auc,
                "final_auc": outcome.final_auc,
                "iterations": last.map_or(0, |r| r.iteration),
                "evaluations": last.map_or(0, |r| r.n_evals),
                "termination": outcome.trace.termination,
                "case_ids": prepared.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
                "skipped": skipped,
                "r2_min": scoring.r2_min,
                "aggregation": scoring.aggregation,
                "nm": nm,
                "initial_config_sha256": config_hash(&initial),
                "optimized_config_sha256": config_hash(&outcome.config),
            });
            if let Some(path) = holdout {
                let (held, held_skipped) = load_cases(&path, &geometry)?;
                let obj = AucObjective::new(&held, &initial, scoring.r2_min, scoring.aggregation)?;
                summary["holdout"] = json!({
                    "initial_auc": obj.evaluate(&initial.rho)?,
                    "final_auc": obj.evaluate(&outcome.config.rho)?,
                    "case_ids": held.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
                    "skipped": held_skipped,
                });
            }
            if let Some(path) = run_manifest {
                write_json(&path, &summary)?;
            }
            println!("{}", to_pretty(&summary));
            Ok(())
        }
        Command::Compare {
            cases,
            unopt,
            opt,
            out,
            json,
            scoring,
            geometry,
        } => {
            let unopt: MixingConfig = read_json(&unopt)?;
            let opt: MixingConfig = read_json(&opt)?;
            let (prepared, skipped) = load_cases(&cases, &geometry)?;
            let mut report =
                compare_modalities(&prepared, &unopt, &opt, scoring.r2_min, scoring.aggregation)?;
            report.notes.extend(
                skipped
                    .iter()
                    .map(|s| format!("case {} skipped: {}", s.id, s.reason)),
            );
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            write_file(&out, &buf)?;
            if let Some(path) = json {
                write_json(&path, &report)?;
            }
            for row in &report.rows {
                println!("{:<18} {:.4}  {}", row.modality, row.auc, row.note);
            }
            Ok(())
        }
        Command::Render {
            volume,
            out,
            slices,
            window,
            b,
        } => {
            let vol = match (read_volume(&volume)?, b) {
                (Volume::Dwi(d), Some(b)) => d.extract_b_slice(b)?,
                (Volume::Dwi(d), None) => d.lowest_b_slab(),
                (v, _) => as_scalar(v),
            };
            let nz = vol.shape().nz;
            let slices = slices.unwrap_or_else(|| {
                let mut s = vec![0, nz / 2, nz - 1];
                s.dedup();
                s
            });
            write_file(&out, &render_montage(&vol, &slices, window)?)
        }
    }
}

fn phantom(spec_path: &Path, out: &Path, count: usize, seed: Option<u64>) -> CliResult<()> {
    if count == 0 {
        return Err(Error::Validation("--count must be at least 1".into()).into());
    }
    let mut spec: PhantomSpec = read_json(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    fs::create_dir_all(out).map_err(|source| CliError::Write {
        path: out.to_path_buf(),
        source,
    })?;
    let mut stems = Vec::with_capacity(count);
    for (i, case_spec) in spec.suite(count).iter().enumerate() {
        let name = format!("case_{i:03}");
        let stem = out.join(&name);
        let p = generate_phantom(case_spec)?;
        write_volume(&p.dwi, case_component(&stem, "dwi"))?;
        write_volume(&p.tumour_mask, case_component(&stem, "tumour"))?;
        write_volume(&p.breast_mask, case_component(&stem, "breast_truth"))?;
        write_json(&case_component(&stem, "spec.json"), case_spec)?;
        stems.push(name);
    }
    write_json(&out.join("manifest.json"), &stems)
}

fn load_cases(
    manifest: &Path,
    geometry: &Geometry,
) -> CliResult<(Vec<PreparedCase>, Vec<SkippedCase>)> {
    let raw = load_manifest(manifest)?;
    let (prepared, skipped) = prepare_cases(&raw, geometry.nz, geometry.size)?;
    for s in &skipped {
        eprintln!("warning: case {} skipped: {}", s.id, s.reason);
    }
    if prepared.is_empty() {
        return Err(Error::Validation(format!("{}: no usable cases", manifest.display())).into());
    }
    Ok((prepared, skipped))
}

fn as_scalar(v: Volume) -> ScalarVolume {
    match v {
        Volume::Scalar(s) => s,
        Volume::Mask(m) => mask_to_scalar(&m),
        Volume::Dwi(d) => d.lowest_b_slab(),
    }
}

fn mask_to_scalar(m: &MaskVolume) -> ScalarVolume {
    let data = m.data().iter().map(|&v| f64::from(v)).collect();
    ScalarVolume::new(m.shape(), Unit::Dimensionless, data).expect("mask shape")
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = to_pretty(value);
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: PathBuf::from(path),
        source,
    })
}
