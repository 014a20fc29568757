//! Case preparation, the AUC objective over exponents, exponent tuning and
//! the modality comparison report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{fit_adc, AdcFitResult, DEFAULT_R2_MIN, DEFAULT_SIGNAL_FLOOR};
use crate::error::{Error, Result};
use crate::io::{bundle_exists, read_dwi, read_mask, read_scalar};
use crate::mixing::{cdis_from_fit, LogSignalTable, MixingConfig};
use crate::optimizer::{try_nelder_mead, Bounds, NmConfig, NmTrace};
use crate::phantom::Phantom;
use crate::preprocess::{
    compute_breast_mask, resize_bilinear, resize_dwi_bilinear, resize_mask_nearest, select_slices,
};
use crate::roc::{auc, delineation_samples};
use crate::volume::{DwiVolume, MaskVolume, ScalarVolume};

pub const DEFAULT_TARGET_NZ: usize = 25;
pub const DEFAULT_OUT_HW: usize = 224;
/// b-value of the single-b DWI modality.
pub const DWI_COMPARISON_B: f64 = 800.0;

/// A case as loaded, before geometric standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub id: String,
    pub dwi: DwiVolume,
    pub provided_adc: Option<ScalarVolume>,
    pub tumour_mask: Option<MaskVolume>,
    pub breast_mask: Option<MaskVolume>,
}

impl CaseRecord {
    /// Phantom case. The ground-truth breast mask is dropped so that the
    /// pipeline derives its own by thresholding.
    pub fn from_phantom(id: impl Into<String>, phantom: Phantom) -> Self {
        CaseRecord {
            id: id.into(),
            dwi: phantom.dwi,
            provided_adc: None,
            tumour_mask: Some(phantom.tumour_mask),
            breast_mask: None,
        }
    }
}

/// A standardized case ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCase {
    pub id: String,
    pub dwi: DwiVolume,
    pub provided_adc: Option<ScalarVolume>,
    pub tumour_mask: MaskVolume,
    pub breast_mask: MaskVolume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCase {
    pub id: String,
    pub reason: String,
}

/// Slice selection and in-plane resize of every volume; masks use
/// nearest-neighbour so they stay binary. The breast mask is computed from
/// the prepared DWI when absent.
pub fn prepare_case(raw: &CaseRecord, target_nz: usize, out_hw: usize) -> Result<PreparedCase> {
    let id = &raw.id;
    let tumour = raw
        .tumour_mask
        .as_ref()
        .ok_or_else(|| Error::validation(format!("case {id}: tumour mask missing")))?;
    if raw.dwi.nb() < 2 {
        return Err(Error::validation(format!(
            "case {id}: {} b-value(s), at least 2 required",
            raw.dwi.nb()
        )));
    }
    let shape = raw.dwi.shape();
    let same = |s| s == shape;
    if !same(tumour.shape())
        || raw.breast_mask.as_ref().is_some_and(|m| !same(m.shape()))
        || raw.provided_adc.as_ref().is_some_and(|a| !same(a.shape()))
    {
        return Err(Error::validation(format!(
            "case {id}: volume shapes differ"
        )));
    }

    let dwi = resize_dwi_bilinear(&select_slices(&raw.dwi, target_nz)?, out_hw, out_hw)?;
    let tumour_mask = resize_mask_nearest(&select_slices(tumour, target_nz)?, out_hw, out_hw)?;
    let provided_adc = raw
        .provided_adc
        .as_ref()
        .map(|a| resize_bilinear(&select_slices(a, target_nz)?, out_hw, out_hw))
        .transpose()?;
    let breast_mask = match &raw.breast_mask {
        Some(m) => resize_mask_nearest(&select_slices(m, target_nz)?, out_hw, out_hw)?,
        None => compute_breast_mask(&dwi)?,
    };
    let overlap = tumour_mask
        .data()
        .iter()
        .zip(breast_mask.data())
        .any(|(&t, &b)| t != 0 && b != 0);
    if !overlap {
        return Err(Error::validation(format!(
            "case {id}: tumour mask does not overlap the breast mask"
        )));
    }
    Ok(PreparedCase {
        id: id.clone(),
        dwi,
        provided_adc,
        tumour_mask,
        breast_mask,
    })
}

/// Prepare a batch. Cases with fewer than two b-values are skipped and
/// reported; any other failure aborts.
pub fn prepare_cases(
    raw: &[CaseRecord],
    target_nz: usize,
    out_hw: usize,
) -> Result<(Vec<PreparedCase>, Vec<SkippedCase>)> {
    let results: Vec<Result<PreparedCase>> = raw
        .par_iter()
        .map(|c| prepare_case(c, target_nz, out_hw))
        .collect();
    let mut prepared = Vec::new();
    let mut skipped = Vec::new();
    for (case, res) in raw.iter().zip(results) {
        match res {
            Ok(p) => prepared.push(p),
            Err(e) if case.dwi.nb() < 2 => skipped.push(SkippedCase {
                id: case.id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((prepared, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Pooled,
    #[default]
    MeanPerCase,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Aggregation::Pooled),
            "mean_per_case" | "mean-per-case" => Ok(Aggregation::MeanPerCase),
            other => Err(Error::validation(format!("unknown aggregation {other:?}"))),
        }
    }
}

fn case_error(id: &str, e: Error) -> Error {
    match e {
        Error::UndefinedAuc(msg) => Error::UndefinedAuc(format!("case {id}: {msg}")),
        other => other,
    }
}

/// Aggregate per-case `(scores, labels)` into one AUC.
fn aggregate_auc<'a>(
    samples: impl Iterator<Item = (&'a str, &'a [f64], &'a [bool])>,
    aggregation: Aggregation,
) -> Result<f64> {
    match aggregation {
        Aggregation::MeanPerCase => {
            let mut total = 0.0;
            let mut n = 0usize;
            for (id, scores, labels) in samples {
                total += auc(scores, labels).map_err(|e| case_error(id, e))?;
                n += 1;
            }
            if n == 0 {
                return Err(Error::validation("no cases to score"));
            }
            Ok(total / n as f64)
        }
        Aggregation::Pooled => {
            let mut all_scores = Vec::new();
            let mut all_labels = Vec::new();
            for (_, scores, labels) in samples {
                all_scores.extend_from_slice(scores);
                all_labels.extend_from_slice(labels);
            }
            if all_scores.is_empty() {
                return Err(Error::validation("no cases to score"));
            }
            auc(&all_scores, &all_labels)
        }
    }
}

/// Score modality maps (one per case) and aggregate.
pub fn modality_auc(
    cases: &[PreparedCase],
    maps: &[ScalarVolume],
    aggregation: Aggregation,
) -> Result<f64> {
    if cases.len() != maps.len() {
        return Err(Error::validation("one modality map per case required"));
    }
    let samples: Vec<(Vec<f64>, Vec<bool>)> = cases
        .iter()
        .zip(maps)
        .map(|(c, m)| delineation_samples(m, &c.tumour_mask, &c.breast_mask))
        .collect::<Result<_>>()?;
    aggregate_auc(
        cases
            .iter()
            .zip(&samples)
            .map(|(c, (s, l))| (c.id.as_str(), s.as_slice(), l.as_slice())),
        aggregation,
    )
}

/// CDIs AUC for `config` over `cases`, computed through the full
/// fit → synthesize → mix path for every case.
pub fn objective_auc(
    cases: &[PreparedCase],
    config: &MixingConfig,
    r2_min: f64,
    aggregation: Aggregation,
) -> Result<f64> {
    config.validate()?;
    if cases.is_empty() {
        return Err(Error::validation("no cases to score"));
    }
    let maps: Vec<ScalarVolume> = cases
        .par_iter()
        .map(|c| {
            let fit = fit_adc(&c.dwi, r2_min, DEFAULT_SIGNAL_FLOOR)?;
            cdis_from_fit(&fit, config)
        })
        .collect::<Result<_>>()?;
    modality_auc(cases, &maps, aggregation)
}

struct CaseTable {
    id: String,
    table: LogSignalTable,
    labels: Vec<bool>,
}

/// Cached form of [`objective_auc`] for a fixed `s_hat`: fits are done once
/// and only breast voxels are kept, so each evaluation is a re-mix plus
/// AUC. Values are identical to [`objective_auc`].
pub struct AucObjective {
    cases: Vec<CaseTable>,
    n_hat: usize,
    aggregation: Aggregation,
}

impl AucObjective {
    pub fn new(
        cases: &[PreparedCase],
        config: &MixingConfig,
        r2_min: f64,
        aggregation: Aggregation,
    ) -> Result<Self> {
        config.validate()?;
        if cases.is_empty() {
            return Err(Error::validation("no cases to score"));
        }
        let tables = cases
            .par_iter()
            .map(|c| {
                let fit = fit_adc(&c.dwi, r2_min, DEFAULT_SIGNAL_FLOOR)?;
                Ok(Self::case_table(c, &fit, config))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AucObjective {
            cases: tables,
            n_hat: config.s_hat.len(),
            aggregation,
        })
    }

    fn case_table(case: &PreparedCase, fit: &AdcFitResult, config: &MixingConfig) -> CaseTable {
        let voxels: Vec<usize> = (0..case.breast_mask.data().len())
            .filter(|&i| case.breast_mask.is_set(i))
            .collect();
        let labels = voxels.iter().map(|&i| case.tumour_mask.is_set(i)).collect();
        CaseTable {
            id: case.id.clone(),
            table: LogSignalTable::new(fit, &config.s_hat, config.signal_floor, &voxels),
            labels,
        }
    }

    pub fn evaluate(&self, rho: &[f64]) -> Result<f64> {
        if rho.len() != self.n_hat {
            return Err(Error::validation(format!(
                "{} rho values for {} synthetic b-values",
                rho.len(),
                self.n_hat
            )));
        }
        let scores: Vec<Vec<f64>> = self.cases.par_iter().map(|c| c.table.scores(rho)).collect();
        aggregate_auc(
            self.cases
                .iter()
                .zip(&scores)
                .map(|(c, s)| (c.id.as_str(), s.as_slice(), c.labels.as_slice())),
            self.aggregation,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub config: MixingConfig,
    pub trace: NmTrace,
    pub initial_auc: f64,
    pub final_auc: f64,
}

/// Maximize the CDIs AUC over the exponents with `s_hat` held fixed.
pub fn optimize_rho(
    cases: &[PreparedCase],
    initial: &MixingConfig,
    nm: &NmConfig,
    r2_min: f64,
    aggregation: Aggregation,
) -> Result<OptimizeOutcome> {
    let objective = AucObjective::new(cases, initial, r2_min, aggregation)?;
    let bounds = Bounds::uniform(
        initial.rho_bounds.0,
        initial.rho_bounds.1,
        initial.rho.len(),
    )?;
    let initial_auc = objective.evaluate(&initial.rho)?;
    let out = try_nelder_mead(
        |rho| Ok(-objective.evaluate(rho)?),
        &initial.rho,
        &bounds,
        nm,
    )?;
    Ok(OptimizeOutcome {
        config: initial.with_rho(out.x_best),
        trace: out.trace,
        initial_auc,
        final_auc: -out.f_best,
    })
}

pub mod modality {
    pub const ADC: &str = "ADC";
    pub const DWI: &str = "DWI_b800";
    pub const ADCC: &str = "ADCc";
    pub const CDIS_UNOPTIMIZED: &str = "CDIs_unoptimized";
    pub const CDIS_OPTIMIZED: &str = "CDIs_optimized";
}

pub const NOTE_BEST: &str = "best";
pub const NOTE_INVERTED: &str = "inverted contrast (AUC < 0.5)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub modality: String,
    pub auc: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub unoptimized_config_sha256: String,
    pub optimized_config_sha256: String,
    pub case_ids: Vec<String>,
    pub aggregation: Aggregation,
    pub r2_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
    pub metadata: ReportMetadata,
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// AUC of every available modality. The highest row is flagged `best`
/// (first on ties); rows below 0.5 are flagged as inverted contrast.
pub fn compare_modalities(
    cases: &[PreparedCase],
    unopt: &MixingConfig,
    opt: &MixingConfig,
    r2_min: f64,
    aggregation: Aggregation,
) -> Result<ComparisonReport> {
    unopt.validate()?;
    opt.validate()?;
    if cases.is_empty() {
        return Err(Error::validation("no cases to compare"));
    }
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut push = |name: &str, auc: f64| {
        rows.push(ReportRow {
            modality: name.to_string(),
            auc,
            note: String::new(),
        })
    };

    if cases.iter().all(|c| c.provided_adc.is_some()) {
        let maps: Vec<ScalarVolume> = cases
            .iter()
            .filter_map(|c| c.provided_adc.clone())
            .collect();
        push(modality::ADC, modality_auc(cases, &maps, aggregation)?);
    } else if cases.iter().any(|c| c.provided_adc.is_some()) {
        notes.push(format!(
            "{} skipped: not provided for every case",
            modality::ADC
        ));
    }

    let b800: Result<Vec<ScalarVolume>> = cases
        .iter()
        .map(|c| c.dwi.extract_b_slice(DWI_COMPARISON_B))
        .collect();
    match b800 {
        Ok(maps) => push(modality::DWI, modality_auc(cases, &maps, aggregation)?),
        Err(e) => notes.push(format!("{} skipped: {e}", modality::DWI)),
    }

    let fits: Vec<AdcFitResult> = cases
        .par_iter()
        .map(|c| fit_adc(&c.dwi, r2_min, DEFAULT_SIGNAL_FLOOR))
        .collect::<Result<_>>()?;
    let adcc: Vec<ScalarVolume> = fits.iter().map(|f| f.adc.clone()).collect();
    push(modality::ADCC, modality_auc(cases, &adcc, aggregation)?);

    for (name, config) in [
        (modality::CDIS_UNOPTIMIZED, unopt),
        (modality::CDIS_OPTIMIZED, opt),
    ] {
        let maps: Vec<ScalarVolume> = fits
            .par_iter()
            .map(|f| cdis_from_fit(f, config))
            .collect::<Result<_>>()?;
        push(name, modality_auc(cases, &maps, aggregation)?);
    }

    let best = rows
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, r)| match acc {
            Some((_, a)) if a >= r.auc => acc,
            _ => Some((i, r.auc)),
        });
    for (i, row) in rows.iter_mut().enumerate() {
        let mut tags = Vec::new();
        if best.is_some_and(|(b, _)| b == i) {
            tags.push(NOTE_BEST);
        }
        if row.auc < 0.5 {
            tags.push(NOTE_INVERTED);
        }
        row.note = tags.join("; ");
    }

    Ok(ComparisonReport {
        rows,
        notes,
        metadata: ReportMetadata {
            unoptimized_config_sha256: config_hash(unopt),
            optimized_config_sha256: config_hash(opt),
            case_ids: cases.iter().map(|c| c.id.clone()).collect(),
            aggregation,
            r2_min,
            seed: None,
        },
    })
}

const META_PREFIX: &str = "# metadata: ";
const NOTE_PREFIX: &str = "# note: ";

impl ComparisonReport {
    pub fn best(&self) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.note.split("; ").any(|t| t == NOTE_BEST))
    }

    pub fn row(&self, modality: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.modality == modality)
    }

    /// CSV with `modality,auc,note` rows. Metadata and report notes are
    /// carried in leading `#` lines so the file parses back losslessly.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io_err = |e: std::io::Error| Error::validation(format!("report write: {e}"));
        let meta = serde_json::to_string(&self.metadata)
            .map_err(|e| Error::validation(format!("metadata: {e}")))?;
        writeln!(out, "{META_PREFIX}{meta}").map_err(io_err)?;
        for n in &self.notes {
            writeln!(out, "{NOTE_PREFIX}{}", n.replace('\n', " ")).map_err(io_err)?;
        }
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::validation(format!("csv: {e}"));
        w.write_record(["modality", "auc", "note"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([r.modality.as_str(), &r.auc.to_string(), r.note.as_str()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut metadata = ReportMetadata::default();
        let mut notes = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(m) = line.strip_prefix(META_PREFIX) {
                metadata = serde_json::from_str(m)
                    .map_err(|e| Error::validation(format!("report metadata: {e}")))?;
            } else if let Some(n) = line.strip_prefix(NOTE_PREFIX) {
                notes.push(n.to_string());
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut rows = Vec::new();
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::validation(format!("report csv: {e}")))?;
            if rec.len() != 3 {
                return Err(Error::validation("report rows need modality,auc,note"));
            }
            let auc = rec[1]
                .parse::<f64>()
                .map_err(|e| Error::validation(format!("report auc {:?}: {e}", &rec[1])))?;
            rows.push(ReportRow {
                modality: rec[0].to_string(),
                auc,
                note: rec[2].to_string(),
            });
        }
        Ok(ComparisonReport {
            rows,
            notes,
            metadata,
        })
    }
}

/// Bundle stems belonging to one case: `<stem>_dwi`, `<stem>_tumour`,
/// optional `<stem>_breast` and `<stem>_adc`.
pub fn case_component(stem: &Path, part: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(format!("_{part}"));
    PathBuf::from(s)
}

pub fn load_case(stem: &Path) -> Result<CaseRecord> {
    let id = stem
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| stem.display().to_string());
    let dwi = read_dwi(case_component(stem, "dwi"))?;
    let tumour_stem = case_component(stem, "tumour");
    if !bundle_exists(&tumour_stem) {
        return Err(Error::validation(format!(
            "case {id}: tumour mask {} missing",
            tumour_stem.display()
        )));
    }
    let tumour_mask = Some(read_mask(&tumour_stem)?);
    let optional = |part: &str| {
        let p = case_component(stem, part);
        bundle_exists(&p).then_some(p)
    };
    let breast_mask = optional("breast").map(read_mask).transpose()?;
    let provided_adc = optional("adc").map(read_scalar).transpose()?;
    Ok(CaseRecord {
        id,
        dwi,
        provided_adc,
        tumour_mask,
        breast_mask,
    })
}

/// Case manifest: a JSON list of case stems, relative to the manifest's
/// directory unless absolute.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stems: Vec<String> = serde_json::from_str(&text)
        .map_err(|e| Error::validation(format!("manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(stems.into_iter().map(|s| base.join(s)).collect())
}

pub fn load_manifest(path: &Path) -> Result<Vec<CaseRecord>> {
    read_manifest(path)?.iter().map(|s| load_case(s)).collect()
}

pub fn default_r2_min() -> f64 {
    DEFAULT_R2_MIN
}
