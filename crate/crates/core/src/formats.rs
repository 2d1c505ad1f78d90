//! On-disk formats: population and basis JSON, attack / certification /
//! curve / sweep CSVs and the ranking report.
//!
//! CSVs carry a header row, use LF line endings and print reals with 17
//! significant digits (C's `%.17g`), which round-trips every `f64`.

use serde::{Deserialize, Serialize};

use crate::attacks::AttackOutcome;
use crate::certify::{CertResult, SmoothingMode};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::oracle::SyntheticPopulation;
use crate::ranking::RankingResult;
use crate::semgeo::SemanticBasis;

pub const ATTACK_HEADER_PREFIX: &str =
    "identity_id,method,success,clean_correct,energy,predicted_class,restart_index";
pub const CERT_HEADER: &str =
    "identity_id,mode,sigma,c_A,correct,p_a_lower,mahalanobis_radius,radius,abstain";
pub const CURVE_HEADER: &str = "radius,certified_accuracy";
pub const SWEEP_HEADER: &str = "axis_value,robust_accuracy,n_attacked,n_population";

/// `%.17g` formatting.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // the exponent after rounding to 17 digits decides the style
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let fixed = format!("{:.*}", (16 - exp) as usize, v);
        strip_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip_zeros(mantissa), sign, exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{what}: {e}"))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationFile {
    latent_dim: usize,
    seed: u64,
    codes: Vec<Vec<f64>>,
}

pub fn population_to_json(pop: &SyntheticPopulation) -> String {
    let file = PopulationFile {
        latent_dim: pop.latent_dim(),
        seed: pop.seed(),
        codes: pop.codes().to_rows(),
    };
    let mut s = serde_json::to_string(&file).expect("population serializes");
    s.push('\n');
    s
}

pub fn population_from_json(text: &str) -> Result<SyntheticPopulation> {
    let file: PopulationFile = serde_json::from_str(text).map_err(|e| parse_err("population JSON", e))?;
    if let Some((i, row)) = file.codes.iter().enumerate().find(|(_, r)| r.len() != file.latent_dim) {
        return Err(Error::Parse(format!(
            "population JSON: code {i} has length {}, latent_dim is {}",
            row.len(),
            file.latent_dim
        )));
    }
    let codes = Matrix::from_rows(&file.codes)
        .ok_or_else(|| Error::Parse("population JSON: empty or ragged codes".into()))?;
    SyntheticPopulation::new(codes, file.seed)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisFile {
    attribute_names: Vec<String>,
    directions: Vec<Vec<f64>>,
}

pub fn basis_to_json(basis: &SemanticBasis) -> String {
    let file = BasisFile {
        attribute_names: basis.attribute_names().to_vec(),
        directions: basis.directions().to_rows(),
    };
    let mut s = serde_json::to_string(&file).expect("basis serializes");
    s.push('\n');
    s
}

/// Rows are renormalized to unit length; the second value is the largest
/// norm adjustment applied.
pub fn basis_from_json(text: &str) -> Result<(SemanticBasis, f64)> {
    let file: BasisFile = serde_json::from_str(text).map_err(|e| parse_err("basis JSON", e))?;
    if file.directions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parse("basis JSON: non-finite direction entry".into()));
    }
    let directions = Matrix::from_rows(&file.directions)
        .ok_or_else(|| Error::Parse("basis JSON: empty or ragged directions".into()))?;
    SemanticBasis::from_rows_normalized(directions, file.attribute_names)
}

/// One row of an attack results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub identity_id: u64,
    pub method: String,
    pub success: bool,
    pub clean_correct: bool,
    pub energy: f64,
    pub predicted_class: usize,
    pub restart_index: usize,
    pub delta: Vec<f64>,
}

impl From<&AttackOutcome> for AttackRecord {
    fn from(o: &AttackOutcome) -> Self {
        Self {
            identity_id: o.identity_id,
            method: o.method.to_string(),
            success: o.success,
            clean_correct: o.clean_correct,
            energy: o.energy,
            predicted_class: o.predicted_class,
            restart_index: o.restart_index,
            delta: o.delta.clone(),
        }
    }
}

pub fn attack_header(n: usize) -> String {
    let mut h = ATTACK_HEADER_PREFIX.to_string();
    for i in 0..n {
        h.push_str(&format!(",delta_{i}"));
    }
    h
}

pub fn attack_csv(records: &[AttackRecord]) -> Result<String> {
    let n = records.first().map_or(0, |r| r.delta.len());
    let mut out = attack_header(n);
    out.push('\n');
    for r in records {
        if r.delta.len() != n {
            return Err(Error::shape("attack record delta", n, r.delta.len()));
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.identity_id,
            r.method,
            r.success,
            r.clean_correct,
            fmt_real(r.energy),
            r.predicted_class,
            r.restart_index
        ));
        for d in &r.delta {
            out.push(',');
            out.push_str(&fmt_real(*d));
        }
        out.push('\n');
    }
    Ok(out)
}

fn csv_rows(text: &str, what: &str) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(what, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| parse_err(what, e))?;
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::Parse(format!("row {line}: cannot parse `{raw}` as {name}")))
}

fn real(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field(rec, i, name, line)?;
    if v.is_nan() {
        return Err(Error::Parse(format!("row {line}: {name} is NaN")));
    }
    Ok(v)
}

pub fn parse_attack_csv(text: &str) -> Result<Vec<AttackRecord>> {
    let (header, rows) = csv_rows(text, "attack CSV")?;
    let prefix: Vec<&str> = ATTACK_HEADER_PREFIX.split(',').collect();
    if header.len() < prefix.len() || header[..prefix.len()] != prefix[..] {
        return Err(Error::Parse(format!("attack CSV: unexpected header {header:?}")));
    }
    let n = header.len() - prefix.len();
    if header[prefix.len()..] != attack_header(n).split(',').skip(prefix.len()).collect::<Vec<_>>()[..] {
        return Err(Error::Parse("attack CSV: delta columns must be delta_0..delta_{N-1}".into()));
    }
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            let delta = (0..n)
                .map(|j| real(rec, prefix.len() + j, "delta", line))
                .collect::<Result<Vec<_>>>()?;
            if delta.iter().any(|d| !d.is_finite()) {
                return Err(Error::Parse(format!("row {line}: non-finite delta")));
            }
            Ok(AttackRecord {
                identity_id: field(rec, 0, "identity_id", line)?,
                method: rec[1].to_string(),
                success: field(rec, 2, "success", line)?,
                clean_correct: field(rec, 3, "clean_correct", line)?,
                energy: real(rec, 4, "energy", line)?,
                predicted_class: field(rec, 5, "predicted_class", line)?,
                restart_index: field(rec, 6, "restart_index", line)?,
                delta,
            })
        })
        .collect()
}

pub fn cert_csv(results: &[CertResult]) -> String {
    let mut out = format!("{CERT_HEADER}\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.identity_id,
            r.mode.as_str(),
            fmt_real(r.sigma),
            r.predicted_class,
            r.correct,
            fmt_real(r.p_a_lower),
            fmt_real(r.mahalanobis_radius),
            fmt_real(r.radius),
            r.abstain
        ));
    }
    out
}

pub fn parse_cert_csv(text: &str) -> Result<Vec<CertResult>> {
    let (header, rows) = csv_rows(text, "certification CSV")?;
    if header.join(",") != CERT_HEADER {
        return Err(Error::Parse(format!("certification CSV: unexpected header {header:?}")));
    }
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            let mode: SmoothingMode = rec[1]
                .parse()
                .map_err(|_| Error::Parse(format!("row {line}: unknown mode `{}`", &rec[1])))?;
            Ok(CertResult {
                identity_id: field(rec, 0, "identity_id", line)?,
                mode,
                sigma: real(rec, 2, "sigma", line)?,
                predicted_class: field(rec, 3, "c_A", line)?,
                correct: field(rec, 4, "correct", line)?,
                p_a_lower: real(rec, 5, "p_a_lower", line)?,
                mahalanobis_radius: real(rec, 6, "mahalanobis_radius", line)?,
                radius: real(rec, 7, "radius", line)?,
                abstain: field(rec, 8, "abstain", line)?,
            })
        })
        .collect()
}

pub fn curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for (x, y) in curve {
        out.push_str(&format!("{},{}\n", fmt_real(*x), fmt_real(*y)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub robust_accuracy: f64,
    pub n_attacked: usize,
    pub n_population: usize,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_real(r.axis_value),
            fmt_real(r.robust_accuracy),
            r.n_attacked,
            r.n_population
        ));
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let (header, rows) = csv_rows(text, "sweep CSV")?;
    if header.join(",") != SWEEP_HEADER {
        return Err(Error::Parse(format!("sweep CSV: unexpected header {header:?}")));
    }
    rows.iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            Ok(SweepRow {
                axis_value: real(rec, 0, "axis_value", line)?,
                robust_accuracy: real(rec, 1, "robust_accuracy", line)?,
                n_attacked: field(rec, 2, "n_attacked", line)?,
                n_population: field(rec, 3, "n_population", line)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct RankingReport<'a> {
    order: &'a [String],
    adjacent_p: &'a [f64],
    significant: &'a [bool],
    friedman_p: &'a [f64],
    n: usize,
    alpha: f64,
}

pub fn ranking_report_json(r: &RankingResult) -> String {
    let report = RankingReport {
        order: &r.ordered_attributes,
        adjacent_p: &r.adjacent_p_values,
        significant: &r.adjacent_significant,
        friedman_p: &r.round_friedman_p,
        n: r.n_samples,
        alpha: r.alpha,
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}
