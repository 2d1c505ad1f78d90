use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use semrob_core::attacks::{
    accuracy_at_budget, clean_accuracy, robust_accuracy, run_campaign, single_attribute_ablation, AttackMethod,
    AttackOutcome, AttackTarget,
};
use semrob_core::certify::{acr, certified_accuracy_curve, certify_campaign, envelope, CertResult};
use semrob_core::formats::{
    attack_csv, cert_csv, curve_csv, parse_attack_csv, parse_cert_csv, population_to_json, ranking_report_json,
    sweep_csv, AttackRecord, SweepRow,
};
use semrob_core::oracle::gen_population;
use semrob_core::ranking::{energy_rows, rank_attributes};
use semrob_core::{BudgetMatrix, LatentCode, SyntheticPopulation};

use crate::config::{Experiment, LARGE_POPULATION};
use crate::{
    AttackArgs, CertifyArgs, CliError, Command, CurveArgs, ExperimentArgs, ExperimentConfig, GenArgs, RankArgs,
    SweepArgs, SweepAxis, Cli,
};

fn warn(msg: &str) {
    eprintln!("semrob: warning: {msg}");
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.shared.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.shared.seed {
        cfg.seed = seed;
    }
    let out = cli.shared.out.as_deref().map(|p| cfg.resolve_output(p));
    let out = out.as_deref();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.shared.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be >= 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gen(a) => cmd_gen(cfg, a, out),
        Command::Attack(a) => cmd_attack(cfg, a, out),
        Command::Sweep(a) => cmd_sweep(cfg, a, out),
        Command::Rank(a) => cmd_rank(cfg, a, out),
        Command::Certify(a) => cmd_certify(cfg, a, out),
        Command::Curve(a) => cmd_curve(cfg, a, out),
    })
}

fn require_out(out: Option<&Path>) -> Result<&Path, CliError> {
    out.ok_or_else(|| CliError::Config("--out is required".into()))
}

fn apply_experiment_args(cfg: &mut ExperimentConfig, a: &ExperimentArgs) {
    if let Some(p) = &a.population {
        cfg.population = Some(p.clone());
    }
    if let Some(p) = &a.basis {
        cfg.basis = Some(p.clone());
    }
    if let Some(s) = a.budget_scale {
        cfg.budget_scale = s;
    }
}

fn build(cfg: &ExperimentConfig) -> Result<Experiment, CliError> {
    let exp = cfg.build()?;
    for w in &exp.warnings {
        warn(w);
    }
    Ok(exp)
}

fn cmd_gen(mut cfg: ExperimentConfig, a: &GenArgs, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(k) = a.num_identities {
        cfg.num_identities = k;
    }
    if let Some(d) = a.latent_dim {
        cfg.latent_dim = d;
    }
    let out = require_out(out)?;
    cfg.validate()?;
    if cfg.num_identities >= LARGE_POPULATION {
        warn(&format!(
            "{} identities: the population file and every campaign over it scale linearly; expect long runtimes",
            cfg.num_identities
        ));
    }
    let pop = gen_population(cfg.num_identities, cfg.latent_dim, cfg.seed)?;
    write_atomic(out, &population_to_json(&pop))
}

fn codes(pop: &SyntheticPopulation, n: usize) -> Result<Vec<LatentCode>, CliError> {
    if n > pop.num_identities() {
        return Err(CliError::Config(format!(
            "{n} identities requested, population has {}",
            pop.num_identities()
        )));
    }
    (0..n)
        .map(|i| LatentCode::new(pop.code(i).to_vec()).map_err(CliError::from))
        .collect()
}

fn targets(codes: &[LatentCode]) -> Vec<AttackTarget<'_>> {
    codes
        .iter()
        .enumerate()
        .map(|(i, code)| AttackTarget { identity_id: i as u64, code, label: i })
        .collect()
}

/// Attacks the first `num_attacked` identities (identity `i` has label `i`).
pub fn run_attack(cfg: &ExperimentConfig, exp: &Experiment) -> Result<Vec<AttackOutcome>, CliError> {
    attack_with_budget(cfg, exp, &exp.budget)
}

fn attack_with_budget(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    budget: &BudgetMatrix,
) -> Result<Vec<AttackOutcome>, CliError> {
    let method = cfg.attack_method()?;
    let codes = codes(&exp.population, cfg.num_attacked)?;
    let targets = targets(&codes);
    let outcomes = match cfg.only_attribute {
        Some(k) => {
            if k >= exp.basis.num_attributes() {
                return Err(CliError::Config(format!(
                    "attribute index {k} out of range for {} attributes",
                    exp.basis.num_attributes()
                )));
            }
            single_attribute_ablation(&exp.oracle, &exp.basis, budget, &targets, &method, k)?
        }
        None => run_campaign(&exp.oracle, &exp.basis, budget, &targets, &method)?,
    };
    Ok(outcomes)
}

/// Robust accuracy; minimum-perturbation results count as fooled only
/// inside the budget ellipsoid.
fn campaign_accuracy(method: &AttackMethod, outcomes: &[AttackOutcome]) -> Result<f64, CliError> {
    Ok(match method {
        AttackMethod::Pgd(_) => robust_accuracy(outcomes)?,
        AttackMethod::Fab(_) => accuracy_at_budget(outcomes, 1.0)?,
    })
}

#[derive(Debug, Serialize)]
pub struct AttackSummary {
    pub method: &'static str,
    pub n_attacked: usize,
    pub n_population: usize,
    pub budget_scale: f64,
    pub only_attribute: Option<String>,
    /// Share of attacked identities classified correctly and not fooled
    /// within the budget.
    pub robust_accuracy: f64,
    pub clean_accuracy: f64,
    /// Adversarial examples found on clean-correct identities (any energy).
    pub success_count: usize,
    pub mean_energy: Option<f64>,
    pub median_energy: Option<f64>,
    pub diagnostics: usize,
}

pub fn summarize(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    outcomes: &[AttackOutcome],
) -> Result<AttackSummary, CliError> {
    let method = cfg.attack_method()?;
    let mut energies: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.success && o.clean_correct)
        .map(|o| o.energy)
        .collect();
    energies.sort_by(f64::total_cmp);
    let median = match energies.len() {
        0 => None,
        n if n % 2 == 1 => Some(energies[n / 2]),
        n => Some(0.5 * (energies[n / 2 - 1] + energies[n / 2])),
    };
    Ok(AttackSummary {
        method: method.name(),
        n_attacked: outcomes.len(),
        n_population: exp.population.num_identities(),
        budget_scale: cfg.budget_scale,
        only_attribute: cfg.only_attribute.map(|k| exp.basis.attribute_names()[k].clone()),
        robust_accuracy: campaign_accuracy(&method, outcomes)?,
        clean_accuracy: clean_accuracy(outcomes)?,
        success_count: energies.len(),
        mean_energy: (!energies.is_empty()).then(|| energies.iter().sum::<f64>() / energies.len() as f64),
        median_energy: median,
        diagnostics: outcomes.iter().filter(|o| o.diagnostic.is_some()).count(),
    })
}

fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

fn cmd_attack(mut cfg: ExperimentConfig, a: &AttackArgs, out: Option<&Path>) -> Result<(), CliError> {
    apply_experiment_args(&mut cfg, &a.experiment);
    if let Some(m) = &a.method {
        cfg.method = m.clone();
    }
    if let Some(n) = a.num_attacked {
        cfg.num_attacked = n;
    }
    if a.only_attribute.is_some() {
        cfg.only_attribute = a.only_attribute;
    }
    let out = require_out(out)?;
    cfg.validate()?;
    let exp = build(&cfg)?;
    let outcomes = run_attack(&cfg, &exp)?;
    for o in &outcomes {
        if let Some(d) = &o.diagnostic {
            warn(&format!("identity {}: {d}", o.identity_id));
        }
    }
    let records: Vec<AttackRecord> = outcomes.iter().map(AttackRecord::from).collect();
    let csv = attack_csv(&records)?;
    let summary = summarize(&cfg, &exp, &outcomes)?;
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    let summary_out = a.summary.clone().unwrap_or_else(|| summary_path(out));
    write_atomic(out, &csv)?;
    write_atomic(&summary_out, &json)
}

fn count_value(v: f64, what: &str) -> Result<usize, CliError> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::Config(format!("{what} sweep values must be positive integers, got {v}")))
    }
}

/// One robust-accuracy row per axis value.
///
/// * `budget`: the axis value is the global budget scale. PGD reruns the
///   campaign per value; FAB runs once at scale 1 and counts an identity as
///   robust at `x` when its minimal energy exceeds `x`.
/// * `num-attacked`: the first `n` identities; per-identity random streams
///   make this a prefix of the largest campaign.
/// * `dataset-size`: the population is truncated to `K` identities (all
///   prefixes of the same seeded population) and the first
///   `min(num_attacked, min K)` identities are attacked at every size.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let method = cfg.attack_method()?;
    let row = |axis_value, outcomes: &[AttackOutcome], n_population| -> Result<SweepRow, CliError> {
        Ok(SweepRow {
            axis_value,
            robust_accuracy: campaign_accuracy(&method, outcomes)?,
            n_attacked: outcomes.len(),
            n_population,
        })
    };
    match axis {
        SweepAxis::Budget => {
            if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(CliError::Config(format!("budget sweep values must be positive, got {v}")));
            }
            let base_cfg = ExperimentConfig { budget_scale: 1.0, ..cfg.clone() };
            let exp = build(&base_cfg)?;
            let k = exp.population.num_identities();
            match method {
                AttackMethod::Fab(_) => {
                    let outcomes = run_attack(&base_cfg, &exp)?;
                    values
                        .iter()
                        .map(|&x| {
                            Ok(SweepRow {
                                axis_value: x,
                                robust_accuracy: accuracy_at_budget(&outcomes, x)?,
                                n_attacked: outcomes.len(),
                                n_population: k,
                            })
                        })
                        .collect()
                }
                AttackMethod::Pgd(_) => values
                    .iter()
                    .map(|&x| row(x, &attack_with_budget(&base_cfg, &exp, &exp.budget.rescale(x)?)?, k))
                    .collect(),
            }
        }
        SweepAxis::NumAttacked => {
            let counts = values
                .iter()
                .map(|&v| count_value(v, "num-attacked"))
                .collect::<Result<Vec<_>, _>>()?;
            let max = *counts.iter().max().expect("nonempty");
            let run_cfg = ExperimentConfig { num_attacked: max, ..cfg.clone() };
            let exp = build(&run_cfg)?;
            let outcomes = run_attack(&run_cfg, &exp)?;
            values
                .iter()
                .zip(&counts)
                .map(|(&v, &n)| row(v, &outcomes[..n], exp.population.num_identities()))
                .collect()
        }
        SweepAxis::DatasetSize => {
            let sizes = values
                .iter()
                .map(|&v| count_value(v, "dataset-size"))
                .collect::<Result<Vec<_>, _>>()?;
            let max = *sizes.iter().max().expect("nonempty");
            let min = *sizes.iter().min().expect("nonempty");
            if min < 2 {
                return Err(CliError::Config("dataset sizes must be >= 2".into()));
            }
            let full = match &cfg.population {
                Some(_) => cfg.population()?,
                None => gen_population(max, cfg.latent_dim, cfg.seed)?,
            };
            let attacked = cfg.num_attacked.min(min);
            let run_cfg = ExperimentConfig { num_attacked: attacked, ..cfg.clone() };
            values
                .iter()
                .zip(&sizes)
                .map(|(&v, &k)| {
                    let exp = run_cfg.build_with(full.prefix(k)?)?;
                    row(v, &run_attack(&run_cfg, &exp)?, k)
                })
                .collect()
        }
    }
}

fn cmd_sweep(mut cfg: ExperimentConfig, a: &SweepArgs, out: Option<&Path>) -> Result<(), CliError> {
    apply_experiment_args(&mut cfg, &a.experiment);
    if let Some(axis) = &a.axis {
        cfg.sweep_axis = axis.clone();
    }
    if let Some(values) = &a.values {
        cfg.sweep_values = values.clone();
    }
    if let Some(m) = &a.method {
        cfg.method = m.clone();
    }
    if let Some(n) = a.num_attacked {
        cfg.num_attacked = n;
    }
    let out = require_out(out)?;
    cfg.validate()?;
    let rows = run_sweep(&cfg, cfg.sweep_axis.parse()?, &cfg.sweep_values)?;
    write_atomic(out, &sweep_csv(&rows))
}

fn cmd_rank(mut cfg: ExperimentConfig, a: &RankArgs, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(p) = &a.basis {
        cfg.basis = Some(p.clone());
    }
    if let Some(s) = a.budget_scale {
        cfg.budget_scale = s;
    }
    if let Some(alpha) = a.alpha {
        cfg.rank_alpha = alpha;
    }
    let out = require_out(out)?;
    cfg.validate()?;
    let records = parse_attack_csv(&read(&a.results)?)?;
    let n_attr = records.first().map_or(0, |r| r.delta.len());
    if n_attr < 2 {
        return Err(CliError::Config(format!(
            "ranking requires at least 2 attributes, the results have {n_attr}"
        )));
    }
    let names = match &cfg.basis {
        Some(_) => {
            let (basis, warning) = cfg.load_basis_file()?;
            if let Some(w) = warning {
                warn(&w);
            }
            basis.attribute_names().to_vec()
        }
        None => cfg.attribute_names.clone(),
    };
    if names.len() != n_attr {
        return Err(CliError::Config(format!(
            "results have {n_attr} attributes, configuration names {}",
            names.len()
        )));
    }
    let m = cfg.budget(n_attr)?;
    let rows = energy_rows(
        records
            .iter()
            .filter(|r| r.success && r.clean_correct)
            .map(|r| r.delta.as_slice()),
        &m,
    )?;
    let result = rank_attributes(&rows, &names, cfg.rank_alpha)?;
    write_atomic(out, &ranking_report_json(&result))
}

/// `0, step, 2·step, …` up to the first grid point `≥ max`.
pub fn radius_grid(max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && step.is_finite()) || !(max >= 0.0 && max.is_finite()) {
        return Err(CliError::Config(format!("invalid curve grid: max {max}, step {step}")));
    }
    let points = (max / step - 1e-9).ceil().max(0.0) as usize;
    Ok((0..=points).map(|i| i as f64 * step).collect())
}

fn curve_text(results: &[CertResult], step: f64, max: Option<f64>) -> Result<String, CliError> {
    let max = max.unwrap_or_else(|| results.iter().map(|r| r.radius).fold(0.0, f64::max));
    let curve = certified_accuracy_curve(results, &radius_grid(max, step)?)?;
    Ok(curve_csv(&curve))
}

#[derive(Serialize)]
struct AcrLine<'a> {
    mode: &'a str,
    sigma: Option<f64>,
    acr: f64,
    n: usize,
}

fn report_acr(mode: &str, sigma: Option<f64>, results: &[CertResult]) -> Result<(), CliError> {
    let line = AcrLine { mode, sigma, acr: acr(results)?, n: results.len() };
    println!("{}", serde_json::to_string(&line).expect("ACR line serializes"));
    Ok(())
}

fn cmd_certify(mut cfg: ExperimentConfig, a: &CertifyArgs, out: Option<&Path>) -> Result<(), CliError> {
    apply_experiment_args(&mut cfg, &a.experiment);
    if let Some(m) = &a.mode {
        cfg.smoothing_mode = m.clone();
    }
    if let Some(s) = &a.sigmas {
        cfg.sigmas = s.clone();
    }
    if let Some(n) = a.num_certified {
        cfg.num_certified = n;
    }
    if let Some(n0) = a.n0 {
        cfg.n0 = n0;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    let out = require_out(out)?;

    if let Some(inputs) = &a.envelope {
        let runs = inputs
            .iter()
            .map(|p| parse_cert_csv(&read(p)?).map_err(CliError::from))
            .collect::<Result<Vec<_>, _>>()?;
        let best = envelope(&runs);
        if best.is_empty() {
            return Err(CliError::Config("envelope inputs contain no certificates".into()));
        }
        let curve = a.curve_out.as_ref().map(|_| curve_text(&best, cfg.curve_step, None)).transpose()?;
        write_atomic(out, &cert_csv(&best))?;
        if let (Some(path), Some(curve)) = (&a.curve_out, curve) {
            write_atomic(path, &curve)?;
        }
        return report_acr("envelope", None, &best);
    }

    cfg.validate()?;
    let exp = build(&cfg)?;
    let codes = codes(&exp.population, cfg.num_certified)?;
    let targets: Vec<(u64, &LatentCode, usize)> =
        codes.iter().enumerate().map(|(i, c)| (i as u64, c, i)).collect();
    let mut runs = Vec::with_capacity(cfg.sigmas.len());
    for &sigma in &cfg.sigmas {
        let smoothing = cfg.smoothing(sigma)?;
        runs.push(certify_campaign(&exp.oracle, &exp.basis, &exp.budget, &targets, &smoothing)?);
    }
    let all: Vec<CertResult> = runs.iter().flatten().cloned().collect();
    let best = envelope(&runs);
    let curve_source = if runs.len() == 1 { &runs[0] } else { &best };
    let curve = a
        .curve_out
        .as_ref()
        .map(|_| curve_text(curve_source, cfg.curve_step, None))
        .transpose()?;

    write_atomic(out, &cert_csv(&all))?;
    if let Some(path) = &a.envelope_out {
        write_atomic(path, &cert_csv(&best))?;
    }
    if let (Some(path), Some(curve)) = (&a.curve_out, curve) {
        write_atomic(path, &curve)?;
    }
    for (sigma, run) in cfg.sigmas.iter().zip(&runs) {
        report_acr(&cfg.smoothing_mode, Some(*sigma), run)?;
    }
    if runs.len() > 1 {
        report_acr("envelope", None, &best)?;
    }
    Ok(())
}

fn cmd_curve(cfg: ExperimentConfig, a: &CurveArgs, out: Option<&Path>) -> Result<(), CliError> {
    let out = require_out(out)?;
    let results = parse_cert_csv(&read(&a.input)?)?;
    if results.is_empty() {
        return Err(CliError::Config(format!("{} contains no certificates", a.input.display())));
    }
    // one entry per identity, even if the file mixes several noise levels
    let results = envelope(&[results]);
    write_atomic(out, &curve_text(&results, a.step.unwrap_or(cfg.curve_step), a.max)?)
}
