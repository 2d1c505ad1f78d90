//! Flat JSON experiment configuration.
//!
//! Every key is optional; missing keys take the desk-scale defaults below.
//! Command-line flags override values loaded from a file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semrob_core::attacks::{AttackMethod, FabConfig, PgdConfig, PgdStep};
use semrob_core::certify::{SmoothingConfig, SmoothingMode};
use semrob_core::formats::{basis_from_json, population_from_json};
use semrob_core::oracle::{gen_population, make_prototype_oracle};
use semrob_core::{BudgetMatrix, BudgetSpec, LossKind, PrototypeOracle, SemanticBasis, SyntheticPopulation};

use crate::CliError;

/// Populations at or above this size trigger a runtime warning.
pub const LARGE_POPULATION: usize = 100_000;

/// Basis rows whose norm is off by more than this are reported on load.
const BASIS_ADJUST_WARN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed: population, basis, oracle, attack and smoothing streams.
    pub seed: u64,
    pub num_identities: usize,
    pub latent_dim: usize,
    /// Population JSON to load instead of generating one.
    pub population: Option<PathBuf>,
    /// Oracle family; only `"prototype"` (cosine matcher) is available.
    pub oracle: String,
    pub embed_dim: usize,
    pub temperature: f64,
    /// Basis JSON to load instead of a random orthonormal basis.
    pub basis: Option<PathBuf>,
    pub attribute_names: Vec<String>,
    pub epsilons: Vec<f64>,
    pub budget_scale: f64,

    pub method: String,
    pub loss: String,
    pub num_attacked: usize,
    pub only_attribute: Option<usize>,
    pub pgd_iterations: usize,
    pub pgd_restarts: usize,
    pub pgd_step_size: f64,
    pub pgd_step: String,
    pub fab_iterations: usize,
    pub fab_restarts: usize,
    pub fab_target_classes: usize,
    pub fab_alpha_max: f64,
    pub fab_beta: f64,
    pub fab_eta: f64,
    pub fab_final_search: bool,

    pub sweep_axis: String,
    pub sweep_values: Vec<f64>,

    pub smoothing_mode: String,
    pub sigmas: Vec<f64>,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub num_certified: usize,
    pub curve_step: f64,

    pub rank_alpha: f64,

    /// Relative `--out` paths are resolved against this directory.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pgd = PgdConfig::default();
        let fab = FabConfig::default();
        let smoothing = SmoothingConfig::default();
        Self {
            seed: 0,
            num_identities: 2000,
            latent_dim: 64,
            population: None,
            oracle: "prototype".into(),
            embed_dim: 6,
            temperature: 16.0,
            basis: None,
            attribute_names: ["Pose", "Age", "Gender", "Smile", "Eyeglasses"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            epsilons: vec![0.5, 0.5, 0.2, 0.8, 0.5],
            budget_scale: 1.0,
            method: "pgd".into(),
            loss: "cross_entropy".into(),
            num_attacked: 200,
            only_attribute: None,
            pgd_iterations: pgd.iterations,
            pgd_restarts: pgd.restarts,
            pgd_step_size: pgd.step_size,
            pgd_step: "steepest".into(),
            fab_iterations: fab.iterations,
            fab_restarts: fab.restarts,
            fab_target_classes: fab.target_classes,
            fab_alpha_max: fab.alpha_max,
            fab_beta: fab.beta,
            fab_eta: fab.eta,
            fab_final_search: fab.final_search,
            sweep_axis: "budget".into(),
            sweep_values: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            smoothing_mode: "isotropic".into(),
            sigmas: vec![smoothing.sigma],
            n0: smoothing.n0,
            n: smoothing.n,
            alpha: smoothing.alpha,
            num_certified: 100,
            curve_step: 0.01,
            rank_alpha: 0.01,
            output_dir: None,
        }
    }
}

/// Everything a campaign needs, built from a configuration.
pub struct Experiment {
    pub population: SyntheticPopulation,
    pub oracle: PrototypeOracle,
    pub basis: SemanticBasis,
    /// Budget including `budget_scale`.
    pub budget: BudgetMatrix,
    pub warnings: Vec<String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_err(format!("config JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_json_str(&text)?;
        Ok(cfg)
    }

    /// Range checks and existence of referenced files.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.num_identities < 2 || self.latent_dim < 1 {
            return Err(config_err("num_identities must be >= 2 and latent_dim >= 1"));
        }
        if self.oracle != "prototype" {
            return Err(config_err(format!("unknown oracle family `{}`", self.oracle)));
        }
        if self.embed_dim < 1 {
            return Err(config_err("embed_dim must be >= 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(config_err("temperature must be positive"));
        }
        for (key, path) in [("population", &self.population), ("basis", &self.basis)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(CliError::Io(format!("{key} file {} does not exist", p.display())));
                }
            }
        }
        if self.attribute_names.is_empty() {
            return Err(config_err("attribute_names must not be empty"));
        }
        if self.basis.is_none() && self.epsilons.len() != self.attribute_names.len() {
            return Err(config_err(format!(
                "{} epsilons for {} attributes",
                self.epsilons.len(),
                self.attribute_names.len()
            )));
        }
        if self.basis.is_none() {
            BudgetSpec::new(self.epsilons.clone())?;
        }
        if !(self.budget_scale > 0.0 && self.budget_scale.is_finite()) {
            return Err(config_err("budget_scale must be positive"));
        }
        if self.num_attacked < 1 || self.num_certified < 1 {
            return Err(config_err("num_attacked and num_certified must be >= 1"));
        }
        if !matches!(self.method.as_str(), "pgd" | "fab") {
            return Err(config_err(format!("unknown attack method `{}`", self.method)));
        }
        self.loss
            .parse::<LossKind>()
            .map_err(|_| config_err(format!("unknown loss `{}`", self.loss)))?;
        self.attack_method()?;
        self.sweep_axis.parse::<SweepAxis>()?;
        if self.sweep_values.is_empty() {
            return Err(config_err("sweep_values must not be empty"));
        }
        if self.sigmas.is_empty() {
            return Err(config_err("sigmas must not be empty"));
        }
        for &sigma in &self.sigmas {
            self.smoothing(sigma)?.validate()?;
        }
        if !(self.curve_step > 0.0 && self.curve_step.is_finite()) {
            return Err(config_err("curve_step must be positive"));
        }
        if !(self.rank_alpha > 0.0 && self.rank_alpha < 1.0) {
            return Err(config_err("rank_alpha must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn attack_method(&self) -> Result<AttackMethod, CliError> {
        let method = match self.method.as_str() {
            "pgd" => AttackMethod::Pgd(PgdConfig {
                iterations: self.pgd_iterations,
                restarts: self.pgd_restarts,
                step_size: self.pgd_step_size,
                step_rule: self.pgd_step.parse::<PgdStep>()?,
                loss_kind: self.loss.parse()?,
                seed: self.seed,
            }),
            "fab" => AttackMethod::Fab(FabConfig {
                iterations: self.fab_iterations,
                restarts: self.fab_restarts,
                target_classes: self.fab_target_classes,
                alpha_max: self.fab_alpha_max,
                beta: self.fab_beta,
                eta: self.fab_eta,
                final_search: self.fab_final_search,
                final_search_steps: FabConfig::default().final_search_steps,
                seed: self.seed,
            }),
            other => return Err(config_err(format!("unknown attack method `{other}`"))),
        };
        match &method {
            AttackMethod::Pgd(c) => c.validate()?,
            AttackMethod::Fab(c) => c.validate()?,
        }
        Ok(method)
    }

    pub fn smoothing(&self, sigma: f64) -> Result<SmoothingConfig, CliError> {
        let cfg = SmoothingConfig {
            mode: self.smoothing_mode.parse::<SmoothingMode>()?,
            sigma,
            n0: self.n0,
            n: self.n,
            alpha: self.alpha,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn population(&self) -> Result<SyntheticPopulation, CliError> {
        match &self.population {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
                Ok(population_from_json(&text)?)
            }
            None => Ok(gen_population(self.num_identities, self.latent_dim, self.seed)?),
        }
    }

    /// Basis from the `basis` file and a warning if its rows needed
    /// renormalizing.
    pub fn load_basis_file(&self) -> Result<(SemanticBasis, Option<String>), CliError> {
        let path = self.basis.as_ref().ok_or_else(|| config_err("no basis file configured"))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let (basis, adjust) = basis_from_json(&text)?;
        let warning = (adjust > BASIS_ADJUST_WARN)
            .then(|| format!("basis rows renormalized (largest norm adjustment {adjust:e})"));
        Ok((basis, warning))
    }

    /// The basis and any warning raised while loading it.
    pub fn basis(&self, latent_dim: usize) -> Result<(SemanticBasis, Option<String>), CliError> {
        let basis = match &self.basis {
            Some(_) => self.load_basis_file()?,
            None => (
                SemanticBasis::random_orthonormal(
                    self.attribute_names.len(),
                    latent_dim,
                    self.seed,
                    self.attribute_names.clone(),
                )?,
                None,
            ),
        };
        if basis.0.latent_dim() != latent_dim {
            return Err(config_err(format!(
                "basis has latent dimension {}, population has {latent_dim}",
                basis.0.latent_dim()
            )));
        }
        Ok(basis)
    }

    /// Budget at scale `budget_scale`.
    pub fn budget(&self, num_attributes: usize) -> Result<BudgetMatrix, CliError> {
        if self.epsilons.len() != num_attributes {
            return Err(config_err(format!(
                "{} epsilons for {num_attributes} attributes",
                self.epsilons.len()
            )));
        }
        let base = BudgetMatrix::from_spec(&BudgetSpec::new(self.epsilons.clone())?);
        Ok(base.rescale(self.budget_scale)?)
    }

    pub fn oracle_for(&self, pop: &SyntheticPopulation) -> Result<PrototypeOracle, CliError> {
        Ok(make_prototype_oracle(pop, self.embed_dim, self.temperature, self.seed)?)
    }

    pub fn build(&self) -> Result<Experiment, CliError> {
        self.build_with(self.population()?)
    }

    pub fn build_with(&self, population: SyntheticPopulation) -> Result<Experiment, CliError> {
        let (basis, warning) = self.basis(population.latent_dim())?;
        let budget = self.budget(basis.num_attributes())?;
        let oracle = self.oracle_for(&population)?;
        Ok(Experiment {
            population,
            oracle,
            basis,
            budget,
            warnings: warning.into_iter().collect(),
        })
    }

    pub fn resolve_output(&self, out: &Path) -> PathBuf {
        match &self.output_dir {
            Some(dir) if out.is_relative() => dir.join(out),
            _ => out.to_path_buf(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    DatasetSize,
    NumAttacked,
    Budget,
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "dataset-size" | "dataset_size" => Ok(Self::DatasetSize),
            "num-attacked" | "num_attacked" => Ok(Self::NumAttacked),
            "budget" => Ok(Self::Budget),
            other => Err(config_err(format!(
                "unknown sweep axis `{other}` (expected dataset-size, num-attacked or budget)"
            ))),
        }
    }
}
