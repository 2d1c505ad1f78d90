//! Attacks over the identity-preserving set `{Vᵀδ : ‖δ‖_{M,2} ≤ 1}`.
//!
//! [`pgd_attack`] maximizes a loss inside the ellipsoid; [`fab_attack`]
//! searches for the misclassifying perturbation of smallest `M`-norm and may
//! therefore report energies above 1. Campaigns run either attack over many
//! identities with per-identity random streams, so results do not depend on
//! the number of worker threads.

mod fab;
mod pgd;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::{ClassifierOracle, LossKind};
use crate::semgeo::{BudgetMatrix, LatentCode, SemanticBasis};

pub use fab::{fab_attack, hyperplane_project_m};
pub use pgd::pgd_attack;

/// Direction of a PGD step; both have `M`-norm `step_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PgdStep {
    /// Steepest ascent for the `M`-norm: `α · M^{-1}g / ‖g‖_{M^{-1},2}`.
    #[default]
    Steepest,
    /// Raw gradient rescaled: `α · g / ‖g‖_{M,2}`. Slow to turn towards the
    /// best boundary point on strongly anisotropic budgets.
    RawGradient,
}

impl std::str::FromStr for PgdStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steepest" => Ok(Self::Steepest),
            "raw" | "raw_gradient" => Ok(Self::RawGradient),
            other => Err(Error::Config(format!("unknown PGD step rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    pub iterations: usize,
    pub restarts: usize,
    /// Step length in `M`-norm units.
    pub step_size: f64,
    pub step_rule: PgdStep,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            restarts: 10,
            step_size: 0.25,
            step_rule: PgdStep::Steepest,
            loss_kind: LossKind::CrossEntropy,
            seed: 0,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::Config("PGD iterations and restarts must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("PGD step size {} must be positive", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabConfig {
    pub iterations: usize,
    pub restarts: usize,
    pub target_classes: usize,
    pub alpha_max: f64,
    pub beta: f64,
    pub eta: f64,
    /// Bisection along the segment from the clean point to the best
    /// adversarial perturbation once the search ends.
    pub final_search: bool,
    pub final_search_steps: usize,
    pub seed: u64,
}

impl Default for FabConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            restarts: 10,
            target_classes: 10,
            alpha_max: 0.1,
            beta: 0.9,
            eta: 1.05,
            final_search: true,
            final_search_steps: 10,
            seed: 0,
        }
    }
}

impl FabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 || self.target_classes == 0 {
            return Err(Error::Config(
                "FAB iterations, restarts and target classes must be >= 1".into(),
            ));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("FAB beta {} must lie in (0, 1)", self.beta)));
        }
        if !(self.eta >= 1.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("FAB eta {} must be >= 1", self.eta)));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max <= 1.0) {
            return Err(Error::Config(format!("FAB alpha_max {} must lie in (0, 1]", self.alpha_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackMethod {
    Pgd(PgdConfig),
    Fab(FabConfig),
}

impl AttackMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMethod::Pgd(_) => "pgd",
            AttackMethod::Fab(_) => "fab",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AttackMethod::Pgd(c) => c.validate(),
            AttackMethod::Fab(c) => c.validate(),
        }
    }
}

/// One identity to attack.
#[derive(Debug, Clone, Copy)]
pub struct AttackTarget<'a> {
    pub identity_id: u64,
    pub code: &'a LatentCode,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub identity_id: u64,
    pub method: &'static str,
    /// Final prediction differs from the label.
    pub success: bool,
    pub delta: Vec<f64>,
    /// `‖δ‖_{M,2}`
    pub energy: f64,
    pub predicted_class: usize,
    pub restart_index: usize,
    pub clean_correct: bool,
    pub diagnostic: Option<String>,
}

impl AttackOutcome {
    fn clean_miss(target: &AttackTarget<'_>, method: &'static str, n: usize, predicted: usize) -> Self {
        Self {
            identity_id: target.identity_id,
            method,
            success: true,
            delta: vec![0.0; n],
            energy: 0.0,
            predicted_class: predicted,
            restart_index: 0,
            clean_correct: false,
            diagnostic: None,
        }
    }

    /// Robust means correctly classified and not fooled.
    pub fn is_robust(&self) -> bool {
        self.clean_correct && !self.success
    }
}

pub(crate) fn check_attack_inputs(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    m: &BudgetMatrix,
    target: &AttackTarget<'_>,
) -> Result<()> {
    let shape = |context, expected, actual| {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::Shape {
                context,
                expected,
                actual,
            })
        }
    };
    shape("budget dimension", basis.num_attributes(), m.dim())?;
    shape("oracle latent dim", basis.latent_dim(), oracle.latent_dim())?;
    shape("latent code", basis.latent_dim(), target.code.len())?;
    if target.label >= oracle.num_classes() {
        return Err(Error::Config(format!(
            "label {} out of range for {} classes",
            target.label,
            oracle.num_classes()
        )));
    }
    Ok(())
}

/// Runs one attack per target. Outcomes come back in input order; a
/// numerical failure on one identity becomes a failed record carrying a
/// diagnostic instead of aborting the campaign.
pub fn run_campaign(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    m: &BudgetMatrix,
    targets: &[AttackTarget<'_>],
    method: &AttackMethod,
) -> Result<Vec<AttackOutcome>> {
    if targets.is_empty() {
        return Err(Error::Config("campaign needs at least one target".into()));
    }
    method.validate()?;
    targets
        .par_iter()
        .map(|t| {
            let res = match method {
                AttackMethod::Pgd(cfg) => pgd_attack(oracle, basis, m, t, cfg),
                AttackMethod::Fab(cfg) => fab_attack(oracle, basis, m, t, cfg),
            };
            match res {
                Err(Error::Numerical(msg)) => Ok(AttackOutcome {
                    identity_id: t.identity_id,
                    method: method.name(),
                    success: false,
                    delta: vec![0.0; basis.num_attributes()],
                    energy: 0.0,
                    predicted_class: t.label,
                    restart_index: 0,
                    clean_correct: oracle.predict(t.code.as_slice()) == t.label,
                    diagnostic: Some(msg),
                }),
                other => other,
            }
        })
        .collect()
}

/// Share of outcomes that are correctly classified and were not fooled.
pub fn robust_accuracy(outcomes: &[AttackOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::UndefinedStatistic);
    }
    let robust = outcomes.iter().filter(|o| o.is_robust()).count();
    Ok(robust as f64 / outcomes.len() as f64)
}

/// Share of outcomes that are clean-correct.
pub fn clean_accuracy(outcomes: &[AttackOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::UndefinedStatistic);
    }
    Ok(outcomes.iter().filter(|o| o.clean_correct).count() as f64 / outcomes.len() as f64)
}

/// Accuracy at budget `x` for minimum-perturbation results: an identity
/// counts as robust when it is clean-correct and no adversarial example of
/// energy `≤ x` was found.
pub fn accuracy_at_budget(outcomes: &[AttackOutcome], budget: f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::UndefinedStatistic);
    }
    let robust = outcomes
        .iter()
        .filter(|o| o.clean_correct && (!o.success || o.energy > budget))
        .count();
    Ok(robust as f64 / outcomes.len() as f64)
}

/// Mean energy over successful, clean-correct outcomes.
pub fn mean_energy(outcomes: &[AttackOutcome]) -> Option<f64> {
    let e: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.success && o.clean_correct)
        .map(|o| o.energy)
        .collect();
    (!e.is_empty()).then(|| e.iter().sum::<f64>() / e.len() as f64)
}

/// Attack restricted to a single attribute: `V` and `M` keep only row and
/// entry `attribute_index`. Perturbations are reported in the full
/// `N`-dimensional coordinates (zeros elsewhere).
pub fn single_attribute_ablation(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    m: &BudgetMatrix,
    targets: &[AttackTarget<'_>],
    method: &AttackMethod,
    attribute_index: usize,
) -> Result<Vec<AttackOutcome>> {
    let sub_basis = basis.restrict(attribute_index)?;
    let sub_m = m.restrict(attribute_index)?;
    let n = basis.num_attributes();
    let mut outcomes = run_campaign(oracle, &sub_basis, &sub_m, targets, method)?;
    for o in &mut outcomes {
        let mut full = vec![0.0; n];
        full[attribute_index] = o.delta[0];
        o.delta = full;
    }
    Ok(outcomes)
}
