use super::{check_attack_inputs, AttackOutcome, AttackTarget, PgdConfig, PgdStep};
use crate::error::Result;
use crate::oracle::{loss_grad_raw, ClassifierOracle};
use crate::rng::stream;
use crate::semgeo::{BudgetMatrix, SemanticBasis};

const MIN_GRAD_NORM: f64 = 1e-20;

struct Candidate {
    delta: Vec<f64>,
    energy: f64,
    predicted: usize,
    restart: usize,
}

/// Projected gradient ascent on the loss over `‖δ‖_{M,2} ≤ 1`.
///
/// Restart 0 starts from the clean point, later restarts from a uniform
/// sample of the ellipsoid. Each step moves an `M`-norm distance `α` (along
/// `M^{-1}g` by default, see [`PgdStep`]) and projects back. Every iterate is checked for misclassification and the
/// fooling iterate of least energy is kept. Without any fooling iterate the
/// highest-loss iterate is reported.
pub fn pgd_attack(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    m: &BudgetMatrix,
    target: &AttackTarget<'_>,
    cfg: &PgdConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    check_attack_inputs(oracle, basis, m, target)?;
    let n = basis.num_attributes();
    let w = target.code.as_slice();
    let y = target.label;

    let clean_pred = oracle.predict(w);
    if clean_pred != y {
        return Ok(AttackOutcome::clean_miss(target, "pgd", n, clean_pred));
    }

    let mut rng = stream(cfg.seed, target.identity_id);
    let mut best: Option<Candidate> = None;
    let mut best_loss = f64::NEG_INFINITY;
    let mut fallback = Candidate {
        delta: vec![0.0; n],
        energy: 0.0,
        predicted: y,
        restart: 0,
    };

    for restart in 0..cfg.restarts {
        let mut delta = if restart == 0 {
            vec![0.0; n]
        } else {
            m.sample_uniform(&mut rng)
        };
        for _ in 0..cfg.iterations {
            let (loss, grad) = loss_grad_raw(oracle, basis, w, &delta, y, cfg.loss_kind);
            if loss > best_loss {
                best_loss = loss;
                fallback = Candidate {
                    energy: m.norm(&delta),
                    delta: delta.clone(),
                    predicted: y,
                    restart,
                };
            }
            if crate::linalg::norm2(&grad) >= MIN_GRAD_NORM {
                let dir = match cfg.step_rule {
                    PgdStep::Steepest => m.apply_inverse(&grad),
                    PgdStep::RawGradient => grad,
                };
                let dnorm = m.norm(&dir);
                if dnorm > 0.0 && dnorm.is_finite() {
                    let scale = cfg.step_size / dnorm;
                    for (d, g) in delta.iter_mut().zip(&dir) {
                        *d += scale * g;
                    }
                    delta = m.project(&delta)?.point;
                }
            }

            let predicted = oracle.predict(&basis.displace(w, &delta));
            if predicted != y {
                let energy = m.norm(&delta);
                if best.as_ref().is_none_or(|b| energy < b.energy) {
                    best = Some(Candidate {
                        delta: delta.clone(),
                        energy,
                        predicted,
                        restart,
                    });
                }
            }
        }
        // The last iterate has not been scored yet.
        let (loss, _) = loss_grad_raw(oracle, basis, w, &delta, y, cfg.loss_kind);
        if loss > best_loss {
            best_loss = loss;
            fallback = Candidate {
                energy: m.norm(&delta),
                delta,
                predicted: y,
                restart,
            };
        }
    }

    let (success, c) = match best {
        Some(c) => (true, c),
        None => (false, fallback),
    };
    Ok(AttackOutcome {
        identity_id: target.identity_id,
        method: "pgd",
        success,
        delta: c.delta,
        energy: c.energy,
        predicted_class: c.predicted,
        restart_index: c.restart,
        clean_correct: true,
        diagnostic: None,
    })
}
