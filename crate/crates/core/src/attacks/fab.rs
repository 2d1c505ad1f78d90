//! Targeted FAB adapted to the `M`-norm.
//!
//! Inner products of the primal norm become `uᵀMv` and those of the dual
//! norm `uᵀM^{-1}v`, so the closest point of a hyperplane `{aᵀx = c}` in the
//! `M`-norm is reached along `M^{-1}a`.

use super::{check_attack_inputs, AttackOutcome, AttackTarget, FabConfig};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::oracle::ClassifierOracle;
use crate::rng::stream;
use crate::semgeo::{BudgetMatrix, Perturbation, SemanticBasis};

/// `M`-norm projection of `δ` onto the hyperplane through the linearization
/// `g(x) ≈ v + aᵀ(x − δ)`: `δ − v / (aᵀM^{-1}a) · M^{-1}a`.
pub fn hyperplane_project_m(delta: &Perturbation, a: &[f64], v: f64, m: &BudgetMatrix) -> Result<Perturbation> {
    check_len("hyperplane normal", delta.len(), a.len())?;
    check_len("budget dimension", delta.len(), m.dim())?;
    Perturbation::new(hyperplane_step(delta.as_slice(), a, v, m)?)
}

fn hyperplane_step(delta: &[f64], a: &[f64], v: f64, m: &BudgetMatrix) -> Result<Vec<f64>> {
    let dual_sq = {
        let d = m.dual_norm(a);
        d * d
    };
    if dual_sq.is_nan() || dual_sq <= 0.0 || !dual_sq.is_finite() {
        return Err(Error::DegenerateHyperplane);
    }
    let dir = m.apply_inverse(a);
    let t = v / dual_sq;
    Ok(delta.iter().zip(&dir).map(|(d, u)| d - t * u).collect())
}

struct Best {
    delta: Vec<f64>,
    energy: f64,
    predicted: usize,
    restart: usize,
}

/// Minimum-`M`-norm adversarial search, targeted at the top runner-up
/// classes of the clean logits.
pub fn fab_attack(
    oracle: &dyn ClassifierOracle,
    basis: &SemanticBasis,
    m: &BudgetMatrix,
    target: &AttackTarget<'_>,
    cfg: &FabConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    check_attack_inputs(oracle, basis, m, target)?;
    let n = basis.num_attributes();
    let w = target.code.as_slice();
    let y = target.label;

    let clean_logits = oracle.logits(w);
    let clean_pred = linalg::argmax(&clean_logits);
    if clean_pred != y {
        return Ok(AttackOutcome::clean_miss(target, "fab", n, clean_pred));
    }

    let mut classes: Vec<usize> = (0..clean_logits.len()).filter(|&c| c != y).collect();
    // Descending logit; the stable sort keeps lower indices first on ties.
    classes.sort_by(|&a, &b| clean_logits[b].total_cmp(&clean_logits[a]));
    classes.truncate(cfg.target_classes);

    let mut rng = stream(cfg.seed, target.identity_id);
    let mut best: Option<Best> = None;
    let mut skipped = Vec::new();

    // gradient of logit_t − logit_y with respect to δ, and its value
    let linearize = |delta: &[f64], t: usize| -> (f64, Vec<f64>) {
        let x = basis.displace(w, delta);
        let logits = oracle.logits(&x);
        let mut u = vec![0.0; logits.len()];
        u[t] = 1.0;
        u[y] = -1.0;
        let g = basis.pull_back(&oracle.logits_vjp(&x, &u));
        (logits[t] - logits[y], g)
    };

    'targets: for &t in &classes {
        for restart in 0..cfg.restarts {
            let mut delta = if restart == 0 {
                vec![0.0; n]
            } else {
                let scale = best.as_ref().map_or(1.0, |b| 0.5 * b.energy);
                m.sample_uniform(&mut rng).into_iter().map(|v| v * scale).collect()
            };
            for _ in 0..cfg.iterations {
                let (v, a) = linearize(&delta, t);
                let to_plane = match hyperplane_step(&delta, &a, v, m) {
                    Ok(p) => p,
                    Err(Error::DegenerateHyperplane) => {
                        skipped.push(t);
                        continue 'targets;
                    }
                    Err(e) => return Err(e),
                };
                let step_cur: Vec<f64> = to_plane.iter().zip(&delta).map(|(p, d)| p - d).collect();
                // same hyperplane, seen from the clean point
                let v_orig = v - linalg::dot(&a, &delta);
                let step_orig = hyperplane_step(&vec![0.0; n], &a, v_orig, m)?;

                let n_cur = m.norm(&step_cur);
                let n_orig = m.norm(&step_orig);
                let alpha = if n_cur + n_orig > 0.0 {
                    (n_cur / (n_cur + n_orig)).min(cfg.alpha_max)
                } else {
                    cfg.alpha_max
                };
                let mut next: Vec<f64> = delta
                    .iter()
                    .zip(&step_cur)
                    .zip(&step_orig)
                    .map(|((d, sc), so)| (1.0 - alpha) * (d + cfg.eta * sc) + alpha * cfg.eta * so)
                    .collect();
                if next.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numerical("FAB iterate became non-finite".into()));
                }
                let predicted = oracle.predict(&basis.displace(w, &next));
                if predicted != y {
                    let energy = m.norm(&next);
                    if best.as_ref().is_none_or(|b| energy < b.energy) {
                        best = Some(Best {
                            delta: next.clone(),
                            energy,
                            predicted,
                            restart,
                        });
                    }
                    // backward step towards the clean point
                    next.iter_mut().for_each(|x| *x *= cfg.beta);
                }
                delta = next;
            }
        }
    }

    if cfg.final_search {
        if let Some(b) = best.as_mut() {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..cfg.final_search_steps {
                let mid = 0.5 * (lo + hi);
                let cand: Vec<f64> = b.delta.iter().map(|x| x * mid).collect();
                let predicted = oracle.predict(&basis.displace(w, &cand));
                if predicted != y {
                    hi = mid;
                    b.predicted = predicted;
                } else {
                    lo = mid;
                }
            }
            if hi < 1.0 {
                b.delta.iter_mut().for_each(|x| *x *= hi);
                b.energy = m.norm(&b.delta);
            }
        }
    }

    let diagnostic = (!skipped.is_empty()).then(|| format!("degenerate gradient for target classes {skipped:?}"));
    Ok(match best {
        Some(b) => AttackOutcome {
            identity_id: target.identity_id,
            method: "fab",
            success: true,
            delta: b.delta,
            energy: b.energy,
            predicted_class: b.predicted,
            restart_index: b.restart,
            clean_correct: true,
            diagnostic,
        },
        None => AttackOutcome {
            identity_id: target.identity_id,
            method: "fab",
            success: false,
            delta: vec![0.0; n],
            energy: 0.0,
            predicted_class: y,
            restart_index: 0,
            clean_correct: true,
            diagnostic,
        },
    })
}
