//! Ranking attributes by the energy adversarial perturbations spend on them.
//!
//! Each successful perturbation contributes a row of normalized energies
//! `δ̂_i = δ_i² m_i / ‖δ‖_{M,2}` (which sum to `‖δ‖_{M,2}`). A candidate
//! order is composed greedily, one winner per round, with a Friedman test on
//! the attributes still in play; adjacent pairs of the final order are then
//! validated with one-sided Wilcoxon signed-rank tests.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::semgeo::{BudgetMatrix, Perturbation};
use crate::stats::{friedman_test, wilcoxon_signed_rank};

/// How a round winner is picked among the remaining attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoteRule {
    /// Largest column sum of `δ̂`.
    #[default]
    ColumnSum,
    /// Best (highest) mean within-row rank of `δ̂`.
    MeanRank,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingResult {
    /// Attribute indices, most energy first.
    pub order: Vec<usize>,
    pub ordered_attributes: Vec<String>,
    pub adjacent_p_values: Vec<f64>,
    pub adjacent_significant: Vec<bool>,
    /// Friedman p-value of each composition round.
    pub round_friedman_p: Vec<f64>,
    pub n_samples: usize,
    pub alpha: f64,
}

pub fn normalized_energies(delta: &Perturbation, m: &BudgetMatrix) -> Result<Vec<f64>> {
    check_len("normalized energies", m.dim(), delta.len())?;
    let energy = m.norm(delta.as_slice());
    if energy == 0.0 {
        return Err(Error::DegeneratePerturbation);
    }
    Ok(delta
        .as_slice()
        .iter()
        .zip(m.diag())
        .map(|(d, mi)| d * d * mi / energy)
        .collect())
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ranking needs at least 2 perturbations, got {}",
            rows.len()
        )));
    }
    let n = rows[0].len();
    if n < 2 {
        return Err(Error::InsufficientData("ranking requires at least 2 attributes".into()));
    }
    for r in rows {
        check_len("energy row", n, r.len())?;
    }
    Ok(n)
}

pub fn compose_ranking(rows: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<f64>)> {
    compose_ranking_with(rows, VoteRule::ColumnSum)
}

/// Greedy composition: `N − 1` rounds, each recording the Friedman p-value
/// over the remaining columns before appending the round winner. A
/// non-significant round does not stop the ranking.
pub fn compose_ranking_with(rows: &[Vec<f64>], rule: VoteRule) -> Result<(Vec<usize>, Vec<f64>)> {
    let n_attr = check_rows(rows)?;
    let mut remaining: Vec<usize> = (0..n_attr).collect();
    let mut order = Vec::with_capacity(n_attr);
    let mut friedman_p = Vec::with_capacity(n_attr - 1);
    while remaining.len() > 1 {
        let sub: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| remaining.iter().map(|&j| r[j]).collect())
            .collect();
        friedman_p.push(friedman_test(&sub)?.p_value);
        let scores: Vec<f64> = match rule {
            VoteRule::ColumnSum => (0..remaining.len())
                .map(|j| sub.iter().map(|r| r[j]).sum())
                .collect(),
            VoteRule::MeanRank => {
                let mut acc = vec![0.0; remaining.len()];
                for r in &sub {
                    for (j, a) in acc.iter_mut().enumerate() {
                        let below = r.iter().filter(|v| **v < r[j]).count() as f64;
                        let ties = r.iter().filter(|v| **v == r[j]).count() as f64;
                        *a += below + (ties + 1.0) / 2.0;
                    }
                }
                acc
            }
        };
        // ties go to the lower attribute index; `remaining` stays sorted
        let mut win = 0;
        for j in 1..scores.len() {
            if scores[j] > scores[win] {
                win = j;
            }
        }
        order.push(remaining.remove(win));
    }
    order.push(remaining[0]);
    Ok((order, friedman_p))
}

/// Wilcoxon test for every adjacent pair of `order` (one-sided, "the
/// earlier attribute takes more energy"), significant iff `p < alpha`.
pub fn validate_ranking(
    rows: &[Vec<f64>],
    order: &[usize],
    round_friedman_p: Vec<f64>,
    attribute_names: &[String],
    alpha: f64,
) -> Result<RankingResult> {
    let n_attr = check_rows(rows)?;
    check_len("ranking order", n_attr, order.len())?;
    check_len("attribute names", n_attr, attribute_names.len())?;
    let mut seen = vec![false; n_attr];
    for &i in order {
        if i >= n_attr || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidValue("ranking order is not a permutation".into()));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let column = |j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };
    let mut p_values = Vec::with_capacity(n_attr - 1);
    for pair in order.windows(2) {
        p_values.push(wilcoxon_signed_rank(&column(pair[0]), &column(pair[1]))?.p_value);
    }
    Ok(RankingResult {
        order: order.to_vec(),
        ordered_attributes: order.iter().map(|&i| attribute_names[i].clone()).collect(),
        adjacent_significant: p_values.iter().map(|p| *p < alpha).collect(),
        adjacent_p_values: p_values,
        round_friedman_p,
        n_samples: rows.len(),
        alpha,
    })
}

/// Normalized-energy rows of a set of perturbations, skipping zero ones.
pub fn energy_rows<'a, I>(deltas: I, m: &BudgetMatrix) -> Result<Vec<Vec<f64>>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut rows = Vec::new();
    for d in deltas {
        let p = Perturbation::new(d.to_vec())?;
        if p.is_zero() {
            continue;
        }
        rows.push(normalized_energies(&p, m)?);
    }
    Ok(rows)
}

/// Compose and validate in one go.
pub fn rank_attributes(rows: &[Vec<f64>], attribute_names: &[String], alpha: f64) -> Result<RankingResult> {
    let (order, friedman_p) = compose_ranking(rows)?;
    validate_ranking(rows, &order, friedman_p, attribute_names, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn normalized_energy_examples() {
        let m = BudgetMatrix::from_diag(vec![4.0, 25.0]).unwrap();
        let d = Perturbation::new(vec![0.5, 0.2]).unwrap();
        let e = normalized_energies(&d, &m).unwrap();
        for v in e {
            assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        }
        let single = Perturbation::new(vec![0.3, 0.0]).unwrap();
        let e = normalized_energies(&single, &m).unwrap();
        assert!((e[0] - m.norm(single.as_slice())).abs() < 1e-12);
        assert_eq!(e[1], 0.0);
        assert_eq!(
            normalized_energies(&Perturbation::zeros(2), &m),
            Err(Error::DegeneratePerturbation)
        );
    }

    #[test]
    fn two_attribute_ranking() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0 + i as f64, 0.5]).collect();
        let (order, fp) = compose_ranking(&rows).unwrap();
        assert_eq!(order, vec![0, 1]);
        assert_eq!(fp.len(), 1);
    }

    #[test]
    fn planted_dominance_is_ranked_first() {
        let mut rng = stream(42, 0);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let energy = 0.5 + rng.random::<f64>();
                [0.05, 0.05, 0.8, 0.05, 0.05]
                    .iter()
                    .map(|s| s * energy + 0.005 * rng.random::<f64>())
                    .collect()
            })
            .collect();
        let (order, fp) = compose_ranking(&rows).unwrap();
        assert_eq!(order[0], 2);
        assert!(fp[0] < 0.01);
    }

    #[test]
    fn identical_adjacent_columns_are_not_significant() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![2.0 + i as f64, 1.0, 1.0]).collect();
        let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let r = rank_attributes(&rows, &names, 0.01).unwrap();
        assert_eq!(r.order, vec![0, 1, 2]);
        assert!(r.adjacent_significant[0]);
        assert_eq!(r.adjacent_p_values[1], 1.0);
        assert!(!r.adjacent_significant[1]);
        assert_eq!(r.ordered_attributes, vec!["x", "y", "z"]);
    }

    #[test]
    fn insufficient_data() {
        assert!(matches!(compose_ranking(&[vec![1.0, 2.0]]), Err(Error::InsufficientData(_))));
        assert!(matches!(
            compose_ranking(&[vec![1.0], vec![2.0]]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn mean_rank_rule_agrees_on_clear_data() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![0.1, 3.0 + i as f64 * 0.01, 1.0]).collect();
        let (order, _) = compose_ranking_with(&rows, VoteRule::MeanRank).unwrap();
        assert_eq!(order, vec![1, 2, 0]);
    }

    proptest! {
        #[test]
        fn order_is_a_scale_invariant_permutation(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 4), 2..30),
            scale in 0.01f64..100.0,
        ) {
            let (order, _) = compose_ranking(&rows).unwrap();
            let mut sorted = order.clone();
            sorted.sort();
            prop_assert_eq!(sorted, vec![0, 1, 2, 3]);
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
            // column sums can only reorder through rounding on near-ties
            let sums: Vec<f64> = (0..4).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
            let near_tie = (0..4).any(|a| (0..4).any(|b| a != b && (sums[a] - sums[b]).abs() < 1e-9 * (1.0 + sums[a])));
            if !near_tie {
                prop_assert_eq!(compose_ranking(&scaled).unwrap().0, order);
            }
        }

        #[test]
        fn normalized_energies_sum_to_energy(
            diag in prop::collection::vec(0.1f64..30.0, 5),
            d in prop::collection::vec(-3.0f64..3.0, 5),
        ) {
            let m = BudgetMatrix::from_diag(diag).unwrap();
            let p = Perturbation::new(d).unwrap();
            prop_assume!(!p.is_zero());
            let e = normalized_energies(&p, &m).unwrap();
            prop_assert!((e.iter().sum::<f64>() - m.norm(p.as_slice())).abs() <= 1e-9);
        }
    }
}
