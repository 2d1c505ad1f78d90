//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 3 4`.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use semrob_core::attacks::{fab_attack, pgd_attack, AttackTarget, FabConfig, PgdConfig};
use semrob_core::certify::{certify, smooth_sample_counts, SmoothingConfig, SmoothingMode};
use semrob_core::oracle::LinearOracle;
use semrob_core::ranking::{energy_rows, rank_attributes};
use semrob_core::rng::stream;
use semrob_core::stats::{
    clopper_pearson_lower, friedman_test, std_normal_cdf, wilcoxon_signed_rank_with, WilcoxonMethod,
};
use semrob_core::{BudgetMatrix, ClassifierOracle, LatentCode, SemanticBasis};
use semrob_cli::{commands::run_sweep, ExperimentConfig, SweepAxis};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Diagonal budget with log-uniform semi-axes in [0.1, 2].
fn random_budget(rng: &mut ChaCha12Rng, n: usize) -> BudgetMatrix {
    let diag = (0..n)
        .map(|_| {
            let eps = (rng.random_range(0.1f64.ln()..2f64.ln())).exp();
            1.0 / (eps * eps)
        })
        .collect();
    BudgetMatrix::from_diag(diag).unwrap()
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("attr{i}")).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn m_norm(diag: &[f64], x: &[f64]) -> f64 {
    x.iter().zip(diag).map(|(v, m)| v * v * m).sum::<f64>().sqrt()
}

fn dual_norm(diag: &[f64], a: &[f64]) -> f64 {
    a.iter().zip(diag).map(|(v, m)| v * v / m).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------

fn projection_oracle() -> Verdict {
    const INSTANCES: u64 = 1000;
    const SURFACE: usize = 1_000_000;
    let start = Instant::now();
    let failures: Vec<String> = (0..INSTANCES)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = rng(1000 + i);
            let n = r.random_range(1..=6);
            let m = random_budget(&mut r, n);
            let diag = m.diag().to_vec();
            let dir = gaussian(&mut r, n);
            let target = r.random_range(1.01..5.0);
            let scale = target / m_norm(&diag, &dir);
            let delta: Vec<f64> = dir.iter().map(|v| v * scale).collect();
            let proj = m.project(&delta).unwrap();
            let p = &proj.point;

            let surface = (m_norm(&diag, p) - 1.0).abs();
            // δ − δ* = λ M δ*
            let kkt = delta
                .iter()
                .zip(p)
                .zip(&diag)
                .map(|((d, x), mi)| (d - x - proj.multiplier * mi * x).powi(2))
                .sum::<f64>()
                .sqrt();
            let dist = |x: &[f64]| -> f64 { x.iter().zip(&delta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() };
            let ours = dist(p);
            let mut best_sample = f64::INFINITY;
            let mut u = vec![0.0; n];
            for _ in 0..SURFACE {
                let mut s = 0.0f64;
                for v in u.iter_mut() {
                    *v = r.sample(StandardNormal);
                    s += *v * *v;
                }
                let inv = 1.0 / s.sqrt();
                for (v, mi) in u.iter_mut().zip(&diag) {
                    *v *= inv / mi.sqrt();
                }
                best_sample = best_sample.min(dist(&u));
            }
            let beaten = ours > best_sample * (1.0 + 1e-12);
            (surface > 1e-9 || kkt > 1e-8 || beaten).then(|| {
                format!("instance {i}: surface {surface:e}, KKT {kkt:e}, d²={ours} vs sampled {best_sample}")
            })
        })
        .collect();
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(120);
    verdict(
        ok,
        format!(
            "{INSTANCES} instances x {SURFACE} surface samples, {} failures, {:.1}s{}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn isotropic_reduction() -> Verdict {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = r.random_range(1..=8);
        let c = r.random_range(0.05..20.0);
        let m = BudgetMatrix::from_diag(vec![c; n]).unwrap();
        let x: Vec<f64> = gaussian(&mut r, n).iter().map(|v| v * r.random_range(0.01..5.0)).collect();
        let norm = c.sqrt() * dot(&x, &x).sqrt();
        let expected: Vec<f64> = if norm <= 1.0 { x.clone() } else { x.iter().map(|v| v / norm).collect() };
        let got = m.project(&x).unwrap().point;
        for (g, e) in got.iter().zip(&expected) {
            worst = worst.max((g - e).abs());
        }
    }
    verdict(worst <= 1e-9, format!("10000 points, max deviation from radial scaling {worst:e}"))
}

/// Binary classifier in attribute coordinates: class 1 wins iff `aᵀδ > v`.
struct BinaryInstance {
    basis: SemanticBasis,
    oracle: LinearOracle,
    code: LatentCode,
    m: BudgetMatrix,
    a: Vec<f64>,
    v: f64,
}

fn binary_instance(seed: u64, distance: f64) -> BinaryInstance {
    let mut r = rng(seed);
    let n = r.random_range(1..=6);
    let d = n + r.random_range(0..=6);
    let basis = SemanticBasis::random_orthonormal(n, d, seed, names(n)).unwrap();
    let m = random_budget(&mut r, n);
    let a = gaussian(&mut r, n);
    let v = distance * dual_norm(m.diag(), &a);
    let w0 = gaussian(&mut r, d);
    let oracle = LinearOracle::in_attribute_space(&basis, &w0, &[vec![0.0; n], a.clone()], &[0.0, -v]).unwrap();
    BinaryInstance { basis, oracle, code: LatentCode::new(w0).unwrap(), m, a, v }
}

fn pgd_completeness() -> Verdict {
    let cfg = PgdConfig::default();
    let run = |seed: u64, distance: f64| {
        let inst = binary_instance(seed, distance);
        let target = AttackTarget { identity_id: seed, code: &inst.code, label: 0 };
        let out = pgd_attack(&inst.oracle, &inst.basis, &inst.m, &target, &cfg).unwrap();
        let really_fooled = inst.oracle.predict(&inst.basis.displace(inst.code.as_slice(), &out.delta)) != 0;
        out.success && really_fooled && out.energy <= 1.0 + 1e-9
    };
    let reachable: usize = (0..500u64)
        .into_par_iter()
        .filter(|&s| run(30_000 + s, rng(s).random_range(0.05..=0.9)))
        .count();
    let unreachable: usize = (0..100u64)
        .into_par_iter()
        .filter(|&s| run(40_000 + s, rng(s).random_range(1.001..3.0)))
        .count();
    verdict(
        reachable == 500 && unreachable == 0,
        format!("reachable fooled {reachable}/500, unreachable fooled {unreachable}/100"),
    )
}

fn fab_optimality() -> Verdict {
    let start = Instant::now();
    let results: Vec<(f64, f64)> = (0..200u64)
        .into_par_iter()
        .map(|s| {
            let mut r = rng(50_000 + s);
            let n = r.random_range(1..=6);
            let classes = r.random_range(2..=10);
            let d = n + r.random_range(0..=6);
            let basis = SemanticBasis::random_orthonormal(n, d, s, names(n)).unwrap();
            let m = random_budget(&mut r, n);
            let mut rows = vec![vec![0.0; n]];
            let mut offsets = vec![0.0];
            let mut analytic = f64::INFINITY;
            for _ in 1..classes {
                let a = gaussian(&mut r, n);
                let dist = r.random_range(0.1..3.0);
                let v = dist * dual_norm(m.diag(), &a);
                analytic = analytic.min(v / dual_norm(m.diag(), &a));
                rows.push(a);
                offsets.push(-v);
            }
            let w0 = gaussian(&mut r, d);
            let oracle = LinearOracle::in_attribute_space(&basis, &w0, &rows, &offsets).unwrap();
            let code = LatentCode::new(w0).unwrap();
            let target = AttackTarget { identity_id: s, code: &code, label: 0 };
            let out = fab_attack(&oracle, &basis, &m, &target, &FabConfig::default()).unwrap();
            let fooled = out.success && oracle.predict(&basis.displace(code.as_slice(), &out.delta)) != 0;
            (if fooled { out.energy } else { f64::INFINITY }, analytic)
        })
        .collect();
    let elapsed = start.elapsed();
    let within = results.iter().filter(|(e, a)| (e - a).abs() <= 0.05 * a).count();
    let below = results.iter().filter(|(e, a)| *e < a * (1.0 - 1e-9)).count();
    verdict(
        within >= 190 && below == 0 && elapsed < Duration::from_secs(300),
        format!(
            "{within}/200 within 5% of the analytic minimum, {below} below it, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn sigma_eff(cfg: &SmoothingConfig, m: &BudgetMatrix, a: &[f64]) -> f64 {
    cfg.noise_std(m).iter().zip(a).map(|(s, ai)| (s * ai).powi(2)).sum::<f64>().sqrt()
}

fn certification_soundness() -> Verdict {
    let modes = [SmoothingMode::Isotropic, SmoothingMode::Anisotropic];
    let failures: usize = (0..200u64)
        .into_par_iter()
        .map(|s| {
            let mut r = rng(60_000 + s);
            let inst = binary_instance(60_000 + s, r.random_range(0.05..3.0));
            let cfg = SmoothingConfig {
                mode: modes[(s % 2) as usize],
                sigma: r.random_range(0.1..2.0),
                seed: s,
                ..Default::default()
            };
            let p = vec![0.0; inst.a.len()];
            let res = certify(&inst.oracle, &inst.basis, &inst.m, &inst.code, &p, 0, s, &cfg, &mut stream(cfg.seed, s))
                .unwrap();
            let boundary = inst.v / sigma_eff(&cfg, &inst.m, &inst.a);
            usize::from(!res.abstain && (res.predicted_class != 0 || res.mahalanobis_radius > boundary))
        })
        .sum();
    // binomial(200, 1e-3): mean 0.2, upper 3σ ≈ 1.54
    let allowed = (200.0 * 1e-3 + 3.0 * (200.0 * 1e-3 * (1.0 - 1e-3f64)).sqrt()).floor() as usize;

    let inst = binary_instance(7, 1.0);
    let base = SmoothingConfig { sigma: 1.0, seed: 3, ..Default::default() };
    let boundary = inst.v / sigma_eff(&base, &inst.m, &inst.a);
    let p_true = std_normal_cdf(boundary);
    let p = vec![0.0; inst.a.len()];
    let mut lowers = Vec::new();
    let mut radii = Vec::new();
    for n in [1_000u64, 10_000, 100_000] {
        let cfg = SmoothingConfig { n, ..base.clone() };
        let res = certify(&inst.oracle, &inst.basis, &inst.m, &inst.code, &p, 0, 0, &cfg, &mut stream(cfg.seed, 0))
            .unwrap();
        lowers.push((n, res.p_a_lower));
        radii.push(res.mahalanobis_radius);
    }
    // growth within the sampling band of the smaller run, ceiling respected
    let monotone = lowers.windows(2).all(|w| {
        let band = 3.0 * (p_true * (1.0 - p_true) / w[0].0 as f64).sqrt();
        w[0].1 <= w[1].1 + band
    });
    let below_ceiling = radii.iter().all(|r| *r <= boundary);
    verdict(
        failures <= allowed && monotone && below_ceiling,
        format!(
            "{failures} unsound certificates of 200 (allowed {allowed}); radii {:.4?} vs ceiling {boundary:.4} for n = 1e3, 1e4, 1e5",
            radii
        ),
    )
}

fn smoothing_closed_form() -> Verdict {
    let mut worst_z: f64 = 0.0;
    let mut misses = 0;
    for mode in [SmoothingMode::Isotropic, SmoothingMode::Anisotropic] {
        for s in 0..20u64 {
            let mut r = rng(70_000 + s);
            let inst = binary_instance(70_000 + s, r.random_range(0.0..2.0));
            let cfg = SmoothingConfig { mode, sigma: r.random_range(0.2..2.0), seed: s, ..Default::default() };
            let p = vec![0.0; inst.a.len()];
            let n = 10_000;
            let counts = smooth_sample_counts(
                &inst.oracle,
                &inst.basis,
                &inst.m,
                &inst.code,
                &p,
                &cfg,
                n,
                &mut stream(cfg.seed, s),
            )
            .unwrap();
            let expected = std_normal_cdf(inst.v / sigma_eff(&cfg, &inst.m, &inst.a));
            let freq = counts[0] as f64 / n as f64;
            let sd = (expected * (1.0 - expected) / n as f64).sqrt().max(1e-12);
            let z = (freq - expected).abs() / sd;
            worst_z = worst_z.max(z);
            if z > 3.0 {
                misses += 1;
            }
        }
    }
    verdict(misses == 0, format!("40 instances, worst deviation {worst_z:.2} binomial sd"))
}

/// Average ranks (1-based) with ties sharing the mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// One-sided ("x greater") exact p-value by enumerating every sign pattern.
fn wilcoxon_enumerated(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let mut hits = 0u64;
    for pattern in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| pattern >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Friedman chi-square with the usual tie correction.
fn friedman_reference(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let k = rows[0].len();
    let kf = k as f64;
    let mut sums = vec![0.0; k];
    let mut ties = 0.0;
    for row in rows {
        for (s, r) in sums.iter_mut().zip(average_ranks(row)) {
            *s += r;
        }
        let mut sorted = row.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < k {
            let mut j = i;
            while j + 1 < k && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            ties += t * t * t - t;
            i = j + 1;
        }
    }
    let q = 12.0 / (n * kf * (kf + 1.0)) * sums.iter().map(|s| s * s).sum::<f64>() - 3.0 * n * (kf + 1.0);
    q / (1.0 - ties / (n * (kf * kf * kf - kf)))
}

fn statistical_oracles() -> Verdict {
    let mut problems = Vec::new();

    let p = wilcoxon_signed_rank_with(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], WilcoxonMethod::Exact)
        .unwrap()
        .p_value;
    if (p - 0.03125).abs() > 1e-12 {
        problems.push(format!("d = (1..5): p = {p}"));
    }
    let mut r = rng(8);
    let mut worst_w: f64 = 0.0;
    for _ in 0..300 {
        let n = r.random_range(1..=12);
        // coarse values force ties and zero differences
        let x: Vec<f64> = (0..n).map(|_| (r.random_range(-4..=6) as f64) * 0.5).collect();
        let y: Vec<f64> = (0..n).map(|_| (r.random_range(-4..=4) as f64) * 0.5).collect();
        if x.iter().zip(&y).all(|(a, b)| a == b) {
            continue;
        }
        let ours = wilcoxon_signed_rank_with(&x, &y, WilcoxonMethod::Exact).unwrap().p_value;
        worst_w = worst_w.max((ours - wilcoxon_enumerated(&x, &y)).abs());
    }
    if worst_w > 1e-12 {
        problems.push(format!("Wilcoxon deviation {worst_w:e}"));
    }

    let mut worst_f: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(2..=40);
        let k = r.random_range(2..=7);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| r.random_range(0..5) as f64).collect())
            .collect();
        if rows.iter().all(|row| row.iter().all(|v| *v == row[0])) {
            continue;
        }
        let ours = friedman_test(&rows).unwrap().statistic;
        worst_f = worst_f.max((ours - friedman_reference(&rows)).abs());
    }
    if worst_f > 1e-6 {
        problems.push(format!("Friedman deviation {worst_f:e}"));
    }

    let mut worst_cp: f64 = 0.0;
    for n in [1u64, 2, 10, 100, 1000, 10_000] {
        for alpha in [1e-3, 0.01, 0.05] {
            let got = clopper_pearson_lower(n, n, alpha).unwrap();
            worst_cp = worst_cp.max((got - alpha.powf(1.0 / n as f64)).abs());
        }
    }
    let cp = clopper_pearson_lower(100, 100, 1e-3).unwrap();
    if worst_cp > 1e-12 || (cp - 0.933_254_300_796_991).abs() > 1e-12 {
        problems.push(format!("Clopper–Pearson deviation {worst_cp:e}"));
    }

    let detail = format!(
        "Wilcoxon max |Δp| {worst_w:e}, Friedman max |Δstat| {worst_f:e}, CP(k=n) max |Δ| {worst_cp:e}"
    );
    if problems.is_empty() {
        verdict(true, detail)
    } else {
        verdict(false, format!("{detail}; {}", problems.join("; ")))
    }
}

fn ranking_recovery() -> Verdict {
    const N_ATTR: usize = 5;
    let shares = [0.34, 0.25, 0.18, 0.13, 0.10];
    let recovered = (0..100u64)
        .into_par_iter()
        .filter(|&s| {
            let mut r = rng(80_000 + s);
            let m = random_budget(&mut r, N_ATTR);
            // planted order: a random permutation of the attributes
            let mut order: Vec<usize> = (0..N_ATTR).collect();
            for i in (1..N_ATTR).rev() {
                order.swap(i, r.random_range(0..=i));
            }
            let deltas: Vec<Vec<f64>> = (0..500)
                .map(|_| {
                    let energy = r.random_range(0.2..3.0);
                    let mut delta = vec![0.0; N_ATTR];
                    for (rank, &attr) in order.iter().enumerate() {
                        let share = shares[rank] * (1.0 + r.random_range(-0.3..0.3));
                        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
                        delta[attr] = sign * (energy * share / m.diag()[attr]).sqrt();
                    }
                    delta
                })
                .collect();
            let rows = energy_rows(deltas.iter().map(Vec::as_slice), &m).unwrap();
            let res = rank_attributes(&rows, &names(N_ATTR), 0.01).unwrap();
            res.order == order && res.adjacent_significant.iter().all(|s| *s)
        })
        .count();
    verdict(recovered >= 99, format!("planted order recovered with all adjacent p < 0.01 in {recovered}/100 seeds"))
}

/// Spearman rank correlation (average ranks for ties).
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - mean).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn desk_trends() -> Verdict {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let acc = |axis, values: &[f64]| -> Vec<f64> {
        run_sweep(&cfg, axis, values).unwrap().iter().map(|r| r.robust_accuracy).collect()
    };
    let budgets = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let by_budget = acc(SweepAxis::Budget, &budgets);
    let budget_ok = by_budget.windows(2).all(|w| w[1] <= w[0]);

    let sizes = [100.0, 500.0, 2000.0, 10000.0];
    let by_size = acc(SweepAxis::DatasetSize, &sizes);
    let rho = spearman(&sizes, &by_size);
    let size_ok = rho <= 0.0;

    let counts = [50.0, 100.0, 150.0, 200.0];
    let by_count = acc(SweepAxis::NumAttacked, &counts);
    let p = by_count[by_count.len() - 1];
    let count_ok = counts
        .iter()
        .zip(&by_count)
        .all(|(n, a)| (a - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt() + 1e-12);

    let elapsed = start.elapsed();
    verdict(
        budget_ok && size_ok && count_ok && elapsed < Duration::from_secs(600),
        format!(
            "budget {budgets:?} -> {by_budget:.3?}; population {sizes:?} -> {by_size:.3?} (Spearman {rho:.2}); \
             attacked {counts:?} -> {by_count:.3?} (3-sd band around {p:.3}); {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Runs every subcommand in a fresh directory; returns file name → bytes,
/// including each command's stdout.
fn cli_outputs(workers: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let commands: &[&[&str]] = &[
        &["gen", "--num-identities", "300", "--latent-dim", "16", "--out", "pop.json"],
        &["attack", "--population", "pop.json", "--num-attacked", "40", "--out", "pgd.csv"],
        &["attack", "--population", "pop.json", "--method", "fab", "--num-attacked", "15", "--out", "fab.csv"],
        &[
            "attack", "--population", "pop.json", "--only-attribute", "2", "--budget-scale", "2", "--num-attacked",
            "20", "--out", "only.csv",
        ],
        &["sweep", "--population", "pop.json", "--axis", "budget", "--values", "0.5,1,2", "--num-attacked", "20",
            "--out", "sweep_budget.csv"],
        &["sweep", "--population", "pop.json", "--axis", "dataset-size", "--values", "50,100,300",
            "--num-attacked", "20", "--out", "sweep_size.csv"],
        &["sweep", "--population", "pop.json", "--method", "fab", "--axis", "num-attacked", "--values", "5,10",
            "--out", "sweep_fab.csv"],
        &["rank", "--results", "fab.csv", "--out", "rank.json"],
        &[
            "certify", "--population", "pop.json", "--sigmas", "0.25,0.5", "--num-certified", "20", "--n", "500",
            "--out", "cert.csv", "--envelope-out", "env.csv", "--curve-out", "curve.csv",
        ],
        &[
            "certify", "--population", "pop.json", "--mode", "anisotropic", "--sigmas", "1", "--num-certified",
            "20", "--n", "500", "--out", "cert_aniso.csv",
        ],
        &["certify", "--envelope", "cert.csv", "cert_aniso.csv", "--out", "env2.csv"],
        &["curve", "--input", "cert.csv", "--out", "curve2.csv"],
    ];
    let mut outputs = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let out = Command::new(env!("CARGO_BIN_EXE_semrob"))
            .args(*args)
            .args(["--seed", "5", "--workers", &workers.to_string()])
            .current_dir(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
        outputs.push((format!("stdout of command {i} ({})", args[0]), out.stdout));
    }
    let mut files: Vec<_> = std::fs::read_dir(dir.path())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| e.to_string())?;
        outputs.push((f.file_name().unwrap().to_string_lossy().into_owned(), bytes));
    }
    Ok(outputs)
}

fn cli_determinism() -> Verdict {
    let runs: Result<Vec<_>, _> = [1usize, 1, 2, 4].iter().map(|&w| cli_outputs(w)).collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return verdict(false, e),
    };
    let reference = &runs[0];
    let mut mismatches = Vec::new();
    for (run, workers) in runs.iter().zip([1, 1, 2, 4]).skip(1) {
        if run.len() != reference.len() {
            mismatches.push(format!("workers {workers}: different file set"));
            continue;
        }
        for ((name, a), (_, b)) in reference.iter().zip(run) {
            if a != b {
                mismatches.push(format!("workers {workers}: {name}"));
            }
        }
    }
    let files = reference.iter().filter(|(n, _)| !n.starts_with("stdout")).count();
    verdict(
        mismatches.is_empty(),
        format!(
            "{files} output files + stdout of 12 commands, reruns at 1/1/2/4 workers{}",
            if mismatches.is_empty() { " byte-identical".to_string() } else { format!(" differ: {mismatches:?}") }
        ),
    )
}

// ---------------------------------------------------------------------------

type Criterion = (u8, &'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        (1, "projection oracle equivalence", projection_oracle),
        (2, "isotropic reduction", isotropic_reduction),
        (3, "PGD completeness", pgd_completeness),
        (4, "FAB M-norm optimality", fab_optimality),
        (5, "certification soundness", certification_soundness),
        (6, "closed-form smoothing check", smoothing_closed_form),
        (7, "statistical tests vs. oracles", statistical_oracles),
        (8, "ranking recovery", ranking_recovery),
        (9, "desk-scale trends", desk_trends),
        (10, "CLI determinism", cli_determinism),
    ];
    let selected: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
