//! Independent re-computations of library quantities.

use lcbn::experiments::{
    diamond_fixture, item_values, reachable_item_values, run_experiment, ExperimentConfig, ReplicateRecord,
};
use lcbn::inference::{ebic, ln_binomial, Responsibilities};
use lcbn::lcbn::structural_objective;
use lcbn::measurement::{equal_effects_gdina, theta_dina, theta_gdina, GdinaParams, Link};
use lcbn::{
    lcbn_em_fit, marginal_loglik, proportions, responsibilities, sample_patterns, two_step_fit, AttributePattern,
    Dataset, DinaParams, FitControl, Hierarchy, ItemParams, LcbnParams, MeasurementModel, ProportionVector, QMatrix,
};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random small instance with a random hierarchy, item parameters,
/// proportions and responses including missing cells.
struct Instance {
    q: QMatrix,
    params: ItemParams,
    p: ProportionVector,
    data: Dataset,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.gen_range(1..=3);
    let j = rng.gen_range(1..=4);
    let n = rng.gen_range(1..=20);
    let mut edges = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if rng.gen_bool(0.4) {
                edges.push((a, b));
            }
        }
    }
    let h = Hierarchy::new(k, &edges).unwrap();
    let rows: Vec<u32> = (0..j).map(|_| rng.gen_range(1..(1u32 << k))).collect();
    let q = QMatrix::from_codes(k, rows);
    let params = if rng.gen_bool(0.5) {
        let slip: Vec<f64> = (0..j).map(|_| rng.gen_range(0.01..0.45)).collect();
        let guess: Vec<f64> = (0..j).map(|_| rng.gen_range(0.01..0.45)).collect();
        ItemParams::Dina(DinaParams { slip, guess })
    } else {
        let probs = (0..j)
            .map(|jj| {
                let m = q.row(jj).count_ones();
                let mut table: Vec<f64> = (0..1usize << m).map(|_| rng.gen_range(0.05..0.95)).collect();
                table.sort_by(|a, b| a.partial_cmp(b).unwrap());
                table
            })
            .collect();
        let link = if rng.gen_bool(0.5) { Link::Identity } else { Link::Logit };
        ItemParams::Gdina(GdinaParams::from_group_probs(link, probs))
    };
    let set = h.permissible_patterns().unwrap();
    let weights: Vec<f64> = (0..set.len()).map(|_| rng.gen_range(0.01..1.0)).collect();
    let p = ProportionVector::normalized(set, weights).unwrap();
    let rows: Vec<Vec<Option<u8>>> = (0..n)
        .map(|_| {
            let mut row: Vec<Option<u8>> = (0..j)
                .map(|_| if rng.gen_bool(0.2) { None } else { Some(rng.gen_range(0..2)) })
                .collect();
            if row.iter().all(Option::is_none) {
                row[0] = Some(1);
            }
            row
        })
        .collect();
    Instance {
        q,
        params,
        p,
        data: Dataset::from_rows(&rows).unwrap(),
    }
}

fn theta(params: &ItemParams, q: &QMatrix, j: usize, pattern: &AttributePattern) -> f64 {
    match params {
        ItemParams::Dina(d) => theta_dina(d.slip[j], d.guess[j], q.row(j), pattern).unwrap(),
        ItemParams::Gdina(g) => theta_gdina(&g.delta[j], q.row(j), pattern, g.link).unwrap(),
        ItemParams::MainEffect(_) => unreachable!(),
    }
}

/// Per-subject joint probabilities `p_a * P(x_i | a)` by direct products.
fn joint(inst: &Instance) -> Vec<Vec<f64>> {
    (0..inst.data.n())
        .map(|i| {
            inst.p
                .patterns()
                .iter()
                .zip(inst.p.probs())
                .map(|(pattern, &pa)| {
                    let mut lik = pa;
                    for j in 0..inst.data.items() {
                        if let Some(x) = inst.data.get(i, j) {
                            let th = theta(&inst.params, &inst.q, j, &pattern);
                            lik *= if x == 1 { th } else { 1.0 - th };
                        }
                    }
                    lik
                })
                .collect()
        })
        .collect()
}

#[test]
fn likelihood_matches_direct_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let inst = random_instance(&mut rng);
        let direct: f64 = joint(&inst).iter().map(|row| row.iter().sum::<f64>().ln()).sum();
        let fast = marginal_loglik(&inst.params, &inst.q, &inst.p, &inst.data).unwrap();
        assert!((fast - direct).abs() < 1e-12, "{fast} vs {direct}");
    }
}

#[test]
fn posterior_matches_bayes_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let post: Responsibilities = responsibilities(&inst.params, &inst.q, &inst.p, &inst.data).unwrap();
        for (i, row) in joint(&inst).iter().enumerate() {
            let total: f64 = row.iter().sum();
            for (a, v) in row.iter().enumerate() {
                assert!((post.phi[[i, a]] - v / total).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fully_missing_item_equals_dropping_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        if inst.data.items() < 2 {
            continue;
        }
        let mut rows: Vec<Vec<Option<u8>>> = (0..inst.data.n())
            .map(|i| (0..inst.data.items()).map(|j| inst.data.get(i, j)).collect())
            .collect();
        for row in &mut rows {
            row[0] = None;
            if row.iter().all(Option::is_none) {
                row[1] = Some(0);
            }
        }
        let masked = Dataset::from_rows(&rows).unwrap();
        let keep: Vec<usize> = (1..inst.data.items()).collect();
        let dropped = masked.select_items(&keep).unwrap();
        let q_dropped = inst.q.select_rows(&keep);
        let params_dropped = match &inst.params {
            ItemParams::Dina(d) => ItemParams::Dina(DinaParams {
                slip: keep.iter().map(|&j| d.slip[j]).collect(),
                guess: keep.iter().map(|&j| d.guess[j]).collect(),
            }),
            ItemParams::Gdina(g) => ItemParams::Gdina(GdinaParams {
                link: g.link,
                delta: keep.iter().map(|&j| g.delta[j].clone()).collect(),
            }),
            ItemParams::MainEffect(_) => unreachable!(),
        };
        let a = marginal_loglik(&inst.params, &inst.q, &inst.p, &masked).unwrap();
        let b = marginal_loglik(&params_dropped, &q_dropped, &inst.p, &dropped).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

fn exact_ln_binomial(n: u64, k: u64) -> f64 {
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..k {
        num *= n - i;
        den *= i + 1;
    }
    let c = num / den;
    let bits = c.bits();
    let shift = bits.saturating_sub(60);
    let top = (&c >> shift).to_f64().unwrap();
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

#[test]
fn ebic_penalty_matches_exact_binomials() {
    for &(k, m_p, m_theta) in &[(3usize, 2usize, 6usize), (8, 14, 48), (8, 0, 48), (9, 68, 348), (5, 31, 0)] {
        let candidates = (1u64 << k) - 1 + m_theta as u64;
        let selected = (m_p + m_theta) as u64;
        let exact = exact_ln_binomial(candidates, selected);
        let lgamma = ln_binomial(candidates as f64, selected as f64);
        assert!((exact - lgamma).abs() <= 1e-9 * exact.abs().max(1.0), "{exact} vs {lgamma}");
        let loglik = -1234.5;
        let n = 777;
        let expected = -2.0 * loglik + selected as f64 * (n as f64).ln() + 2.0 * exact;
        let got = ebic(loglik, m_p, m_theta, n, k).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected.abs());
    }
}

/// Data from a two-attribute chain measured by three copies of the identity.
fn chain_data(n: usize, seed: u64) -> (Dataset, QMatrix, Hierarchy) {
    let h = Hierarchy::new(2, &[(0, 1)]).unwrap();
    let t = LcbnParams::new(vec![0.7, 0.6]).unwrap();
    let q = QMatrix::identity(2).stack(&QMatrix::identity(2)).unwrap().stack(&QMatrix::identity(2)).unwrap();
    let patterns = sample_patterns(&t, &h, n, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let rows: Vec<Vec<Option<u8>>> = patterns
        .iter()
        .map(|a| {
            (0..q.items())
                .map(|j| {
                    let th = if a.covers(q.row(j)) { 0.85 } else { 0.15 };
                    Some(rng.gen_bool(th) as u8)
                })
                .collect()
        })
        .collect();
    (Dataset::from_rows(&rows).unwrap(), q, h)
}

#[test]
fn fitted_parameters_beat_every_grid_neighbour() {
    let (data, q, h) = chain_data(400, 21);
    let control = FitControl {
        tol: 1e-12,
        max_iter: 20_000,
        ..FitControl::default()
    };
    let fit = lcbn_em_fit(&data, &q, &h, MeasurementModel::Dina, &control).unwrap();
    let ItemParams::Dina(d) = &fit.params else { panic!("dina fit") };
    let loglik = |t: &[f64], d: &DinaParams| {
        let p = proportions(&LcbnParams::new(t.to_vec()).unwrap(), &h).unwrap();
        marginal_loglik(&ItemParams::Dina(d.clone()), &q, &p, &data).unwrap()
    };
    let best = loglik(fit.t.t(), d);
    assert!((best - fit.loglik).abs() < 1e-9);
    for step in [1e-3, 1e-2] {
        for which in 0..(2 + 2 * q.items()) {
            for sign in [-1.0, 1.0] {
                let mut t = fit.t.t().to_vec();
                let mut dd = d.clone();
                match which {
                    0 | 1 => t[which] += sign * step,
                    w if w < 2 + q.items() => dd.slip[w - 2] += sign * step,
                    w => dd.guess[w - 2 - q.items()] += sign * step,
                }
                assert!(loglik(&t, &dd) <= best + 1e-9, "perturbation {which} {sign} {step} improved");
            }
        }
    }
}

#[test]
fn t_update_maximizes_the_structural_objective() {
    let (data, q, h) = chain_data(300, 5);
    let fit = lcbn_em_fit(&data, &q, &h, MeasurementModel::Dina, &FitControl::default()).unwrap();
    let set = h.permissible_patterns().unwrap();
    // Grid search over (t1, t2) in steps of 0.001.
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for a in 1..1000 {
        for b in 1..1000 {
            let t = [a as f64 / 1000.0, b as f64 / 1000.0];
            let v = structural_objective(&t, &h, &set, &fit.pattern_weights);
            if v > best.0 {
                best = (v, t[0], t[1]);
            }
        }
    }
    let at_fit = structural_objective(fit.t.t(), &h, &set, &fit.pattern_weights);
    assert!(at_fit >= best.0 - 1e-9);
    assert!((fit.t.t()[0] - best.1).abs() <= 1e-3 && (fit.t.t()[1] - best.2).abs() <= 1e-3);
}

#[test]
fn fits_are_reproducible_across_thread_counts() {
    let (h, t, q) = diamond_fixture();
    let patterns = sample_patterns(&t, &h, 300, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<Option<u8>>> = patterns
        .iter()
        .map(|a| {
            (0..q.items())
                .map(|j| Some(rng.gen_bool(if a.covers(q.row(j)) { 0.9 } else { 0.1 }) as u8))
                .collect()
        })
        .collect();
    let data = Dataset::from_rows(&rows).unwrap();
    let control = FitControl {
        restarts: 2,
        lambda_grid: vec![-1.0, -2.0],
        ..FitControl::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let result = pool.install(|| two_step_fit(&data, &q, MeasurementModel::Dina, &control).unwrap());
        serde_json::to_string(&result).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(3));
}

fn rmse(pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in pairs {
        assert_eq!(a.len(), b.len());
        total += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        count += a.len();
    }
    (total / count as f64).sqrt()
}

#[test]
fn experiment_metrics_match_recomputation() {
    let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "model": "gdina", "n": 300, "r": 0.1, "replicates": 2, "seed": 17,
        "control": {"restarts": 1, "lambda_grid": [-1.0, -2.0]}
    }))
    .unwrap();
    let report = run_experiment(&cfg).unwrap();
    let again = run_experiment(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&report.row).unwrap(), serde_json::to_string(&again.row).unwrap());

    let truth = cfg.truth().unwrap();
    let q = truth.q.clone().unwrap();
    let set = truth.hierarchy.permissible_patterns().unwrap();
    let records: &[ReplicateRecord] = &report.records;
    let c = records.len() as f64;

    let p_true = truth.proportions.dense();
    let p_pairs: Vec<_> = records.iter().map(|r| (r.p_hat.clone(), p_true.clone())).collect();
    let expected_p = (p_pairs
        .iter()
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (256.0 * c))
        .sqrt();
    assert!((report.row.metrics.rmse_p - expected_p).abs() < 1e-15);

    let mask = reachable_item_values(&truth.params, &q, &set);
    let keep = |v: &[f64]| -> Vec<f64> { v.iter().zip(&mask).filter(|(_, m)| **m).map(|(x, _)| *x).collect() };
    let theta_true = keep(&item_values(&truth.params, &q));
    let theta_pairs: Vec<_> = records.iter().map(|r| (keep(&r.items_hat), theta_true.clone())).collect();
    assert!((report.row.metrics.rmse_theta - rmse(&theta_pairs)).abs() < 1e-15);

    let t_true = truth.t.as_ref().unwrap().t().to_vec();
    let t_pairs: Vec<_> = records.iter().map(|r| (r.t_hat.clone(), t_true.clone())).collect();
    assert!((report.row.metrics.rmse_t.unwrap() - rmse(&t_pairs)).abs() < 1e-15);

    let exact = records.iter().filter(|r| r.hierarchy == truth.hierarchy).count() as f64 / c;
    assert_eq!(report.row.metrics.acc_hierarchy, exact);
    let share = records.iter().filter(|r| r.ebic_lcbn < r.ebic_pem).count() as f64 / c;
    assert_eq!(report.row.metrics.ebic_lcbn_share, share);
}

#[test]
fn gdina_fixture_hits_both_endpoints() {
    let (_, _, q) = diamond_fixture();
    for r in [0.1, 0.2] {
        let params = equal_effects_gdina(&q, r);
        for j in 0..q.items() {
            let probs = params.group_probs(j);
            assert!((probs[0] - r).abs() < 1e-12);
            assert!((probs[probs.len() - 1] - (1.0 - r)).abs() < 1e-12);
        }
    }
}
