#![allow(clippy::needless_range_loop)]

//! End-to-end acceptance checks, one test per criterion:
//!
//!  1. convolution constants match brute-force enumeration
//!  2. expected delays sum to m - 1
//!  3. closed-form Jacobians and throughput gradients match finite differences
//!  4. simulation statistics match the closed forms within Monte-Carlo error
//!  5. the extended variant converges to the base variant as the central
//!     stage becomes infinitely fast
//!  6. simulated energy per round matches the closed form and is invariant
//!     to the concurrency level
//!  7. the energy optimizer recovers the inverse-square-root routing rule
//!  8. optimized time-to-accuracy is non-monotone in concurrency while the
//!     round bound is non-decreasing
//!  9. optimized operating points beat uniform routing directionally on
//!     synthetic training runs
//! 10. CLI runs with identical seeds produce byte-identical files
//!
//! Each test prints a `criterion N PASS` line with the measured numbers
//! (visible with `--nocapture`).

use fedqueue::{analysis, buzen, complexity, learn, optimize, simulate};
use fedqueue::{ClientProfile, CsParams, LearningConstants, ModelKind, RoutingVector, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn random_clients(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<ClientProfile> {
    (0..n)
        .map(|_| {
            ClientProfile::from_rates(
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
            )
        })
        .collect()
}

fn random_routing(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

fn table_for(
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: Option<f64>,
) -> buzen::NormalizationTable {
    match mu_cs {
        None => buzen::normalization_constants(clients, p, m).unwrap(),
        Some(mu) => buzen::normalization_constants_with_cs(clients, p, m, mu).unwrap(),
    }
}

fn delays_for(
    table: &buzen::NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: Option<f64>,
) -> Vec<f64> {
    match mu_cs {
        None => analysis::expected_delays(table, clients, p, m).unwrap(),
        Some(mu) => analysis::expected_delays_cs(table, clients, p, m, mu).unwrap(),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[test]
fn criterion_01_constants_match_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_001);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=5);
        let clients = random_clients(&mut rng, n, 0.1, 10.0);
        let p = random_routing(&mut rng, n);
        for mu_cs in [None, Some(rng.gen_range(0.1..10.0))] {
            let table = table_for(&clients, &p, m, mu_cs);
            for k in 0..=m {
                let oracle = buzen::brute_force_constant(&clients, &p, k, mu_cs).unwrap();
                let rel = (table.value(k) - oracle).abs() / oracle;
                worst = worst.max(rel);
                assert!(
                    rel <= 1e-10,
                    "n={n} m={m} k={k} cs={mu_cs:?}: relative error {rel:e}"
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}, limit 10s");
    println!(
        "criterion 1 PASS: 50 instances, both variants, worst relative error {worst:.2e}, {elapsed:?}"
    );
}

#[test]
fn criterion_02_delays_sum_to_population_minus_one() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (variant, with_cs) in [("base", false), ("central-server", true)] {
        let mut rng = ChaCha8Rng::seed_from_u64(if with_cs { 20_103 } else { 20_102 });
        for _ in 0..100 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(1..=50);
            let clients = random_clients(&mut rng, n, 0.1, 10.0);
            let p = random_routing(&mut rng, n);
            let mu_cs = with_cs.then(|| rng.gen_range(0.1..10.0));
            let table = table_for(&clients, &p, m, mu_cs);
            let delays = delays_for(&table, &clients, &p, m, mu_cs);
            let gap = (delays.iter().sum::<f64>() - (m as f64 - 1.0)).abs();
            worst = worst.max(gap);
            assert!(gap <= 1e-9, "{variant} n={n} m={m}: sum off by {gap:e}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, limit 5s");
    println!(
        "criterion 2 PASS: 100 instances per variant, m up to 50, worst gap {worst:.2e}, {elapsed:?}"
    );
}

#[test]
fn criterion_03_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_201);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let n = 3;
        let m = rng.gen_range(2..=6);
        let clients = random_clients(&mut rng, n, 0.3, 5.0);
        let p = random_routing(&mut rng, n);
        for mu_cs in [None, Some(rng.gen_range(0.5..5.0))] {
            let table = table_for(&clients, &p, m, mu_cs);
            let report = analysis::delay_report(&table, &clients, &p, m, mu_cs).unwrap();
            let grad = match mu_cs {
                None => analysis::throughput_gradient(&table, &clients, &p, m).unwrap(),
                Some(mu) => {
                    analysis::throughput_gradient_cs(&table, &clients, &p, m, mu).unwrap()
                }
            };
            let lambda = analysis::throughput(&table);
            for j in 0..n {
                let mut hi = p.clone();
                hi[j] += h;
                let mut lo = p.clone();
                lo[j] -= h;
                let table_hi = table_for(&clients, &hi, m, mu_cs);
                let table_lo = table_for(&clients, &lo, m, mu_cs);
                let d_hi = delays_for(&table_hi, &clients, &hi, m, mu_cs);
                let d_lo = delays_for(&table_lo, &clients, &lo, m, mu_cs);
                for i in 0..n {
                    let fd = (d_hi[i] - d_lo[i]) / (2.0 * h);
                    let got = report.jacobian[i][j];
                    let rel = (got - fd).abs() / got.abs().max(fd.abs()).max(0.1);
                    worst = worst.max(rel);
                    assert!(
                        rel <= 1e-5,
                        "instance {instance} cs={mu_cs:?} jacobian[{i}][{j}]: {got} vs {fd}"
                    );
                }
                let fd = (analysis::throughput(&table_hi) - analysis::throughput(&table_lo))
                    / (2.0 * h);
                let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(0.1);
                worst = worst.max(rel);
                assert!(
                    rel <= 1e-5,
                    "instance {instance} cs={mu_cs:?} gradient[{j}]: {} vs {fd}",
                    grad[j]
                );
            }
            let euler: f64 = grad.iter().zip(&p).map(|(g, pi)| g * pi).sum();
            assert!(
                (euler + lambda).abs() <= 1e-8 * lambda,
                "instance {instance} cs={mu_cs:?}: sum p grad = {euler}, -lambda = {}",
                -lambda
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, limit 30s");
    println!(
        "criterion 3 PASS: 20 instances, both variants, worst relative error {worst:.2e}, {elapsed:?}"
    );
}

#[test]
fn criterion_04_simulation_matches_closed_forms() {
    let start = Instant::now();
    struct Instance {
        n: usize,
        m: usize,
        mu_cs: Option<f64>,
        seed: u64,
    }
    let instances = [
        Instance { n: 2, m: 3, mu_cs: None, seed: 101 },
        Instance { n: 3, m: 4, mu_cs: None, seed: 102 },
        Instance { n: 5, m: 6, mu_cs: None, seed: 103 },
        Instance { n: 3, m: 5, mu_cs: Some(6.0), seed: 104 },
        Instance { n: 4, m: 6, mu_cs: Some(9.0), seed: 105 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_z: f64 = 0.0;
    for inst in &instances {
        let clients = random_clients(&mut rng, inst.n, 0.5, 4.0);
        let raw: Vec<f64> = (0..inst.n).map(|_| rng.gen_range(0.3..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.into_iter().map(|x| x / total).collect();
        let cs = inst.mu_cs.map(|mu| CsParams { mu_cs: mu, p_cs: 0.0 });
        let config = SystemConfig::new(
            clients.clone(),
            RoutingVector::new(p.clone()).unwrap(),
            inst.m,
            cs,
        )
        .unwrap();
        let model = if inst.mu_cs.is_some() {
            ModelKind::WithCs
        } else {
            ModelKind::NoCs
        };
        let table = table_for(&clients, &p, inst.m, inst.mu_cs);
        let lambda = analysis::throughput(&table);
        let delays = delays_for(&table, &clients, &p, inst.m, inst.mu_cs);
        let stats = simulate::run_simulation(
            &config,
            model,
            simulate::ServiceLaw::Exponential,
            simulate::Horizon::Rounds(220_000),
            20_000,
            inst.seed,
        )
        .unwrap();
        assert!(stats.rounds_completed >= 200_000);
        let z = (stats.empirical_throughput - lambda) / stats.throughput_se;
        worst_z = worst_z.max(z.abs());
        assert!(
            z.abs() <= 3.0,
            "n={} m={} cs={:?}: throughput {} vs {} is {z:.2} SE off",
            inst.n,
            inst.m,
            inst.mu_cs,
            stats.empirical_throughput,
            lambda
        );
        for i in 0..inst.n {
            let z = (stats.empirical_delays[i] - delays[i]) / stats.delay_se[i];
            worst_z = worst_z.max(z.abs());
            assert!(
                z.abs() <= 3.0,
                "n={} m={} cs={:?} client {i}: delay {} vs {} is {z:.2} SE off",
                inst.n,
                inst.m,
                inst.mu_cs,
                stats.empirical_delays[i],
                delays[i]
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}, limit 5min");
    println!(
        "criterion 4 PASS: 5 instances, 200k measured rounds each, worst |z| {worst_z:.2}, {elapsed:?}"
    );
}

#[test]
fn criterion_05_fast_central_stage_recovers_base_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_501);
    let mu_cs = 1e6;
    let mut worst: f64 = 0.0;
    for m in [2, 5, 10] {
        let n = rng.gen_range(2..=3);
        let clients = random_clients(&mut rng, n, 0.3, 5.0);
        let p = random_routing(&mut rng, n);
        let base = table_for(&clients, &p, m, None);
        let ext = table_for(&clients, &p, m, Some(mu_cs));
        let lambda_rel =
            (analysis::throughput(&ext) - analysis::throughput(&base)).abs()
                / analysis::throughput(&base);
        worst = worst.max(lambda_rel);
        assert!(lambda_rel <= 1e-4, "m={m}: throughput off by {lambda_rel:e}");
        let d_base = delays_for(&base, &clients, &p, m, None);
        let d_ext = delays_for(&ext, &clients, &p, m, Some(mu_cs));
        for i in 0..n {
            let rel = (d_ext[i] - d_base[i]).abs() / d_base[i].max(1e-6);
            worst = worst.max(rel);
            assert!(rel <= 1e-4, "m={m} client {i}: delay off by {rel:e}");
        }
    }
    println!(
        "criterion 5 PASS: central rate 1e6 matches the base closed forms, worst relative gap {worst:.2e}"
    );
}

#[test]
fn criterion_06_energy_per_round_matches_and_ignores_concurrency() {
    let clients = vec![
        ClientProfile { mu_d: 4.0, mu_c: 1.0, mu_u: 3.0, p_d: 0.4, p_c: 2.5, p_u: 0.6 },
        ClientProfile { mu_d: 2.0, mu_c: 0.5, mu_u: 1.5, p_d: 0.3, p_c: 4.0, p_u: 0.5 },
        ClientProfile { mu_d: 6.0, mu_c: 2.0, mu_u: 5.0, p_d: 0.5, p_c: 1.5, p_u: 0.8 },
    ];
    let p = vec![0.5, 0.3, 0.2];
    let routing = RoutingVector::new(p.clone()).unwrap();
    let cs = CsParams { mu_cs: 5.0, p_cs: 1.5 };
    let probe = SystemConfig::new(clients.clone(), routing.clone(), 2, Some(cs.clone())).unwrap();
    let closed = complexity::energy_per_round(&complexity::EnergyProfile::from_config(&probe), &p);

    let mut means = Vec::new();
    let mut ses = Vec::new();
    for &m in &[2usize, 5, 10] {
        let config =
            SystemConfig::new(clients.clone(), routing.clone(), m, Some(cs.clone())).unwrap();
        let samples: Vec<f64> = (0..24u64)
            .map(|seed| {
                simulate::run_simulation(
                    &config,
                    ModelKind::WithCs,
                    simulate::ServiceLaw::Exponential,
                    simulate::Horizon::Rounds(30_000),
                    2_000,
                    10_000 + seed,
                )
                .unwrap()
                .energy_per_round
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            / (samples.len() - 1) as f64;
        let se = (var / samples.len() as f64).sqrt();
        let z = (mean - closed) / se;
        assert!(
            z.abs() <= 3.0,
            "m={m}: mean energy {mean} vs closed form {closed} is {z:.2} SE off"
        );
        means.push(mean);
        ses.push(se);
    }
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            let z = (means[a] - means[b]) / (ses[a].powi(2) + ses[b].powi(2)).sqrt();
            assert!(
                z.abs() <= 3.0,
                "energy per round differs between concurrency levels: {z:.2} SE"
            );
        }
    }
    println!(
        "criterion 6 PASS: closed form {closed:.4}, simulated {:.4}/{:.4}/{:.4} at m=2/5/10",
        means[0], means[1], means[2]
    );
}

#[test]
fn criterion_07_energy_optimizer_recovers_inverse_root_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_701);
    let consts = LearningConstants::new(2.0, 1.5, 0.5, 1.0, 4.0).unwrap();
    let eps = 0.25;
    let opts = optimize::OptimizeOptions::default();
    let spec = optimize::ObjectiveSpec::new(
        optimize::ObjectiveKind::MinEnergy,
        None,
        eps,
        consts,
        ModelKind::NoCs,
    )
    .unwrap();
    let mut worst_gap: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for profile_index in 0..10 {
        let n = rng.gen_range(2..=4);
        let clients: Vec<ClientProfile> = (0..n)
            .map(|_| ClientProfile {
                mu_d: rng.gen_range(0.5..4.0),
                mu_c: rng.gen_range(0.5..4.0),
                mu_u: rng.gen_range(0.5..4.0),
                p_d: rng.gen_range(0.05..1.0),
                p_c: rng.gen_range(0.5..6.0),
                p_u: rng.gen_range(0.05..1.0),
            })
            .collect();
        let config = SystemConfig::new(
            clients,
            RoutingVector::uniform(n).unwrap(),
            1,
            None,
        )
        .unwrap();
        let result = optimize::optimize_routing(&config, &spec, 1, None, &opts).unwrap();
        let profile = complexity::EnergyProfile::from_config(&config);
        let expected = complexity::energy_optimal_routing(&profile);
        let gap = result
            .p_star
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        worst_gap = worst_gap.max(gap);
        assert!(
            gap <= 1e-3,
            "profile {profile_index}: routing {:?} vs closed form {:?}",
            result.p_star,
            expected
        );
        let closed = complexity::minimal_energy(&consts, &profile, eps).unwrap();
        let rel = (result.objective_value - closed).abs() / closed;
        worst_rel = worst_rel.max(rel);
        assert!(
            rel <= 1e-6,
            "profile {profile_index}: objective {} vs closed form {closed}",
            result.objective_value
        );
    }
    println!(
        "criterion 7 PASS: 10 profiles, worst routing gap {worst_gap:.2e}, worst objective error {worst_rel:.2e}"
    );
}

#[test]
fn criterion_08_concurrency_helps_time_but_never_rounds() {
    let clients = vec![ClientProfile::unit(), ClientProfile::unit()];
    let consts = LearningConstants::new(1.0, 1.0, 1.0, 5.0, 14.0).unwrap();
    let eps = 0.5;
    let spec = optimize::ObjectiveSpec::new(
        optimize::ObjectiveKind::MinTime,
        None,
        eps,
        consts,
        ModelKind::NoCs,
    )
    .unwrap();
    let opts = optimize::OptimizeOptions::default();
    let taus: Vec<f64> = (1..=30)
        .map(|m| {
            let config = SystemConfig::new(
                clients.clone(),
                RoutingVector::uniform(2).unwrap(),
                m,
                None,
            )
            .unwrap();
            optimize::optimize_routing(&config, &spec, m, None, &opts)
                .unwrap()
                .objective_value
        })
        .collect();
    let (m_star, tau_star) = taus
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, t)| (i + 1, *t))
        .unwrap();
    assert!(
        m_star > 1 && m_star < 30,
        "minimizer m*={m_star} is not interior"
    );
    assert!(taus[0] > tau_star && taus[29] > tau_star);
    assert!(taus[m_star - 2] >= tau_star && taus[m_star] >= tau_star);

    let uniform = [0.5, 0.5];
    let mut previous = 0.0;
    for m in 1..=20 {
        let table = table_for(&clients, &uniform, m, None);
        let delays = delays_for(&table, &clients, &uniform, m, None);
        let k = complexity::round_complexity(&consts, &uniform, &delays, m, eps).unwrap();
        assert!(
            k >= previous - 1e-9,
            "round bound decreased from {previous} to {k} at m={m}"
        );
        previous = k;
    }
    println!(
        "criterion 8 PASS: time minimized at interior m*={m_star} (tau {tau_star:.1} vs {:.1} at m=1, {:.1} at m=30); round bound non-decreasing",
        taus[0], taus[29]
    );
}

#[test]
fn criterion_09_optimized_points_beat_uniform_directionally() {
    let start = Instant::now();
    let n = 6;
    let eps = 3.0;
    let eta = 0.03;
    let budget = 40_000;
    let uniform = vec![1.0 / n as f64; n];
    let opts = optimize::OptimizeOptions::default();

    let cluster_config = |p: Vec<f64>, m: usize| {
        let fast = ClientProfile {
            mu_d: 4.0,
            mu_c: 2.0,
            mu_u: 4.0,
            p_d: 0.2,
            p_c: 1.0,
            p_u: 0.2,
        };
        let slow = ClientProfile {
            mu_d: 2.0,
            mu_c: 0.1,
            mu_u: 2.0,
            p_d: 0.3,
            p_c: 6.0,
            p_u: 0.3,
        };
        let clients = vec![
            fast.clone(),
            fast.clone(),
            fast,
            slow.clone(),
            slow.clone(),
            slow,
        ];
        SystemConfig::new(clients, RoutingVector::new(p).unwrap(), m, None).unwrap()
    };

    struct Outcome {
        t: f64,
        energy: f64,
        k: f64,
    }
    let run_to_threshold = |task: &learn::FederatedTask,
                            config: &SystemConfig,
                            seed: u64,
                            threshold: f64|
     -> Outcome {
        let result = learn::run_generalized_async_sgd(
            task,
            config,
            ModelKind::NoCs,
            simulate::ServiceLaw::Exponential,
            eta,
            budget,
            seed,
        )
        .unwrap();
        assert!(!result.diverged, "training diverged at eta {eta}");
        let point = result
            .trajectory
            .iter()
            .find(|point| point.loss <= threshold)
            .expect("threshold never reached inside the round budget");
        Outcome {
            t: point.t,
            energy: point.energy,
            k: point.k as f64,
        }
    };

    let mut uni_t = Vec::new();
    let mut uni_e = Vec::new();
    let mut uni_k = Vec::new();
    let mut time_t = Vec::new();
    let mut joint_e = Vec::new();
    let mut rounds_t = Vec::new();
    let mut rounds_k = Vec::new();

    for seed in 0..10u64 {
        let task = learn::make_synthetic_task(n, 6, 2.0, 0.05, 1000 + seed).unwrap();
        let consts = learn::estimate_constants(&task, 128, 2.0, 3000 + seed).unwrap();
        let probe = cluster_config(uniform.clone(), n);

        let min_time = optimize::ObjectiveSpec::new(
            optimize::ObjectiveKind::MinTime,
            None,
            eps,
            consts,
            ModelKind::NoCs,
        )
        .unwrap();
        let joint = optimize::ObjectiveSpec::new(
            optimize::ObjectiveKind::JointTimeEnergy,
            Some(0.1),
            eps,
            consts,
            ModelKind::NoCs,
        )
        .unwrap();
        let min_rounds = optimize::ObjectiveSpec::new(
            optimize::ObjectiveKind::MinRounds,
            None,
            eps,
            consts,
            ModelKind::NoCs,
        )
        .unwrap();
        let time_opt = optimize::search_concurrency(&probe, &min_time, 1..=12, &opts).unwrap();
        let joint_opt = optimize::search_concurrency(&probe, &joint, 1..=12, &opts).unwrap();
        let rounds_opt = optimize::optimize_routing(&probe, &min_rounds, n, None, &opts).unwrap();

        let f0 = task.loss(&task.w0);
        let threshold = task.f_star + 0.12 * (f0 - task.f_star);
        let run_seed = 2000 + seed;

        let uni = run_to_threshold(&task, &cluster_config(uniform.clone(), n), run_seed, threshold);
        let fast = run_to_threshold(
            &task,
            &cluster_config(time_opt.p_star.clone(), time_opt.m_star),
            run_seed,
            threshold,
        );
        let lean = run_to_threshold(
            &task,
            &cluster_config(joint_opt.p_star.clone(), joint_opt.m_star),
            run_seed,
            threshold,
        );
        let few = run_to_threshold(
            &task,
            &cluster_config(rounds_opt.p_star.clone(), n),
            run_seed,
            threshold,
        );

        uni_t.push(uni.t);
        uni_e.push(uni.energy);
        uni_k.push(uni.k);
        time_t.push(fast.t);
        joint_e.push(lean.energy);
        rounds_t.push(few.t);
        rounds_k.push(few.k);
    }

    let uni_t = median(&mut uni_t);
    let uni_e = median(&mut uni_e);
    let uni_k = median(&mut uni_k);
    let time_t = median(&mut time_t);
    let joint_e = median(&mut joint_e);
    let rounds_t = median(&mut rounds_t);
    let rounds_k = median(&mut rounds_k);

    assert!(
        time_t < uni_t,
        "median time-to-threshold: optimized {time_t} vs uniform {uni_t}"
    );
    assert!(
        joint_e < uni_e,
        "median energy-to-threshold: joint {joint_e} vs uniform {uni_e}"
    );
    assert!(
        uni_k > rounds_k,
        "median updates-to-threshold: uniform {uni_k} vs round-optimal {rounds_k}"
    );
    assert!(
        uni_t < rounds_t,
        "median time-to-threshold: uniform {uni_t} vs round-optimal {rounds_t}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}, limit 10min");
    println!(
        "criterion 9 PASS: medians over 10 seeds: time {time_t:.1} < uniform {uni_t:.1}; \
         energy {joint_e:.0} < uniform {uni_e:.0}; updates uniform {uni_k:.0} > round-optimal \
         {rounds_k:.0} while time uniform {uni_t:.1} < round-optimal {rounds_t:.1}; {elapsed:?}"
    );
}

#[test]
fn criterion_10_cli_runs_are_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_fedqueue");
    let config = format!(
        "{}/../../configs/heterogeneous.json",
        env!("CARGO_MANIFEST_DIR")
    );
    let out = std::env::temp_dir().join(format!("fedqueue-acceptance-{}", std::process::id()));
    let out_text = out.display().to_string();

    let run = |args: &[&str]| -> (Vec<u8>, Vec<(String, Vec<u8>)>) {
        let output = std::process::Command::new(bin)
            .args(args)
            .env("SOURCE_DATE_EPOCH", "1700000000")
            .output()
            .expect("running the CLI");
        assert!(
            output.status.success(),
            "CLI failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|entry| {
                let entry = entry.unwrap();
                let name = entry.file_name().to_string_lossy().into_owned();
                (name, std::fs::read(entry.path()).unwrap())
            })
            .collect();
        files.sort_by(|a, b| a.0.cmp(&b.0));
        (output.stdout, files)
    };

    let simulate_args = [
        "simulate",
        "--config",
        config.as_str(),
        "--model",
        "cs",
        "--rounds",
        "3000",
        "--warmup",
        "500",
        "--seed",
        "5",
        "--trace",
        "--out",
        out_text.as_str(),
    ];
    let (stdout_a, files_a) = run(&simulate_args);
    let (stdout_b, files_b) = run(&simulate_args);
    assert_eq!(stdout_a, stdout_b, "simulate stdout differs between runs");
    assert_eq!(files_a, files_b, "simulate artifacts differ between runs");
    assert_eq!(files_a.len(), 3, "expected report, trace, and manifest");

    std::fs::remove_dir_all(&out).unwrap();
    let learn_args = [
        "learn",
        "--config",
        config.as_str(),
        "--model",
        "cs",
        "--eps",
        "0.5",
        "--dim",
        "4",
        "--rounds",
        "300",
        "--seed",
        "5",
        "--out",
        out_text.as_str(),
    ];
    let (stdout_a, files_a) = run(&learn_args);
    let (stdout_b, files_b) = run(&learn_args);
    assert_eq!(stdout_a, stdout_b, "learn stdout differs between runs");
    assert_eq!(files_a, files_b, "learn artifacts differ between runs");
    assert_eq!(files_a.len(), 3, "expected report, trace, and manifest");
    std::fs::remove_dir_all(&out).unwrap();

    println!(
        "criterion 10 PASS: repeated simulate and learn runs are byte-identical across {} files",
        files_a.len() * 2
    );
}
