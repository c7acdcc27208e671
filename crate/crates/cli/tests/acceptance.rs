//! End-to-end acceptance checks. Each test prints one `criterion N` line
//! with its verdict before asserting, so `cargo test --test acceptance --
//! --nocapture` doubles as a report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use crosatfl::aggregation::{
    centralized_reference, consolidate_final, cross_aggregate_round, ClusterModel, DataPartition,
    ModelVector,
};
use crosatfl::compute::{sample_profiles, training_cost, Hardware, ProfileDistributions, SatelliteProfile};
use crosatfl::engine::{
    run_ablation_no_skip, run_crosatfl, run_fedsyn, session_task, EventAction, ProfileSource,
    Reachability, RoundMetrics, SessionConfig, SessionResult,
};
use crosatfl::links::LinkParams;
use crosatfl::skipone::{
    select_participants, update_fairness, FairnessParams, FairnessState, MemberCost, SkipWeights,
};
use crosatfl::starmask::{
    brute_force_partition, fallback_partition, feasible_actions, run_clustering_episode,
    terminal_reward, train_policy, ClusterPartition, Constraints, Instance, MaskedPolicy, Mode,
    PolicyDims, RewardWeights, TrainHyper,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, title: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n:>2} {}: {title} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed < Duration::from_secs(secs)
}

#[test]
fn c01_gs_counts() {
    let start = Instant::now();
    let cfg = SessionConfig::default();
    let cro = run_crosatfl(&cfg).unwrap();
    let fed = run_fedsyn(&cfg).unwrap();
    let k = cro.partition.as_ref().unwrap().k;
    let (a, b) = (cro.ledger.totals().gs, fed.ledger.totals().gs);
    let t = start.elapsed();
    verdict(
        1,
        "GS communications 18 vs 3200",
        k == 9 && a == 18 && b == 3200 && within(t, 60),
        &format!("K = {k}, crosatfl {a}, fedsyn {b}, {:.2} s", t.as_secs_f64()),
    );
}

#[test]
fn c02_mixing_count() {
    let start = Instant::now();
    let cfg = SessionConfig {
        reachability: Reachability::Full,
        k_nbr: 4,
        ..SessionConfig::default()
    };
    let r = run_crosatfl(&cfg).unwrap();
    let per_round: BTreeSet<usize> = (1..=40)
        .map(|round| {
            r.events
                .iter()
                .filter(|e| e.round == round && e.action == EventAction::MixSend)
                .count()
        })
        .collect();
    let gathers = r
        .events
        .iter()
        .filter(|e| e.action == EventAction::ConsolidateSend)
        .count();
    let l = &r.ledger;
    let t = start.elapsed();
    let pass = per_round == BTreeSet::from([36])
        && l.inter_lisl_mixing == 1440
        && l.inter_lisl_consolidation == 8
        && gathers == 8
        && l.totals().inter_lisl == 1448
        && within(t, 60);
    verdict(
        2,
        "random-k mixing 36 per round, 1440 per session",
        pass,
        &format!(
            "per round {per_round:?}, mixing {}, consolidation {}, {:.2} s",
            l.inter_lisl_mixing,
            l.inter_lisl_consolidation,
            t.as_secs_f64()
        ),
    );
}

#[test]
fn c03_gs_energy_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_crosatfl"))
        .args(["compare", "../../scenarios/default.toml", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("comparison.json")).unwrap()).unwrap();
    let gs_e = v["gs_energy_ratio"].as_f64().unwrap();
    let gs_n = v["gs_count_ratio"].as_f64().unwrap();
    let tx = v["transmission_energy_ratio"].as_f64().unwrap();
    let want = 3200.0 / 18.0;
    let pass = status.success()
        && ((gs_e - want) / want).abs() <= 1e-9
        && gs_n == want
        && (3.0..=12.0).contains(&tx);
    verdict(
        3,
        "GS energy ratio equals the count ratio; transmission ratio in [3, 12]",
        pass,
        &format!("gs energy ratio {gs_e:.9}, want {want:.9}, transmission ratio {tx:.3}"),
    );
}

/// `sum_k n_k w_k / sum_k n_k`, coordinate by coordinate.
fn weighted_mean(models: &[(Vec<f64>, u64)]) -> Vec<f64> {
    let total: f64 = models.iter().map(|m| m.1 as f64).sum();
    let dim = models[0].0.len();
    (0..dim)
        .map(|i| models.iter().map(|(w, n)| w[i] * *n as f64).sum::<f64>() / total)
        .collect()
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn c04_gossip_consensus() {
    let mut worst_mix: f64 = 0.0;
    let mut worst_final: f64 = 0.0;
    let mut rounds_ok = true;
    for (case, k) in [2usize, 5, 9].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(case as u64);
        let raw: Vec<(Vec<f64>, u64)> = (0..k)
            .map(|_| {
                let w = (0..6).map(|_| rng.random_range(-10.0..10.0)).collect();
                (w, rng.random_range(1..2000))
            })
            .collect();
        let oracle = weighted_mean(&raw);
        let models: Vec<ClusterModel<f64>> = raw
            .iter()
            .enumerate()
            .map(|(id, (w, n))| ClusterModel {
                cluster_id: id,
                model: ModelVector::new(w.clone(), 64).unwrap(),
                n_total: *n,
            })
            .collect();
        let fin = consolidate_final(&models).unwrap();
        worst_final = worst_final.max(max_dev(fin.weights(), &oracle) / oracle.iter().map(|x| x.abs()).fold(1.0, f64::max));

        let spread = |ms: &[ClusterModel<f64>]| {
            let mut s: f64 = 0.0;
            for a in ms {
                for b in ms {
                    s = s.max(max_dev(a.model.weights(), b.model.weights()));
                }
            }
            s
        };
        let initial = spread(&models);
        let budget = (initial / 1e-9).log2().ceil() as usize;
        let ids: BTreeSet<usize> = (0..k).collect();
        let reach: BTreeMap<usize, BTreeSet<usize>> = (0..k)
            .map(|c| (c, ids.iter().copied().filter(|&j| j != c).collect()))
            .collect();
        let mut cur = models;
        let mut used = 0;
        while spread(&cur) >= 1e-9 * initial && used < budget {
            cur = cross_aggregate_round(&cur, &reach, k - 1, &mut rng).unwrap().models;
            used += 1;
        }
        rounds_ok &= spread(&cur) < 1e-9 * initial.max(1e-300) || initial == 0.0;
        for m in &cur {
            worst_mix = worst_mix.max(max_dev(m.model.weights(), &oracle));
        }
    }
    verdict(
        4,
        "full-reachability mixing reaches the sample-weighted mean",
        worst_mix <= 1e-9 && worst_final <= 1e-12 && rounds_ok,
        &format!("mixing max-norm error {worst_mix:.2e}, consolidation relative error {worst_final:.2e}"),
    );
}

#[test]
fn c05_skip_one() {
    let start = Instant::now();
    let weights = SkipWeights::default();
    let mut violations = Vec::new();
    let mut skips = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=10);
        let members: Vec<usize> = (0..n).map(|i| 100 + 7 * i).collect();
        let costs: BTreeMap<usize, MemberCost> = members
            .iter()
            .map(|&id| {
                let hardware = if rng.random::<bool>() { Hardware::Cpu } else { Hardware::Gpu };
                let t_train_s = rng.random_range(0.1..100.0);
                let e_train_j = rng.random_range(1.0..5000.0);
                (id, MemberCost { hardware, t_train_s, e_train_j })
            })
            .collect();
        let master = members[rng.random_range(0..n)];
        let mut state = FairnessState::new(FairnessParams::default(), members.iter().copied());
        let mut history: Vec<BTreeSet<usize>> = Vec::new();
        let mut prev = None;
        for round in 1..=40 {
            let sel = select_participants(&members, master, &costs, &state, &weights, round).unwrap();
            let absent: Vec<usize> = members.iter().copied().filter(|m| !sel.participants.contains(m)).collect();
            let barrier = |ids: &[usize]| ids.iter().map(|i| costs[i].t_train_s).fold(0.0, f64::max);
            if absent.len() > 1 {
                violations.push(format!("seed {seed} round {round}: {} skipped", absent.len()));
            }
            if barrier(&sel.participants) > barrier(&members) {
                violations.push(format!("seed {seed} round {round}: barrier grew"));
            }
            if let (Some(a), Some(b)) = (prev, absent.first().copied()) {
                if a == b {
                    violations.push(format!("seed {seed} round {round}: {a} skipped twice in a row"));
                }
            }
            skips += absent.len();
            prev = absent.first().copied();
            history.push(sel.participants.iter().copied().collect());
            state = update_fairness(&state, sel.skipped, &sel.participants, round).unwrap();
        }
        for w in history.windows(10) {
            for m in &members {
                if !w.iter().any(|p| p.contains(m)) {
                    violations.push(format!("seed {seed}: {m} absent for 10 rounds"));
                }
            }
        }
    }
    let t = start.elapsed();
    verdict(
        5,
        "Skip-One guarantees on 1000 random clusters",
        violations.is_empty() && skips > 0 && within(t, 60),
        &format!("{skips} skips, {} violations {:?}, {:.2} s", violations.len(), violations.first(), t.as_secs_f64()),
    );
}

/// Independent check of the partition invariants against raw profiles.
fn invariant_errors(p: &ClusterPartition, profiles: &[SatelliteProfile<f64>], c: &Constraints) -> Vec<String> {
    let mut errs = Vec::new();
    let by_id: BTreeMap<usize, &SatelliteProfile<f64>> = profiles.iter().map(|p| (p.id, p)).collect();
    let mut seen = BTreeSet::new();
    for (k, cl) in p.clusters.iter().enumerate() {
        for id in cl {
            if !seen.insert(*id) {
                errs.push(format!("{id} twice"));
            }
        }
        let m = p.masters[k];
        if !cl.contains(&m) {
            errs.push(format!("master {m} outside"));
            continue;
        }
        if cl.len() < c.m_min {
            errs.push(format!("cluster {k} too small"));
        }
        let mp = by_id[&m];
        let cap = match mp.hardware {
            Hardware::Cpu => c.cap_cpu,
            Hardware::Gpu => c.cap_gpu,
        };
        if cl.len() - 1 > (mp.fan_out - 1).min(cap) {
            errs.push(format!("master {m} over capacity"));
        }
        if c.homogeneous && cl.iter().any(|i| by_id[i].hardware != mp.hardware) {
            errs.push(format!("cluster {k} mixes hardware"));
        }
    }
    if seen.len() != profiles.len() || !profiles.iter().all(|p| seen.contains(&p.id)) {
        errs.push("not a cover".into());
    }
    if p.clusters.len() > c.k_max || p.k != p.clusters.len() {
        errs.push("cluster count".into());
    }
    errs
}

fn random_profiles(seed: u64, max_n: usize) -> Vec<SatelliteProfile<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let n = rng.random_range(2..=max_n);
    sample_profiles(n, rng.random::<f64>(), seed, &ProfileDistributions::default()).unwrap()
}

#[test]
fn c06_starmask() {
    let start = Instant::now();
    let c = Constraints {
        k_max: 6,
        ..Constraints::default()
    };
    let link = LinkParams::default();
    let payload = 16_000_000;

    // masked decisions
    let mut decisions = 0;
    let mut infeasible = 0;
    let mut seed = 0u64;
    while decisions < 10_000 {
        let profiles = random_profiles(seed, 20);
        let inst = Instance::new(&profiles, &c).unwrap();
        let pol = MaskedPolicy::new(PolicyDims::for_constraints(&c), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(ep) = run_clustering_episode(&inst, &pol, &c, Mode::Sample(&mut rng)) {
            for d in &ep.decisions {
                decisions += 1;
                if !feasible_actions(&d.state, &c)[d.action] {
                    infeasible += 1;
                }
            }
        }
        seed += 1;
    }

    // constructor on 1000 instances
    let mut built = 0;
    let mut dirty = 0;
    for seed in 0..1000u64 {
        let profiles = random_profiles(seed, 20);
        let inst = Instance::new(&profiles, &c).unwrap();
        if let Ok(p) = fallback_partition(&inst, &c) {
            built += 1;
            if !invariant_errors(&p, &profiles, &c).is_empty() {
                dirty += 1;
            }
        }
    }

    // brute force on small instances
    let w = RewardWeights::default();
    let mut compared = 0;
    let mut below_floor = 0;
    let mut gap_sum = 0.0;
    for seed in 0..50u64 {
        let profiles = random_profiles(seed + 5000, 6);
        let inst = Instance::new(&profiles, &c).unwrap();
        let (Ok(b), Ok(f)) = (
            brute_force_partition(&inst, &c, &w, &link, payload),
            fallback_partition(&inst, &c),
        ) else {
            continue;
        };
        let r = terminal_reward(&f, &inst, &c, &w, &link, payload).unwrap().reward;
        compared += 1;
        if r < b.worst_reward || r > b.best_reward.reward + 1e-12 || !invariant_errors(&f, &profiles, &c).is_empty() {
            below_floor += 1;
        }
        gap_sum += b.best_reward.reward - r;
    }

    // training traces
    let tc = Constraints {
        k_max: 4,
        ..Constraints::default()
    };
    let family: Vec<Instance> = (0..20)
        .map(|i| Instance::new(&sample_profiles(12, 0.5, i, &ProfileDistributions::default()).unwrap(), &tc).unwrap())
        .collect();
    let mut improved = 0;
    let mut traces = Vec::new();
    for seed in 0..5 {
        let hyper = TrainHyper {
            seed,
            ..TrainHyper::default()
        };
        let out = train_policy(&family, &tc, &w, &link, payload, &hyper).unwrap();
        let (early, late) = crosatfl_cli::window_means(&out.rewards).unwrap();
        if late >= early {
            improved += 1;
        }
        traces.push(format!("{early:.3}->{late:.3}"));
    }
    let t = start.elapsed();
    verdict(
        6,
        "StarMask masking, constructor, brute-force oracle and training",
        infeasible == 0 && dirty == 0 && built > 0 && compared > 0 && below_floor == 0 && improved == 5 && within(t, 600),
        &format!(
            "{infeasible}/{decisions} infeasible decisions, {dirty}/{built} dirty partitions, \
             {compared} brute-force comparisons with mean optimality gap {:.4}, \
             training {improved}/5 [{}], {:.1} s",
            gap_sum / compared.max(1) as f64,
            traces.join(", "),
            t.as_secs_f64()
        ),
    );
}

#[test]
fn c07_energy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for id in 0..100 {
        let cpu = id % 2 == 0;
        let p = SatelliteProfile {
            id,
            n_samples: rng.random_range(1..5000),
            hardware: if cpu { Hardware::Cpu } else { Hardware::Gpu },
            alpha_flops_per_s: rng.random_range(1e8..1e12),
            fan_out: rng.random_range(1..10),
            gamma: if cpu { rng.random_range(1e-28..1e-26) } else { 0.0 },
            cycles_per_sample: if cpu { rng.random_range(1e5..1e8) } else { 0.0 },
            freq_hz: if cpu { rng.random_range(5e8..3e9) } else { 0.0 },
            p_avg_w: if cpu { 0.0 } else { rng.random_range(10.0..300.0) },
            c_flop: rng.random_range(1e5..1e9),
        };
        let epochs = rng.random_range(1..20u32);
        let got = training_cost(&p, epochs).unwrap();

        // step by step
        let flops_per_epoch = p.n_samples as f64 * p.c_flop;
        let seconds_per_epoch = flops_per_epoch / p.alpha_flops_per_s;
        let seconds = seconds_per_epoch * epochs as f64;
        let joules = if cpu {
            let per_cycle = p.gamma * p.freq_hz * p.freq_hz;
            let cycles_per_epoch = p.cycles_per_sample * p.n_samples as f64;
            per_cycle * cycles_per_epoch * epochs as f64
        } else {
            p.p_avg_w * seconds
        };
        for (a, b) in [
            (got.t_epoch_s, seconds_per_epoch),
            (got.t_train_s, seconds),
            (got.e_train_j, joules),
        ] {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    verdict(
        7,
        "training time and energy match the step-by-step calculator",
        worst <= 1e-12,
        &format!("worst relative error {worst:.2e} over 100 profiles"),
    );
}

#[test]
fn c08_convergence() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (label, partition) in [
        ("iid", DataPartition::Iid),
        ("skew", DataPartition::LabelSkew { dominant_fraction: 0.9 }),
    ] {
        for seed in 0..3 {
            let mut cfg = SessionConfig {
                seed,
                ..SessionConfig::default()
            };
            cfg.task.partition = partition;
            let r = run_crosatfl(&cfg).unwrap();
            let task = session_task(&cfg).unwrap();
            let reference = task.evaluate(&centralized_reference(&task, cfg.bits_per_param));
            let ratio = r.final_metric / reference;
            pass &= ratio >= 0.95;
            lines.push(format!("{label}/{seed} {:.3}/{:.3}", r.final_metric, reference));
        }
    }
    let t = start.elapsed();
    verdict(
        8,
        "40-client session reaches 95% of the centralized accuracy",
        pass && within(t, 300),
        &format!("{}; {:.1} s", lines.join(", "), t.as_secs_f64()),
    );
}

fn per_round(r: &SessionResult, f: fn(&RoundMetrics) -> f64) -> f64 {
    r.rounds.iter().map(f).sum::<f64>() / r.rounds.len() as f64
}

#[test]
fn c09_heterogeneity() {
    let start = Instant::now();
    let mixes = [("all-cpu", 1.0), ("half", 0.5), ("all-gpu", 0.0)];
    let mut rows = Vec::new();
    for (_, cpu) in mixes {
        let cfg = SessionConfig {
            profiles: ProfileSource::Sampled {
                cpu_fraction: cpu,
                distributions: ProfileDistributions::default(),
            },
            ..SessionConfig::default()
        };
        let a = run_crosatfl(&cfg).unwrap();
        let b = run_ablation_no_skip(&cfg).unwrap();
        rows.push([
            per_round(&a, |m| m.energy_j),
            per_round(&a, |m| m.round_time_s),
            per_round(&b, |m| m.energy_j),
            per_round(&b, |m| m.round_time_s),
        ]);
    }
    let mut pass = true;
    for col in 0..4 {
        pass &= rows[0][col] > rows[1][col] && rows[1][col] > rows[2][col];
    }
    for r in &rows {
        pass &= r[0] <= r[2] && r[1] <= r[3];
    }
    let t = start.elapsed();
    let detail = mixes
        .iter()
        .zip(&rows)
        .map(|((name, _), r)| format!("{name} E {:.0}/{:.0} J T {:.2}/{:.2} s", r[0], r[2], r[1], r[3]))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        9,
        "per-round cost falls with GPU share; skipping never costs more",
        pass && within(t, 120),
        &format!("{detail}; {:.1} s", t.as_secs_f64()),
    );
}

fn run_bin(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_crosatfl"))
        .args(args)
        .current_dir(dir)
        .status()
        .unwrap()
        .success()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn c10_determinism() {
    let start = Instant::now();
    let scenario = std::fs::canonicalize("../../scenarios/default.toml").unwrap();
    let scenario = scenario.to_str().unwrap();
    let runs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let d = dir.path();
            std::fs::write(d.join("inst.toml"), "[family]\ncount = 6\nclients = 10\n[constraints]\nk_max = 10\n").unwrap();
            let ok = run_bin(&["simulate", scenario, "--method", "crosatfl", "--seed", "3", "--out-dir", "sim"], d)
                && run_bin(&["simulate", scenario, "--method", "fedsyn", "--seed", "3", "--out-dir", "fed"], d)
                && run_bin(&["simulate", scenario, "--method", "no-skip", "--seed", "3", "--out-dir", "abl"], d)
                && run_bin(&["cluster", scenario, "--seed", "3", "--out", "cluster.json"], d)
                && run_bin(&["train-policy", "inst.toml", "--episodes", "60", "--seed", "3", "--out", "policy.bin"], d)
                && run_bin(&["cluster", scenario, "--policy", "trained:policy.bin", "--out", "trained.json"], d)
                && run_bin(&["compare", scenario, "--seed", "3", "--out", "cmp"], d);
            assert!(ok, "a command failed");
            snapshot(d)
        })
        .collect();
    let t = start.elapsed();
    let differing: Vec<&String> = runs[0]
        .iter()
        .filter(|(k, v)| runs[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    verdict(
        10,
        "repeated commands produce byte-identical artifacts",
        differing.is_empty() && runs[0].len() == runs[1].len() && runs[0].len() >= 20 && within(t, 60),
        &format!("{} files compared, differing {:?}, {:.1} s", runs[0].len(), differing, t.as_secs_f64()),
    );
}
