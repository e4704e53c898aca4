//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::field_reassign_with_default)]

use std::time::{Duration, Instant};

use fedgan::aggregate::{aggregate_fedavg, aggregate_fgan, ImpactVector, NodeUpdate, SourceId};
use fedgan::coordination::{
    cluster_attack_index, compute_cluster_priority, compute_priority, compute_priority_with,
    Coordinator, CoordinatorConfig, HighAttackPolicy, PriorityLaw, RejectReason, SubmitOutcome,
    Tier, MATURITY_FLOOR,
};
use fedgan::eval::auc;
use fedgan::gan::{
    backprop, discriminator_loss, generator_loss, train_round, Batch, GanModel, LossKind,
    ModelParams, TrainHyper,
};
use fedgan::io::{config_digest, write_metrics, Checkpoint};
use fedgan::mlp::{HiddenActivation, MlpSpec, OutputActivation, ParamVector};
use fedgan::sim::{run_simulation_detailed, training_seed, SimConfig, SimOutcome, TraceEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "1 gradient fidelity",
            Duration::from_secs(5),
            gradient_fidelity,
        ),
        (
            "2 aggregation algebra",
            Duration::from_secs(10),
            aggregation_algebra,
        ),
        ("3 priority law", Duration::from_secs(2), priority_law),
        (
            "4 round conformance",
            Duration::from_secs(2),
            round_conformance,
        ),
        (
            "5 reputation mechanics",
            Duration::from_secs(2),
            reputation_mechanics,
        ),
        (
            "6+7 federation benefit and determinism",
            Duration::from_secs(180),
            federation_benefit,
        ),
        (
            "8 degenerate hierarchy",
            Duration::from_secs(10),
            degenerate_hierarchy,
        ),
        ("9 AUC oracle", Duration::from_secs(5), auc_oracle),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(note) if elapsed > budget => Err(format!("{note}; over budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(note) => println!("PASS  {name} [{elapsed:.2?}] {note}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{elapsed:.2?}] {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// 1 -------------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Batch {
    Batch::new(
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect(),
    )
    .unwrap()
}

fn perturbed(model: &GanModel, generator: bool, i: usize, delta: f64) -> GanModel {
    let mut p = model.params().clone();
    let v = if generator {
        &mut p.generator
    } else {
        &mut p.discriminator
    };
    v.0[i] += delta;
    model.with_params(p).unwrap()
}

fn gradient_fidelity() -> Outcome {
    const H: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_spec = MlpSpec::new(
            vec![3, 4, 1],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )
        .unwrap();
        let g_spec = MlpSpec::new(
            vec![2, 5, 3],
            HiddenActivation::Tanh,
            OutputActivation::Identity,
        )
        .unwrap();
        let model = GanModel::init(g_spec, d_spec, seed).unwrap();
        let real = random_batch(&mut rng, 6, 3);
        let fake = random_batch(&mut rng, 5, 3);
        let noise = random_batch(&mut rng, 4, 2);

        let analytic = backprop(
            &model,
            LossKind::Discriminator {
                real: &real,
                fake: &fake,
            },
        )
        .map_err(|e| e.to_string())?;
        for i in 0..analytic.len() {
            let up = discriminator_loss(&perturbed(&model, false, i, H), &real, &fake).unwrap();
            let down = discriminator_loss(&perturbed(&model, false, i, -H), &real, &fake).unwrap();
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(analytic.0[i], numeric));
        }

        let gen_loss = |m: &GanModel| {
            let xs = noise
                .samples()
                .iter()
                .map(|z| m.generate(z).unwrap())
                .collect();
            generator_loss(m, &Batch::new(xs).unwrap()).unwrap()
        };
        let analytic =
            backprop(&model, LossKind::Generator { noise: &noise }).map_err(|e| e.to_string())?;
        ensure!(
            analytic.len() == model.generator_spec().param_count(),
            "generator gradient has {} entries",
            analytic.len()
        );
        for i in 0..analytic.len() {
            let numeric = (gen_loss(&perturbed(&model, true, i, H))
                - gen_loss(&perturbed(&model, true, i, -H)))
                / (2.0 * H);
            worst = worst.max(rel_err(analytic.0[i], numeric));
        }
    }
    ensure!(worst < 1e-4, "max relative error {worst:.3e}");
    Ok(format!("max relative error {worst:.2e}"))
}

// 2 -------------------------------------------------------------------------

fn random_updates(rng: &mut ChaCha8Rng, k: usize, len_g: usize, len_d: usize) -> Vec<NodeUpdate> {
    let vec = |rng: &mut ChaCha8Rng, n: usize| {
        ParamVector((0..n).map(|_| rng.random_range(-10.0..10.0)).collect())
    };
    (0..k)
        .map(|i| NodeUpdate {
            source_id: SourceId(format!("n{:03}", rng.random_range(0..1000) * 10 + i)),
            params: ModelParams {
                generator: vec(rng, len_g),
                discriminator: vec(rng, len_d),
            },
            sample_count: rng.random_range(1..500),
            local_loss: rng.random_range(0.0..3.0),
            reported_attack_index: rng.random_range(0..50),
        })
        .collect()
}

fn max_diff(a: &ModelParams, b: &ModelParams) -> f64 {
    let d = |x: &ParamVector, y: &ParamVector| {
        x.0.iter()
            .zip(&y.0)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    d(&a.generator, &b.generator).max(d(&a.discriminator, &b.discriminator))
}

/// Straight weighted mean, written independently of the library.
fn oracle_mean(updates: &[NodeUpdate], impacts: &[f64]) -> ModelParams {
    let w: Vec<f64> = updates
        .iter()
        .zip(impacts)
        .map(|(u, h)| u.sample_count as f64 * h)
        .collect();
    let total: f64 = w.iter().sum();
    let mix = |get: &dyn Fn(&NodeUpdate) -> &ParamVector| {
        let n = get(&updates[0]).len();
        ParamVector(
            (0..n)
                .map(|c| {
                    updates
                        .iter()
                        .zip(&w)
                        .map(|(u, wi)| wi * get(u).0[c])
                        .sum::<f64>()
                        / total
                })
                .collect(),
        )
    };
    ModelParams {
        generator: mix(&|u| &u.params.generator),
        discriminator: mix(&|u| &u.params.discriminator),
    }
}

fn aggregation_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_oracle: f64 = 0.0;
    for case in 0..1000 {
        let k = rng.random_range(1..8);
        let (lg, ld) = (rng.random_range(1..6), rng.random_range(1..6));
        let updates = random_updates(&mut rng, k, lg, ld);
        let impacts: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..100.0)).collect();
        let iv = ImpactVector::new(impacts.clone()).unwrap();
        let fgan = aggregate_fgan(&updates, &iv).map_err(|e| e.to_string())?;

        let fedavg = aggregate_fedavg(&updates).unwrap();
        let uniform = aggregate_fgan(&updates, &ImpactVector::uniform(k)).unwrap();
        ensure!(
            max_diff(&fedavg, &uniform) <= 1e-12,
            "case {case}: uniform impacts differ from FedAvg"
        );

        let scale = rng.random_range(0.001..1000.0);
        let scaled = ImpactVector::new(impacts.iter().map(|h| h * scale).collect()).unwrap();
        let s = aggregate_fgan(&updates, &scaled).unwrap();
        ensure!(
            max_diff(&fgan, &s) <= 1e-12,
            "case {case}: not scale invariant"
        );

        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pu: Vec<NodeUpdate> = perm.iter().map(|&i| updates[i].clone()).collect();
        let ph = ImpactVector::new(perm.iter().map(|&i| impacts[i]).collect()).unwrap();
        ensure!(
            aggregate_fgan(&pu, &ph).unwrap() == fgan,
            "case {case}: permutation changed the result"
        );

        for (out, get) in [
            (
                &fgan.generator,
                (|u: &NodeUpdate| u.params.generator.clone()) as fn(&NodeUpdate) -> ParamVector,
            ),
            (&fgan.discriminator, |u: &NodeUpdate| {
                u.params.discriminator.clone()
            }),
        ] {
            for (c, v) in out.0.iter().enumerate() {
                let col = updates.iter().map(|u| get(u).0[c]);
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                ensure!(
                    *v >= lo && *v <= hi,
                    "case {case}: coordinate {c} outside hull"
                );
            }
        }

        let single =
            aggregate_fgan(&updates[..1], &ImpactVector::new(vec![impacts[0]]).unwrap()).unwrap();
        ensure!(
            single == updates[0].params,
            "case {case}: single update not reproduced"
        );

        worst_oracle = worst_oracle.max(max_diff(&fgan, &oracle_mean(&updates, &impacts)));
    }
    ensure!(
        worst_oracle <= 1e-9,
        "independent weighted mean differs by {worst_oracle:.3e}"
    );
    Ok(format!("1000 cases; oracle agreement {worst_oracle:.1e}"))
}

// 3 -------------------------------------------------------------------------

fn priority_law() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    let p = compute_priority(10.0, 5, 100, 50, 0).unwrap();
    ensure!(close(p, 4.0), "worked example gave {p}");
    ensure!(
        compute_priority(0.0, 5, 100, 99, 0).unwrap() == 0.0,
        "A = 0 not zero"
    );
    let p = compute_priority(7.0, 4, 60, 10, 10).unwrap();
    ensure!(close(p, 1.75), "founding member gave {p}");
    let p = compute_priority(3.0, 2, 80, 80, 5).unwrap();
    ensure!(
        close(p, 3.0 / (2.0 * MATURITY_FLOOR)),
        "floored maturity gave {p}"
    );
    ensure!(cluster_attack_index([2, 3, 5]) == 10, "A_C is not the sum");
    let p = compute_cluster_priority(10.0, 2, 50, 0, 0).unwrap();
    ensure!(close(p, 5.0), "cluster example gave {p}");
    ensure!(
        compute_priority(1.0, 1, 5, 0, 5).is_err(),
        "T <= T_o accepted"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let t_o = rng.random_range(0..100u64);
        let t = t_o + rng.random_range(10..1000u64);
        // keep T_s away from T so the floor is inactive
        let ts1 = rng.random_range(t_o..t - 2);
        let ts2 = rng.random_range(ts1 + 1..t - 1);
        let n = rng.random_range(1..50usize);
        let a = rng.random_range(0.1..100.0);
        let a2 = a + rng.random_range(0.1..100.0);
        let p = |law, a, n, ts| compute_priority_with(law, a, n, t, ts, t_o).unwrap();
        let lit = |a, n, ts| p(PriorityLaw::Literal, a, n, ts);
        let inv = |a, n, ts| p(PriorityLaw::InvertedMaturity, a, n, ts);
        for law in [PriorityLaw::Literal, PriorityLaw::InvertedMaturity] {
            ensure!(
                p(law, a2, n, ts1) > p(law, a, n, ts1),
                "not increasing in A"
            );
            ensure!(
                p(law, a, n + 1, ts1) < p(law, a, n, ts1),
                "not decreasing in N"
            );
        }
        ensure!(
            inv(a, n, ts2) < inv(a, n, ts1),
            "inverted law not decreasing in T_s"
        );
        ensure!(
            lit(a, n, ts2) > lit(a, n, ts1),
            "literal law not increasing in T_s"
        );
    }
    Ok("worked examples exact; T_s-decrease holds under inverted_maturity, literal law rises with T_s".into())
}

// 4 -------------------------------------------------------------------------

fn update_for(id: &str, seed: u64, n: u64, a: u64) -> NodeUpdate {
    NodeUpdate {
        source_id: SourceId::new(id),
        params: GanModel::init_default(2, seed).unwrap().params().clone(),
        sample_count: n,
        local_loss: 0.5,
        reported_attack_index: a,
    }
}

fn coordinator(participation: f64, high_attack: HighAttackPolicy, suspension: u64) -> Coordinator {
    Coordinator::new(
        "c0",
        Tier::Proxy,
        0,
        CoordinatorConfig {
            participation,
            high_attack,
            suspension,
            law: PriorityLaw::Literal,
        },
        GanModel::init_default(2, 99).unwrap(),
    )
    .unwrap()
}

fn round_conformance() -> Outcome {
    let mut c = coordinator(0.5, HighAttackPolicy::Disabled, 100);
    let joins = [0u64, 0, 10, 20, 0];
    let attacks = [4u64, 9, 1, 6, 2];
    let ids: Vec<SourceId> = (0..5).map(|i| SourceId(format!("n{i}"))).collect();
    for (id, &j) in ids.iter().zip(&joins) {
        c.add_member(id.clone(), j).unwrap();
    }
    let mut enqueued = Vec::new();
    for i in 0..5 {
        let u = update_for(&ids[i].0, i as u64, 10 + i as u64, attacks[i]);
        match c
            .submit_request(&ids[i], u, attacks[i], 40 + i as u64)
            .unwrap()
        {
            SubmitOutcome::Accepted { priority } => enqueued.push((ids[i].clone(), priority)),
            other => return Err(format!("{} rejected: {other:?}", ids[i])),
        }
    }
    let mut by_priority = enqueued.clone();
    by_priority.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<SourceId> = by_priority[..2].iter().map(|(id, _)| id.clone()).collect();

    let report = c.run_round(50).unwrap();
    ensure!(
        report.intake_limit == 2,
        "intake limit {}",
        report.intake_limit
    );
    ensure!(
        report.accepted == top,
        "aggregated {:?}, expected {:?}",
        report.accepted,
        top
    );
    ensure!(c.queue().is_empty(), "queue not emptied");
    ensure!(
        report.discarded.len() == 3,
        "{} discarded",
        report.discarded.len()
    );
    let expected_impacts: Vec<f64> = by_priority[..2].iter().map(|p| p.1).collect();
    ensure!(
        report.impacts == expected_impacts,
        "impacts {:?}",
        report.impacts
    );

    let chosen: Vec<NodeUpdate> = top
        .iter()
        .map(|id| {
            let i = ids.iter().position(|x| x == id).unwrap();
            update_for(&id.0, i as u64, 10 + i as u64, attacks[i])
        })
        .collect();
    let direct = aggregate_fgan(&chosen, &ImpactVector::new(expected_impacts).unwrap()).unwrap();
    ensure!(
        c.current_model().params() == &direct,
        "model differs from direct aggregation"
    );

    for id in &report.discarded {
        let i = ids.iter().position(|x| x == id).unwrap();
        let out = c
            .submit_request(id, update_for(&id.0, i as u64, 5, 0), 0, 51)
            .unwrap();
        ensure!(out.is_accepted(), "{id} could not resubmit: {out:?}");
    }
    Ok(format!(
        "aggregated {:?}",
        report.accepted.iter().map(|s| &s.0).collect::<Vec<_>>()
    ))
}

// 5 -------------------------------------------------------------------------

fn reputation_mechanics() -> Outcome {
    const T_SUS: u64 = 50;
    let mut c = coordinator(1.0, HighAttackPolicy::Fixed { threshold: 10.0 }, T_SUS);
    let bad = SourceId::new("bad");
    let good = SourceId::new("good");
    c.add_member(bad.clone(), 0).unwrap();
    c.add_member(good.clone(), 0).unwrap();

    ensure!(
        c.submit_request(&bad, update_for("bad", 1, 10, 20), 20, 10)
            .unwrap()
            .is_accepted(),
        "strike 1 rejected"
    );
    c.run_round(10).unwrap();
    ensure!(
        c.submit_request(&bad, update_for("bad", 1, 10, 25), 25, 20)
            .unwrap()
            .is_accepted(),
        "strike 2 rejected"
    );
    // third strike while the second request is still pending
    let out = c
        .submit_request(&bad, update_for("bad", 1, 10, 30), 30, 21)
        .unwrap();
    let until = 21 + T_SUS;
    ensure!(
        out == SubmitOutcome::Rejected(RejectReason::Blacklisted { until }),
        "third strike gave {out:?}"
    );
    ensure!(
        !c.has_pending(&bad),
        "pending request survived the blacklist"
    );
    ensure!(
        c.member(&bad).unwrap().consecutive_high == 0,
        "strike counter not reset"
    );

    for t in 22..until {
        c.lift_suspensions(t);
        let out = c
            .submit_request(&bad, update_for("bad", 1, 10, 1), 1, t)
            .unwrap();
        ensure!(
            matches!(
                out,
                SubmitOutcome::Rejected(RejectReason::Blacklisted { .. })
            ),
            "suspended node admitted at {t}"
        );
        if !c.has_pending(&good) {
            c.submit_request(&good, update_for("good", 2, 10, 1), 1, t)
                .unwrap();
        }
        let r = c.run_round(t).unwrap();
        ensure!(
            !r.accepted.contains(&bad),
            "suspended payload aggregated at {t}"
        );
    }
    let lifted = c.lift_suspensions(until);
    ensure!(lifted == vec![bad.clone()], "reinstated {lifted:?}");
    ensure!(c.member(&bad).unwrap().joined_at == until, "T_s not reset");

    let now = until + 9;
    let out = c
        .submit_request(&bad, update_for("bad", 1, 10, 3), 3, now)
        .unwrap();
    let expected = compute_priority(3.0, 2, now, until, 0).unwrap();
    let unreset = compute_priority(3.0, 2, now, 0, 0).unwrap();
    ensure!(
        out == SubmitOutcome::Accepted { priority: expected } && expected != unreset,
        "post-reinstatement submission gave {out:?}, expected priority {expected}"
    );
    Ok(format!(
        "suspended {T_SUS} ticks; post-reinstatement priority {expected:.3}"
    ))
}

// 6 + 7 ---------------------------------------------------------------------

struct SeedResult {
    lift_beta: f64,
    fed_home: (f64, f64),
    local_home: (f64, f64),
    identical: bool,
}

fn artefacts(out: &SimOutcome, config: &SimConfig) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_metrics(&mut bytes, &out.metrics.records).unwrap();
    let digest = config_digest(config);
    let mut models: Vec<(u64, &GanModel)> = out
        .clusters
        .iter()
        .map(|c| (c.rounds_run(), c.current_model()))
        .collect();
    if let Some(c) = &out.central {
        models.push((c.rounds_run(), c.current_model()));
    }
    for (round, model) in models {
        let ck = Checkpoint {
            round,
            config_digest: digest,
            model: model.clone(),
        };
        bytes.extend(ck.to_bytes());
    }
    bytes
}

fn run_seed(seed: u64) -> Result<SeedResult, String> {
    let mut config = SimConfig::default();
    config.seed = seed;
    let fed = run_simulation_detailed(&config).map_err(|e| e.to_string())?;
    let again = run_simulation_detailed(&config).map_err(|e| e.to_string())?;
    let identical = artefacts(&fed, &config) == artefacts(&again, &config);

    let mut ablation = config.clone();
    ablation.central.enabled = false;
    let local = run_simulation_detailed(&ablation).map_err(|e| e.to_string())?;

    let summary = fed.metrics.summary().ok_or("no summary")?;
    let global = summary.global.as_ref().ok_or("no central model")?;
    if global.central_rounds == 0 {
        return Err(format!("seed {seed}: no central round ran"));
    }
    let at = |e: &fedgan::eval::Evaluation, attack: &str| e.per_attack[attack].auc;
    let local_summary = local.metrics.summary().ok_or("no summary")?;
    let a = &local_summary.clusters[0].evaluation;
    let b = &local_summary.clusters[1].evaluation;
    Ok(SeedResult {
        lift_beta: at(&global.evaluations["c0"], "beta") - at(a, "beta"),
        fed_home: (
            at(&global.evaluations["c0"], "alpha"),
            at(&global.evaluations["c1"], "beta"),
        ),
        local_home: (at(a, "alpha"), at(b, "beta")),
        identical,
    })
}

fn federation_benefit() -> Outcome {
    let seeds = [1u64, 2, 3, 4, 5];
    let results: Vec<Result<SeedResult, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| s.spawn(move || run_seed(seed)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&SeedResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let lift = mean(&|r| r.lift_beta);
    let homes = [
        mean(&|r| r.fed_home.0),
        mean(&|r| r.fed_home.1),
        mean(&|r| r.local_home.0),
        mean(&|r| r.local_home.1),
    ];
    let note = format!(
        "lift {lift:.3}; home AUC federated {:.3}/{:.3}, local {:.3}/{:.3}",
        homes[0], homes[1], homes[2], homes[3]
    );
    let nondet: Vec<u64> = seeds
        .iter()
        .zip(&results)
        .filter(|(_, r)| !r.identical)
        .map(|(s, _)| *s)
        .collect();
    ensure!(
        nondet.is_empty(),
        "{note}; seeds {nondet:?} not byte-identical on rerun"
    );
    ensure!(lift >= 0.05, "{note}; lift below 0.05");
    ensure!(
        homes.iter().all(|&h| h >= 0.85),
        "{note}; home AUC below 0.85"
    );
    Ok(format!("{note}; reruns byte-identical"))
}

// 8 -------------------------------------------------------------------------

fn degenerate_hierarchy() -> Outcome {
    let mut config = SimConfig::default();
    config.seed = 8;
    config.duration = 400;
    config.attack_types.clear();
    config.clusters.truncate(1);
    config.clusters[0].node_count = 1;
    config.clusters[0].attacks.clear();
    let out = run_simulation_detailed(&config).map_err(|e| e.to_string())?;
    let node = &out.nodes[0][0];
    let hyper = |k: u64| TrainHyper {
        lr: config.gan.lr,
        batch_size: config.gan.batch_size,
        steps: config.gan.steps,
        seed: training_seed(config.seed, 0, 0, k),
        semi_supervised: config.gan.semi_supervised,
        reference_fraction: config.gan.reference_fraction,
    };

    let mut local = out.initial_model.clone();
    let mut k = 0u64;
    let mut checked_rounds = 0;
    for ev in &out.trace {
        match ev {
            TraceEvent::Trained { submission, .. } => {
                ensure!(
                    submission.trained_from == local.hash(),
                    "training {k} started from a different model"
                );
                let data = node
                    .dataset_prefix(submission.samples)
                    .ok_or("empty prefix")?;
                local = train_round(&local, &data, &hyper(k))
                    .map_err(|e| e.to_string())?
                    .0;
                ensure!(
                    submission.trained_to == local.hash(),
                    "training {k} diverged from local SGD"
                );
                k += 1;
            }
            TraceEvent::ProxyRound { model_hash, .. }
            | TraceEvent::CentralRound { model_hash, .. }
            | TraceEvent::Distributed { model_hash, .. } => {
                ensure!(
                    *model_hash == local.hash(),
                    "federated model differs from local chain"
                );
                checked_rounds += 1;
            }
            _ => {}
        }
    }
    ensure!(
        k >= 3 && checked_rounds >= 3,
        "too little activity ({k} trainings)"
    );

    let mut c = coordinator(0.6, HighAttackPolicy::default(), 10);
    c.add_member(SourceId::new("a"), 0).unwrap();
    let before: Vec<u64> = c
        .current_model()
        .params()
        .discriminator
        .0
        .iter()
        .map(|v| v.to_bits())
        .collect();
    let hash = c.current_model().hash();
    let r = c.run_round(5).unwrap();
    let after: Vec<u64> = c
        .current_model()
        .params()
        .discriminator
        .0
        .iter()
        .map(|v| v.to_bits())
        .collect();
    ensure!(
        r.noop && before == after && c.current_model().hash() == hash,
        "empty round changed the model"
    );
    Ok(format!(
        "{k} local trainings replayed, {checked_rounds} federated hashes matched"
    ))
}

// 9 -------------------------------------------------------------------------

fn pairwise_auc(neg: &[f64], pos: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for q in neg {
            s += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let coarse = case % 2 == 0;
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = rng.random_range(0.0..1.0) + shift;
                    if coarse {
                        (v * 10.0).round() / 10.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        let nn = 1 + case % 37;
        let np = 1 + (case * 7) % 41;
        let neg = draw(nn, 0.0);
        let pos = draw(np, 0.2);
        let fast = auc(&neg, &pos).map_err(|e| e.to_string())?;
        worst = worst.max((fast - pairwise_auc(&neg, &pos)).abs());
    }
    ensure!(worst <= 1e-9, "max deviation {worst:.3e}");
    Ok(format!("max deviation {worst:.1e}"))
}
