//! `fedgan` command-line front end.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedgan::aggregate::{aggregate_fedavg, aggregate_fgan, ImpactVector, NodeUpdate, SourceId};
use fedgan::eval::{evaluate_model, EvalSets};
use fedgan::gan::{train_round, GanModel, Label, TrainHyper};
use fedgan::io::{
    config_digest, load_checkpoint, load_feature_csv, parse_config, read_metrics, save_checkpoint,
    serialize_config, Checkpoint, IoError, MetricsWriter,
};
use fedgan::sim::{run_simulation_detailed, MetricsRecord};
use log::info;

#[derive(Parser)]
#[command(
    name = "fedgan",
    version,
    about = "Federated GAN intrusion detection experiments"
)]
struct Cli {
    /// Suppress progress output on standard error.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics.jsonl plus per-tier checkpoints.
    Simulate(SimulateArgs),
    /// Train a GAN on a labelled feature CSV.
    TrainLocal(TrainArgs),
    /// Combine checkpoints; FedAvg when --impacts is omitted.
    Aggregate(AggregateArgs),
    /// Print one round record from a metrics stream.
    InspectQueue(InspectArgs),
    /// Score a checkpoint against a labelled feature CSV.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// CSV with feature columns followed by a genuine/malicious label column.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Seeds both initialisation and training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Use malicious rows as extra fake samples.
    #[arg(long)]
    semi_supervised: bool,
    #[arg(long, default_value_t = 0.5)]
    reference_fraction: f64,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// One positive impact per input.
    #[arg(long, num_args = 1.., allow_negative_numbers = true)]
    impacts: Option<Vec<f64>>,
    /// Local sample count per input; 1 each when omitted.
    #[arg(long, num_args = 1..)]
    sample_counts: Option<Vec<u64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// metrics.jsonl written by `simulate`.
    #[arg(long)]
    trace: PathBuf,
    /// Position of the round in the stream, from 0.
    #[arg(long)]
    round: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        if e.is_config_error() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Info
        })
        .parse_default_env()
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::TrainLocal(a) => train_local(a),
        Command::Aggregate(a) => aggregate(a),
        Command::InspectQueue(a) => inspect_queue(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&args.out).map_err(runtime)?;
    info!(
        "running {} ticks with seed {}",
        config.duration, config.seed
    );
    let outcome = run_simulation_detailed(&config).map_err(runtime)?;

    let metrics_path = args.out.join("metrics.jsonl");
    let file = File::create(&metrics_path).map_err(runtime)?;
    let mut writer = MetricsWriter::new(BufWriter::new(file));
    for r in &outcome.metrics.records {
        writer.write(r)?;
    }
    std::fs::write(args.out.join("config.toml"), serialize_config(&config)).map_err(runtime)?;

    let digest = config_digest(&config);
    let save = |name: String, round: u64, model: &GanModel| -> Result<(), Failure> {
        let ck = Checkpoint {
            round,
            config_digest: digest,
            model: model.clone(),
        };
        Ok(save_checkpoint(&args.out.join(name), &ck)?)
    };
    for (ci, c) in outcome.clusters.iter().enumerate() {
        save(
            format!("cluster-{ci}.ckpt"),
            c.rounds_run(),
            c.current_model(),
        )?;
    }
    if let Some(c) = &outcome.central {
        save("central.ckpt".into(), c.rounds_run(), c.current_model())?;
    }
    if let Some(s) = outcome.metrics.summary() {
        info!(
            "{} proxy rounds, {} central rounds, {} blacklist events; wrote {}",
            s.proxy_rounds,
            s.central_rounds,
            s.blacklist_events,
            args.out.display()
        );
    }
    Ok(())
}

fn train_local(args: TrainArgs) -> Result<(), Failure> {
    let data = load_feature_csv(&args.data, None)?;
    let dim = data.batch.dim();
    let (model, round) = match &args.init {
        Some(p) => {
            let ck = load_checkpoint(p, None)?;
            (ck.model, ck.round + 1)
        }
        None => (GanModel::init_default(dim, args.seed).map_err(runtime)?, 1),
    };
    let hyper = TrainHyper {
        lr: args.lr,
        batch_size: args.batch_size,
        steps: args.steps,
        seed: args.seed,
        semi_supervised: args.semi_supervised,
        reference_fraction: args.reference_fraction,
    };
    let (trained, losses) = train_round(&model, &data.batch, &hyper).map_err(runtime)?;
    if let Some(last) = losses.last() {
        info!(
            "{} steps; final losses D {:.4} G {:.4}",
            losses.len(),
            last.discriminator,
            last.generator
        );
    }
    save_checkpoint(
        &args.out,
        &Checkpoint {
            round,
            config_digest: [0; 32],
            model: trained,
        },
    )?;
    Ok(())
}

fn aggregate(args: AggregateArgs) -> Result<(), Failure> {
    let k = args.inputs.len();
    if let Some(h) = &args.impacts {
        if h.len() != k {
            return Err(Failure::Usage(format!(
                "{} impacts for {k} inputs",
                h.len()
            )));
        }
    }
    if let Some(n) = &args.sample_counts {
        if n.len() != k {
            return Err(Failure::Usage(format!(
                "{} sample counts for {k} inputs",
                n.len()
            )));
        }
    }
    let first = load_checkpoint(&args.inputs[0], None)?;
    let mut checkpoints = vec![first.clone()];
    for p in &args.inputs[1..] {
        checkpoints.push(load_checkpoint(p, Some(&first.model))?);
    }
    let updates: Vec<NodeUpdate> = checkpoints
        .iter()
        .enumerate()
        .map(|(i, ck)| NodeUpdate {
            source_id: SourceId(format!("input-{i:06}")),
            params: ck.model.params().clone(),
            sample_count: args.sample_counts.as_ref().map_or(1, |n| n[i]),
            local_loss: 0.0,
            reported_attack_index: 0,
        })
        .collect();
    let params = match &args.impacts {
        Some(h) => {
            let impacts =
                ImpactVector::new(h.clone()).map_err(|e| Failure::Usage(e.to_string()))?;
            aggregate_fgan(&updates, &impacts)
        }
        None => aggregate_fedavg(&updates),
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let digest = if checkpoints
        .iter()
        .all(|c| c.config_digest == first.config_digest)
    {
        first.config_digest
    } else {
        [0; 32]
    };
    let round = checkpoints.iter().map(|c| c.round).max().unwrap_or(0) + 1;
    let model = first.model.with_params(params).map_err(runtime)?;
    save_checkpoint(
        &args.out,
        &Checkpoint {
            round,
            config_digest: digest,
            model,
        },
    )?;
    info!("aggregated {k} checkpoints into {}", args.out.display());
    Ok(())
}

fn inspect_queue(args: InspectArgs) -> Result<(), Failure> {
    let file =
        File::open(&args.trace).map_err(|e| runtime(format!("{}: {e}", args.trace.display())))?;
    let records = read_metrics(BufReader::new(file))?;
    let round = records
        .iter()
        .find_map(|r| match r {
            MetricsRecord::Round(r) if r.seq == args.round => Some(r),
            _ => None,
        })
        .ok_or_else(|| {
            Failure::Usage(format!(
                "no round {} in {}",
                args.round,
                args.trace.display()
            ))
        })?;
    let text = serde_json::to_string_pretty(round).map_err(runtime)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(runtime)
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(Failure::Usage(format!(
            "threshold {} must lie in (0, 1)",
            args.threshold
        )));
    }
    let ck = load_checkpoint(&args.checkpoint, None)?;
    let data = load_feature_csv(&args.data, Some(ck.model.feature_dim()))?;
    let sets = split_by_label(data.batch.samples(), |i| data.batch.label(i));
    let evaluation = evaluate_model(&ck.model, &sets, args.threshold).map_err(runtime)?;
    let text = serde_json::to_string_pretty(&evaluation).map_err(runtime)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(runtime)
}

fn split_by_label(samples: &[Vec<f64>], label: impl Fn(usize) -> Label) -> EvalSets {
    let mut genuine = Vec::new();
    let mut malicious = Vec::new();
    for (i, x) in samples.iter().enumerate() {
        match label(i) {
            Label::Genuine => genuine.push(x.clone()),
            Label::Malicious => malicious.push(x.clone()),
        }
    }
    EvalSets {
        genuine,
        attacks: BTreeMap::from([("malicious".to_owned(), malicious)]),
    }
}
