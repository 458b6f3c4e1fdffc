//! `sdpse` — command-line workflows for SDP-based state estimation.
//!
//! Every command reads JSON inputs, writes its artifacts into `--out`, and
//! exits with 0 on success, 2 on invalid input, 3 when the measurement set is
//! unobservable, 4 on solver failure and 5 when the bad-data search exceeds
//! its combination budget.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::json;

use sdpse::bad_data::{self, BadDataOptions};
use sdpse::estimate::{
    default_anchors, estimate, parse_anchors, resolve_anchors, AnchorNode, EstimateOptions,
    EstimationResult,
};
use sdpse::measurements::{
    measurements_to_records, parse_measurements, parse_state, state_to_records, synthesize,
    Measurement, MeasurementPlan, NoiseLevel, NoiseSpec, RepairMethod, StateRecord,
};
use sdpse::network::{parse_network, NetworkModel};
use sdpse::observability::analyze;
use sdpse::partition::{
    auto_plan, estimate_decoupled, parse_plan, separate_on_switches, ResolvedPlan, TiePolicy,
};
use sdpse::stats::error_stats;
use sdpse::{Error, ErrorCategory};

#[derive(Parser)]
#[command(
    name = "sdpse",
    version,
    about = "SDP-relaxation state estimation for power networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize measurements from a ground-truth state.
    Synth(SynthArgs),
    /// Estimate the state (monolithic or decoupled).
    Estimate(EstimateArgs),
    /// Error statistics of an estimate against a reference state.
    Stats(StatsArgs),
    /// Build a partition plan.
    Partition(PartitionArgs),
    /// Observability report of a measurement set.
    Observability(ObservabilityArgs),
    /// Bad-data detection, identification and final estimate.
    Baddata(BaddataArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Placement {
    /// Flows at the head-side end of every branch, head injection and
    /// magnitudes at the head plus `--vmag-bus` sites.
    OneSided,
    /// Every injection, both ends of every branch and every magnitude.
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum RepairChoice {
    Negate,
    Efficiency,
    Analytic,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyChoice {
    Ignore,
    Update,
}

#[derive(Args)]
struct NetworkArg {
    /// Network description (JSON).
    #[arg(long)]
    network: PathBuf,
}

#[derive(Args)]
struct OutArg {
    /// Output directory (created when missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthSettings {
    /// Noise level, 0 (noise-free) to 4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=4))]
    noise_level: Option<u8>,
    /// Seed of all random draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Meter placement for synthesis.
    #[arg(long, value_enum, default_value_t = Placement::OneSided)]
    placement: Placement,
    /// Extra voltage-magnitude sites for one-sided placement (repeatable).
    #[arg(long = "vmag-bus")]
    vmag_bus: Vec<String>,
}

#[derive(Args)]
struct MeasurementSource {
    /// Measurement file; mutually exclusive with synthesis settings.
    #[arg(long, conflicts_with = "noise_level")]
    measurements: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthSettings,
}

#[derive(Args)]
struct RepairArgs {
    /// Disable far-end pseudo-measurement repair.
    #[arg(long)]
    no_repair: bool,
    #[arg(long, value_enum, default_value_t = RepairChoice::Negate)]
    repair_method: RepairChoice,
    /// Branch efficiency for `--repair-method efficiency`, in (0, 1].
    #[arg(long, default_value_t = 0.98)]
    efficiency: f64,
    /// Reference angles (JSON list of {bus, phase, angle_deg}).
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Iteration limit of the barrier solver.
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    network: NetworkArg,
    /// Ground-truth state (JSON).
    #[arg(long)]
    state: PathBuf,
    #[command(flatten)]
    synth: SynthSettings,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct PartitionSource {
    /// Partition plan file.
    #[arg(long, conflicts_with_all = ["auto_partition_size", "switch_partition"])]
    plan: Option<PathBuf>,
    /// Automatic separation with the given target sub-network size.
    #[arg(long, conflicts_with = "switch_partition")]
    auto_partition_size: Option<usize>,
    /// Separate at switches.
    #[arg(long)]
    switch_partition: bool,
    #[arg(long, value_enum)]
    tie_policy: Option<PolicyChoice>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    network: NetworkArg,
    /// Ground-truth state: the synthesis source, and the reference for error
    /// statistics.
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    source: MeasurementSource,
    #[command(flatten)]
    partition: PartitionSource,
    #[command(flatten)]
    repair: RepairArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct StatsArgs {
    /// Estimated state (JSON, as written by `estimate`).
    #[arg(long)]
    estimate: PathBuf,
    /// Reference state (JSON).
    #[arg(long)]
    state: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[command(flatten)]
    partition: PartitionSource,
    /// Reference angles to place into the plan.
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ObservabilityArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    source: MeasurementSource,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct BaddataArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    source: MeasurementSource,
    /// Detection threshold in residual standard deviations.
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    /// Largest number of suspect combinations to re-estimate.
    #[arg(long, default_value_t = 256)]
    max_combinations: usize,
    #[command(flatten)]
    repair: RepairArgs,
    #[command(flatten)]
    out: OutArg,
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_network(arg: &NetworkArg) -> anyhow::Result<NetworkModel> {
    Ok(parse_network(&read(&arg.network)?)?)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn synthesized(
    model: &NetworkModel,
    truth: &[Complex64],
    settings: &SynthSettings,
) -> anyhow::Result<Vec<Measurement>> {
    let plan = match settings.placement {
        Placement::Full => MeasurementPlan::full(model),
        Placement::OneSided => {
            let buses = settings
                .vmag_bus
                .iter()
                .map(|id| {
                    model
                        .bus_index(id)
                        .ok_or_else(|| Error::Schema(format!("unknown --vmag-bus `{id}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            MeasurementPlan::one_sided(model, &buses)
        }
    };
    let level = NoiseLevel::from_index(settings.noise_level.unwrap_or(0))
        .expect("range-checked by the parser");
    Ok(synthesize(
        model,
        truth,
        &plan,
        &NoiseSpec::level(level, settings.seed),
    )?)
}

fn load_truth(
    model: &NetworkModel,
    path: &Option<PathBuf>,
) -> anyhow::Result<Option<Vec<Complex64>>> {
    path.as_ref()
        .map(|p| Ok(parse_state(model, &read(p)?)?))
        .transpose()
}

fn load_measurements(
    model: &NetworkModel,
    source: &MeasurementSource,
    truth: Option<&[Complex64]>,
) -> anyhow::Result<Vec<Measurement>> {
    match (&source.measurements, truth) {
        (Some(path), _) => Ok(parse_measurements(model, &read(path)?)?),
        (None, Some(truth)) => synthesized(model, truth, &source.synth),
        (None, None) => bail!(Error::Schema(
            "either --measurements or --state (to synthesize from) is required".into()
        )),
    }
}

fn estimate_options(args: &RepairArgs) -> EstimateOptions {
    let mut options = EstimateOptions {
        repair: (!args.no_repair).then_some(match args.repair_method {
            RepairChoice::Negate => RepairMethod::Negate,
            RepairChoice::Efficiency => RepairMethod::Efficiency {
                eta: args.efficiency,
            },
            RepairChoice::Analytic => RepairMethod::Analytic,
        }),
        ..EstimateOptions::default()
    };
    if let Some(n) = args.max_iterations {
        options.solver.max_iterations = n;
    }
    options
}

fn load_anchors(
    model: &NetworkModel,
    path: &Option<PathBuf>,
) -> anyhow::Result<Option<Vec<AnchorNode>>> {
    path.as_ref()
        .map(|p| Ok(resolve_anchors(model, &parse_anchors(&read(p)?)?)?))
        .transpose()
}

fn tie_policy(choice: Option<PolicyChoice>) -> Option<TiePolicy> {
    choice.map(|c| match c {
        PolicyChoice::Ignore => TiePolicy::Ignore,
        PolicyChoice::Update => TiePolicy::Update,
    })
}

/// The partition requested on the command line, if any.
fn partition_plan(
    model: &NetworkModel,
    args: &PartitionSource,
) -> anyhow::Result<Option<ResolvedPlan>> {
    let policy = tie_policy(args.tie_policy);
    let mut plan = if let Some(path) = &args.plan {
        parse_plan(&read(path)?)?.resolve(model)?
    } else if let Some(d) = args.auto_partition_size {
        if d == 0 {
            bail!(Error::InvalidPlan(
                "--auto-partition-size must be positive".into()
            ));
        }
        auto_plan(model, d, policy.unwrap_or_default())?
    } else if args.switch_partition {
        separate_on_switches(model, policy.unwrap_or_default())
    } else {
        return Ok(None);
    };
    if let Some(p) = policy {
        plan.policy = p;
    }
    Ok(Some(plan))
}

fn result_summary(model: &NetworkModel, r: &EstimationResult) -> serde_json::Value {
    json!({
        "status": r.status,
        "objective": r.objective,
        "iterations": r.iterations,
        "rank1_ratio": r.rank1_ratio,
        "measurements_used": r.measurements.len(),
        "repair_log": r.repair_log,
        "nodes": model.node_count(),
    })
}

fn residual_rows(model: &NetworkModel, r: &EstimationResult) -> Vec<serde_json::Value> {
    measurements_to_records(model, &r.measurements)
        .into_iter()
        .zip(&r.residuals)
        .map(|(rec, res)| {
            let mut v = serde_json::to_value(rec).expect("records serialize");
            let map = v.as_object_mut().expect("record is an object");
            map.insert("estimate".into(), json!(res.estimate));
            map.insert("residual".into(), json!(res.residual));
            map.insert("normalized".into(), json!(res.normalized));
            v
        })
        .collect()
}

fn write_estimate(
    model: &NetworkModel,
    result: &EstimationResult,
    truth: Option<&[Complex64]>,
    out: &Path,
) -> anyhow::Result<()> {
    let records = state_to_records(model, &result.state);
    write_json(out, "estimate.json", &records)?;
    write_json(out, "residuals.json", &residual_rows(model, result))?;
    if let Some(truth) = truth {
        let stats = error_stats(&records, &state_to_records(model, truth))?;
        write_json(out, "stats.json", &stats)?;
        write_text(out, "histogram.csv", &stats.histogram_csv())?;
        println!(
            "Vmag error: rms {:.3e} avg {:.3e} max {:.3e} pu; angle error max {:.3e} deg",
            stats.vmag_pu.rms,
            stats.vmag_pu.average,
            stats.vmag_pu.maximum,
            stats.angle_deg.maximum
        );
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let model = load_network(&args.network)?;
    let truth = parse_state(&model, &read(&args.state)?)?;
    let meas = synthesized(&model, &truth, &args.synth)?;
    write_json(
        &args.out.out,
        "measurements.json",
        &measurements_to_records(&model, &meas),
    )?;
    println!("wrote {} measurements", meas.len());
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs) -> anyhow::Result<()> {
    let model = load_network(&args.network)?;
    let truth = load_truth(&model, &args.state)?;
    let meas = load_measurements(&model, &args.source, truth.as_deref())?;
    let options = estimate_options(&args.repair);
    let anchors = load_anchors(&model, &args.repair.anchors)?;
    let out = &args.out.out;
    match partition_plan(&model, &args.partition)? {
        None => {
            let anchors = anchors.unwrap_or_else(|| default_anchors(&model));
            let result = estimate(&model, &meas, &anchors, &options)?;
            let mut summary = result_summary(&model, &result);
            summary["mode"] = json!("monolithic");
            write_json(out, "estimate_report.json", &summary)?;
            write_estimate(&model, &result, truth.as_deref(), out)?;
            println!(
                "monolithic estimate: {} iterations, rank-1 ratio {:.2e}",
                result.iterations, result.rank1_ratio
            );
        }
        Some(mut plan) => {
            if let Some(a) = &anchors {
                plan.assign_anchors(&model, a);
            }
            let decoupled = estimate_decoupled(&model, &meas, &plan, &options)?;
            let mut summary = result_summary(&model, &decoupled.merged);
            summary["mode"] = json!("decoupled");
            summary["policy"] = json!(plan.policy);
            summary["sub_networks"] = decoupled
                .subs
                .iter()
                .map(|s| {
                    json!({
                        "buses": s.buses.iter().map(|&b| model.buses[b].id.clone()).collect::<Vec<_>>(),
                        "status": s.result.status,
                        "objective": s.result.objective,
                        "iterations": s.result.iterations,
                        "rank1_ratio": s.result.rank1_ratio,
                    })
                })
                .collect();
            write_json(out, "estimate_report.json", &summary)?;
            write_json(out, "plan.json", &plan.to_plan(&model))?;
            write_estimate(&model, &decoupled.merged, truth.as_deref(), out)?;
            println!(
                "decoupled estimate over {} sub-networks",
                decoupled.subs.len()
            );
        }
    }
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> anyhow::Result<()> {
    let parse = |p: &Path| -> anyhow::Result<Vec<StateRecord>> {
        serde_json::from_str(&read(p)?)
            .map_err(|e| Error::Schema(format!("{}: {e}", p.display())).into())
    };
    let stats = error_stats(&parse(&args.estimate)?, &parse(&args.state)?)?;
    write_json(&args.out.out, "stats.json", &stats)?;
    write_text(&args.out.out, "histogram.csv", &stats.histogram_csv())?;
    println!(
        "{} nodes; Vmag rms {:.3e} pu, angle rms {:.3e} deg",
        stats.nodes, stats.vmag_pu.rms, stats.angle_deg.rms
    );
    Ok(())
}

fn cmd_partition(args: &PartitionArgs) -> anyhow::Result<()> {
    let model = load_network(&args.network)?;
    let Some(mut plan) = partition_plan(&model, &args.partition)? else {
        bail!(Error::InvalidPlan(
            "one of --plan, --auto-partition-size or --switch-partition is required".into()
        ));
    };
    if let Some(a) = load_anchors(&model, &args.anchors)? {
        plan.assign_anchors(&model, &a);
    }
    write_json(&args.out.out, "plan.json", &plan.to_plan(&model))?;
    println!(
        "{} sub-networks, {} tie-lines",
        plan.sub_networks.len(),
        plan.tie_lines.len()
    );
    Ok(())
}

fn cmd_observability(args: &ObservabilityArgs) -> anyhow::Result<()> {
    let model = load_network(&args.network)?;
    let truth = load_truth(&model, &args.state)?;
    let meas = load_measurements(&model, &args.source, truth.as_deref())?;
    let report = analyze(&model, &meas);
    write_json(&args.out.out, "observability.json", &report)?;
    println!("verdict: {:?}", report.verdict);
    Ok(())
}

fn cmd_baddata(args: &BaddataArgs) -> anyhow::Result<()> {
    let model = load_network(&args.network)?;
    let truth = load_truth(&model, &args.state)?;
    let meas = load_measurements(&model, &args.source, truth.as_deref())?;
    let options = estimate_options(&args.repair);
    let anchors =
        load_anchors(&model, &args.repair.anchors)?.unwrap_or_else(|| default_anchors(&model));
    let bad = BadDataOptions {
        threshold: args.threshold,
        max_combinations: args.max_combinations,
        ..BadDataOptions::default()
    };
    let outcome = bad_data::run(&model, &meas, &anchors, &options, &bad)?;
    write_json(
        &args.out.out,
        "baddata.json",
        &outcome.report(&model, &meas),
    )?;
    write_estimate(&model, &outcome.result, truth.as_deref(), &args.out.out)?;
    println!(
        "{} suspect set(s), {} culprit(s), {} combinations evaluated",
        outcome.suspects.len(),
        outcome.culprits.len(),
        outcome.combinations_evaluated
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let category = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::category)
        .unwrap_or(ErrorCategory::Validation);
    match category {
        ErrorCategory::Validation => 2,
        ErrorCategory::Unobservable => 3,
        ErrorCategory::Solver => 4,
        ErrorCategory::Budget => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Observability(a) => cmd_observability(a),
        Command::Baddata(a) => cmd_baddata(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
