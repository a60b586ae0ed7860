use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mpq_core::convlab::{gap_sweep, oracle_gap_check, run_decay};
use mpq_core::intpipe::{verify_layer, VerifyStats, DEFAULT_PRECISION};
use mpq_core::multipoint::{StepPolicy, DEFAULT_MAX_STEP};
use mpq_core::netquant::{
    build_ladders, epsilon_for_op_ratio, epsilon_sweep, quantize_network, Granularity, QuantConfig,
};
use mpq_core::synth::{synthetic_mlp, SynthSpec};
use mpq_core::{
    load_model, load_quantized, model_report, save_model, save_quantized, QuantizedModel,
};

/// Exit code for bad input, flags or files.
const EXIT_INPUT: u8 = 1;
/// Exit code for a violated internal invariant.
const EXIT_INVARIANT: u8 = 2;

#[derive(Parser)]
#[command(name = "mpq", version, about = "Multipoint post-training quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a model directory into an artifact directory.
    Quantize(QuantizeArgs),
    /// Memory and OP counts of a quantized artifact.
    Report(ReportArgs),
    /// Check the integer pipeline against the float reconstruction.
    Verify(VerifyArgs),
    /// Convergence experiments.
    #[command(subcommand)]
    Lab(LabCommand),
    /// Write a seeded synthetic MLP with calibration data.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    PerLayer,
    PerChannel,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Model directory containing manifest.json.
    model: PathBuf,
    /// Output directory for the artifact.
    #[arg(short, long)]
    out: PathBuf,
    /// Directory holding calibration files (defaults to the model directory).
    #[arg(long)]
    calib_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    bits_w: u32,
    #[arg(long, default_value_t = 8)]
    bits_a: u32,
    #[arg(long, value_enum, default_value = "per-layer")]
    granularity: GranularityArg,
    /// Zero offset (default).
    #[arg(long, conflicts_with = "asymmetric")]
    symmetric: bool,
    /// Offset at the midpoint of each weight group.
    #[arg(long)]
    asymmetric: bool,
    /// Output-error threshold; `inf` disables multipoint.
    #[arg(long, required_unless_present = "target_op_ratio")]
    epsilon: Option<f64>,
    /// Pick the threshold whose OP ratio to plain rounding is closest to this.
    #[arg(long, conflicts_with = "epsilon")]
    target_op_ratio: Option<f64>,
    /// Cap on the grid-search step.
    #[arg(long, default_value_t = DEFAULT_MAX_STEP)]
    eta: f64,
    /// Maximum pairs per channel.
    #[arg(long, default_value_t = 8)]
    n_max: usize,
    /// Fixed-point precision of stored coefficients.
    #[arg(long, default_value_t = DEFAULT_PRECISION)]
    p: u32,
    /// Layers kept at 8-bit weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    exclude_layers: Vec<String>,
    /// Disable the clipping-factor search for weights.
    #[arg(long)]
    no_clip: bool,
    /// Per-channel CSV (defaults to channels.csv in the output directory).
    #[arg(long)]
    errors_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Artifact directory containing qmanifest.json.
    artifact: PathBuf,
    /// Activation bit width; overrides the width stored in the artifact.
    #[arg(long)]
    act_bits: Option<u32>,
    /// Layers left out of the totals, comma separated.
    #[arg(long, value_delimiter = ',')]
    exclude_layers: Vec<String>,
    /// Print CSV instead of a table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Artifact directory containing qmanifest.json.
    artifact: PathBuf,
    /// Model directory whose calibration batches drive the check.
    #[arg(long)]
    model: PathBuf,
    /// Directory holding calibration files (defaults to the model directory).
    #[arg(long)]
    calib_dir: Option<PathBuf>,
    /// Coefficient precision for the integer pipeline.
    #[arg(short, long, default_value_t = DEFAULT_PRECISION)]
    p: u32,
    /// Also check plainly rounded channels.
    #[arg(long)]
    all_channels: bool,
}

#[derive(Subcommand)]
enum LabCommand {
    /// Log-residual decay of a Gaussian vector, one CSV per step policy.
    Decay(DecayArgs),
    /// Greedy step versus the exhaustive per-step optimum.
    Gap(GapArgs),
}

#[derive(Args)]
struct DecayArgs {
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    bits: u32,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STEP)]
    eta: f64,
    /// Fixed step sizes to run besides the adaptive policy.
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long, default_value_t = 6)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    bits: u32,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Greedy steps per trial.
    #[arg(long, default_value_t = 6)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STEP)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Input width followed by each layer's output width.
    #[arg(long, value_delimiter = ',', default_value = "64,64,32")]
    widths: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    /// Outlier channels per layer.
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    #[arg(long, default_value_t = 8.0)]
    outlier_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn quant_config(a: &QuantizeArgs, epsilon: f64) -> QuantConfig {
    QuantConfig {
        weight_bits: a.bits_w,
        activation_bits: a.bits_a,
        granularity: match a.granularity {
            GranularityArg::PerLayer => Granularity::PerLayer,
            GranularityArg::PerChannel => Granularity::PerChannel,
        },
        symmetric: !a.asymmetric,
        epsilon,
        max_step: a.eta,
        max_pairs: a.n_max,
        precision: a.p,
        clip_weights: !a.no_clip,
        high_precision_layers: a.exclude_layers.clone(),
        ..QuantConfig::default()
    }
}

fn channel_csv(q: &QuantizedModel) -> String {
    let mut out = String::from("layer,channel,scheme,n,error,saturated\n");
    for layer in &q.layers {
        for p in &layer.channels {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                layer.name,
                p.channel,
                p.scheme,
                p.n(),
                p.achieved_error,
                p.saturated
            );
        }
    }
    out
}

fn cmd_quantize(a: QuantizeArgs) -> Result<()> {
    let model = load_model(&a.model, a.calib_dir.as_deref())
        .with_context(|| format!("loading model from {}", a.model.display()))?;
    let epsilon = match (a.epsilon, a.target_op_ratio) {
        (Some(e), _) => e,
        (None, Some(target)) => {
            let cfg = quant_config(&a, f64::INFINITY);
            let ladders = build_ladders(&model, &cfg).context("computing escalation ladders")?;
            let point = epsilon_for_op_ratio(&epsilon_sweep(&ladders, cfg.activation_bits), target)
                .context("model has no channels")?;
            println!(
                "target OP ratio {target}: epsilon {} gives {:.4}",
                point.epsilon, point.op_ratio
            );
            point.epsilon
        }
        (None, None) => bail!("either --epsilon or --target-op-ratio is required"),
    };
    let cfg = quant_config(&a, epsilon);
    let (q, summary) = quantize_network(&model, &cfg).context("quantizing")?;
    save_quantized(&a.out, &q)
        .with_context(|| format!("writing artifact to {}", a.out.display()))?;
    let csv_path = a
        .errors_csv
        .clone()
        .unwrap_or_else(|| a.out.join("channels.csv"));
    fs::write(&csv_path, channel_csv(&q))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    println!(
        "{} channels: {} multipoint ({} saturated), {} pairs, mean output error {:.6e}",
        summary.channels,
        summary.multipoint_channels,
        summary.saturated_channels,
        summary.total_pairs,
        summary.mean_error
    );
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut q = load_quantized(&a.artifact)
        .with_context(|| format!("loading artifact from {}", a.artifact.display()))?;
    let act_bits = match a.act_bits {
        Some(b) => {
            for layer in &mut q.layers {
                layer.activation = layer.activation.map(|(_, k)| (b, k));
            }
            b
        }
        None => 8,
    };
    for name in &a.exclude_layers {
        if !q.layers.iter().any(|l| &l.name == name) {
            bail!("excluded layer `{name}` is not in the artifact");
        }
    }
    let report = model_report(&q, act_bits, &a.exclude_layers);
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{report}");
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let q = load_quantized(&a.artifact)
        .with_context(|| format!("loading artifact from {}", a.artifact.display()))?;
    let model = load_model(&a.model, a.calib_dir.as_deref())
        .with_context(|| format!("loading model from {}", a.model.display()))?;
    let mut total = VerifyStats::default();
    for layer in &q.layers {
        let src = model
            .layer(&layer.name)
            .with_context(|| format!("layer `{}` is not in the model", layer.name))?;
        let batch = src
            .calibration
            .as_ref()
            .ok_or_else(|| mpq_core::Error::MissingCalibration(layer.name.clone()))?;
        let stats = verify_layer(layer, batch, a.p, !a.all_channels)
            .with_context(|| format!("verifying layer `{}`", layer.name))?;
        println!(
            "{}: {} channels, {} evaluations, max deviation {:.6}, max deviation/bound {:.4}, violations {}",
            layer.name,
            stats.channels,
            stats.evaluations,
            stats.max_deviation,
            stats.max_bound_fraction,
            stats.violations
        );
        total.merge(&stats);
    }
    println!(
        "total: {} channels, max deviation {:.6}, violations {}",
        total.channels, total.max_deviation, total.violations
    );
    if total.violations > 0 {
        return Err(mpq_core::Error::Invariant(format!(
            "{} integer outputs outside the error bound",
            total.violations
        ))
        .into());
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_decay(a: DecayArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut policies = vec![(
        "adaptive".to_string(),
        StepPolicy::Adaptive { max_step: a.eta },
    )];
    policies.extend(
        a.gamma
            .iter()
            .map(|&g| (format!("fixed_{g}"), StepPolicy::Fixed { step: g })),
    );
    for (name, policy) in policies {
        let run = run_decay(a.dim, a.bits, a.steps, policy, a.seed)?;
        write_file(&a.out.join(format!("decay_{name}.csv")), &run.to_csv())?;
        let fit = run.fit.map_or("no fit".to_string(), |f| {
            format!(
                "slope {:.4}, R2 {:.4} over {} points",
                f.slope, f.r_squared, f.points
            )
        });
        println!(
            "{name}: gate {:?}, plateau from {:?}, {fit}",
            run.gate_step, run.stall_step
        );
    }
    Ok(())
}

fn cmd_gap(a: GapArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let report = oracle_gap_check(a.dim, a.bits, a.trials, a.eta, a.steps, a.seed)?;
    write_file(&a.out.join("gap.csv"), &report.to_csv())?;
    let sweep = gap_sweep(a.dim, a.bits, a.trials, a.eta, a.seed)?;
    let mut sweep_csv = String::from("eta,mean_first_step_gap\n");
    for (div, g) in [1.0, 4.0, 16.0].iter().zip(sweep) {
        let _ = writeln!(sweep_csv, "{},{}", a.eta / div, g);
    }
    write_file(&a.out.join("gap_sweep.csv"), &sweep_csv)?;
    println!(
        "{} steps: max contraction {:.4}, max (greedy2-oracle2)/eta {:.4e}, bound violations {}",
        report.steps.len(),
        report.max_contraction(),
        report.empirical_constant(),
        report.bound_violations(1e-12)
    );
    println!(
        "mean first-step gap for eta, eta/4, eta/16: {:.3e}, {:.3e}, {:.3e}",
        sweep[0], sweep[1], sweep[2]
    );
    if report.dominance_violations(1e-12) > 0 {
        return Err(
            mpq_core::Error::Invariant("greedy step beat the exhaustive optimum".into()).into(),
        );
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let model = synthetic_mlp(&SynthSpec {
        widths: a.widths,
        samples: a.samples,
        outlier_channels: a.outliers,
        outlier_scale: a.outlier_scale,
        seed: a.seed,
    })?;
    save_model(&a.out, &model).with_context(|| format!("writing model to {}", a.out.display()))?;
    println!("wrote {} layers to {}", model.layers.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Quantize(a) => cmd_quantize(a),
        Command::Report(a) => cmd_report(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Lab(LabCommand::Decay(a)) => cmd_decay(a),
        Command::Lab(LabCommand::Gap(a)) => cmd_gap(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let internal = e
                .chain()
                .filter_map(|c| c.downcast_ref::<mpq_core::Error>())
                .any(mpq_core::Error::is_internal);
            ExitCode::from(if internal { EXIT_INVARIANT } else { EXIT_INPUT })
        }
    }
}
