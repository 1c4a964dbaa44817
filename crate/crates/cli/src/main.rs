//! `modemeter`: oscillatory-mode and mode-shape estimation from
//! multi-channel frequency measurements.
//!
//! Subcommands:
//! - `synth`: render a scenario description into channel data,
//! - `analyze`: run the sliding-window decomposition (Part I) and the
//!   clustering stage (Part II), writing observations, estimates and
//!   plot-ready data,
//! - `inspect`: print a human-readable summary of an output file.

mod report;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use modemeter_core::{
    clustering::{self, ClusterConfig, EstimatesReport},
    observation::{self, ObservationSet, PipelineConfig},
    synth::{self, ScenarioSpec},
    timeseries::{Format, GapPolicy},
    ComponentSelection,
};

/// Environment variable supplying the default random seed.
const SEED_ENV: &str = "MODEMETER_SEED";

#[derive(Parser)]
#[command(name = "modemeter", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic ringdown data from a scenario file.
    Synth(SynthArgs),
    /// Estimate modes and mode shapes from measured channel data.
    Analyze(AnalyzeArgs),
    /// Summarize an observations or estimates file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output file for the generated channel data.
    #[arg(long)]
    out: PathBuf,
    /// Output format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FileFormat>,
    /// Override the scenario's random seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input channel data (CSV or JSON).
    #[arg(long)]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FileFormat>,
    /// Directory receiving observations.jsonl, estimates.json and
    /// plotdata.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Sliding window length, seconds.
    #[arg(long, default_value_t = 10.0)]
    window: f64,
    /// Window step, seconds.
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Allowed window-length range, as MIN:MAX seconds.
    #[arg(long, value_parser = parse_range, default_value = "5:10")]
    window_bounds: (f64, f64),
    /// Fraction of samples cut from each end after the Hilbert transform.
    #[arg(long, default_value_t = 0.10)]
    taper: f64,
    /// Accepted frequency band, as LO:HI Hz.
    #[arg(long, value_parser = parse_range, default_value = "0.1:2.0")]
    band: (f64, f64),
    /// Reject components whose envelope regression error reaches this.
    #[arg(long, default_value_t = 4e-3)]
    mse_max: f64,
    /// Cumulative variance fraction retained in each decomposition layer.
    #[arg(long, default_value_t = 0.95)]
    keep_variance: f64,
    /// Relative power threshold bounding the mean-frequency band
    /// (0 = full one-sided spectrum).
    #[arg(long, default_value_t = 0.01)]
    peak_fraction: f64,
    /// Repair gaps by linear interpolation up to this many samples.
    #[arg(long)]
    fill_gaps: Option<usize>,
    /// Smallest number of clusters tried.
    #[arg(long, default_value_t = 2)]
    kmin: usize,
    /// Largest number of clusters tried.
    #[arg(long, default_value_t = 10)]
    kmax: usize,
    /// k-Means restarts per candidate k.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Random seed (default: $MODEMETER_SEED or 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after Part I; write observations only.
    #[arg(long)]
    part1_only: bool,
    /// Collapse estimates that are rotated replicates of each other.
    #[arg(long)]
    merge_replicates: bool,
    /// Omit timestamps so outputs are byte-identical across runs.
    #[arg(long)]
    reproducible: bool,
}

#[derive(Args)]
struct InspectArgs {
    /// An estimates.json or observations.jsonl file.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FileFormat {
    Csv,
    Json,
}

fn parse_range(value: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = value
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got `{value}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad low bound: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad high bound: {e}"))?;
    if hi <= lo || hi.is_nan() || lo.is_nan() {
        return Err(format!("range must increase, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Missing inputs exit with 2 (usage-class error, matching clap);
/// everything else is a runtime failure, exit 1.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn format_for(path: &Path, flag: Option<FileFormat>) -> Format {
    match flag {
        Some(FileFormat::Csv) => Format::Csv,
        Some(FileFormat::Json) => Format::Json,
        None => match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        },
    }
}

fn default_seed() -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let file = File::open(&args.spec)
        .with_context(|| format!("cannot open scenario file {}", args.spec.display()))?;
    let mut spec: ScenarioSpec = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse scenario file {}", args.spec.display()))?;
    if let Some(seed) = args.seed {
        spec.rng_seed = seed;
    }
    let channels = synth::generate(&spec)?;

    let format = format_for(&args.out, args.format);
    let mut stage = StagedOutputs::new();
    let tmp = stage.path_for(&args.out);
    let mut writer = BufWriter::new(
        File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?,
    );
    channels.serialize(&mut writer, format)?;
    writer.flush()?;
    stage.commit()?;

    println!(
        "wrote {} channels x {} samples at {} Hz ({} modes, {} events) to {}",
        channels.channel_count(),
        channels.sample_count(),
        channels.sample_rate_hz(),
        spec.modes.len(),
        spec.events.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let started = Instant::now();
    let gap_policy = match args.fill_gaps {
        Some(max_gap) => GapPolicy::FillLinear { max_gap },
        None => GapPolicy::Reject,
    };
    let format = format_for(&args.input, args.format);
    let file = File::open(&args.input)
        .with_context(|| format!("cannot open input {}", args.input.display()))?;
    let channels = modemeter_core::ingest(BufReader::new(file), format, gap_policy)
        .with_context(|| format!("cannot ingest {}", args.input.display()))?;

    let pipeline = PipelineConfig {
        window_length_s: args.window,
        window_step_s: args.step,
        window_bounds_s: args.window_bounds,
        taper_fraction: args.taper,
        keep_pcs: ComponentSelection::CumulativeVariance(args.keep_variance),
        keep_cpcs: ComponentSelection::CumulativeVariance(args.keep_variance),
        band_hz: args.band,
        max_regression_mse: args.mse_max,
        peak_fraction: args.peak_fraction,
        ..PipelineConfig::default()
    };
    let seed = args.seed.unwrap_or_else(default_seed);

    let set = observation::run_part1(&channels, &pipeline)?;
    println!(
        "{} observations from {} channels ({:.1} s of data)",
        set.len(),
        channels.channel_count(),
        channels.duration_s()
    );

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let mut stage = StagedOutputs::new();

    let obs_path = args.out_dir.join("observations.jsonl");
    let tmp = stage.path_for(&obs_path);
    let mut writer = BufWriter::new(File::create(&tmp)?);
    set.write_jsonl(&mut writer)?;
    writer.flush()?;

    if args.part1_only {
        stage.commit()?;
        println!("wrote {}", obs_path.display());
        return Ok(());
    }

    let cluster_cfg = ClusterConfig {
        k_min: args.kmin,
        k_max: args.kmax,
        restarts: args.restarts,
        seed,
        ..ClusterConfig::default()
    };
    let output = clustering::select_and_cluster(&set, &cluster_cfg)?;
    let estimates = if args.merge_replicates {
        clustering::merge_replicates(&output.estimates, 15.0, 0.05)
    } else {
        output.estimates.clone()
    };

    let generated_at = if args.reproducible {
        None
    } else {
        Some(SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs())
    };

    let mut report = EstimatesReport::new(&output, &set);
    if args.merge_replicates {
        report = report::with_merged_estimates(&output, &estimates, &set);
    }
    let estimates_doc = report::Timestamped {
        generated_at_unix_s: generated_at,
        seed,
        body: report,
    };
    let est_path = args.out_dir.join("estimates.json");
    let tmp = stage.path_for(&est_path);
    let mut writer = BufWriter::new(File::create(&tmp)?);
    serde_json::to_writer_pretty(&mut writer, &estimates_doc)?;
    writer.flush()?;

    let plot = report::build_plot_data(&set, &estimates, pipeline.band_hz, generated_at);
    let plot_path = args.out_dir.join("plotdata.json");
    let tmp = stage.path_for(&plot_path);
    let mut writer = BufWriter::new(File::create(&tmp)?);
    serde_json::to_writer_pretty(&mut writer, &plot)?;
    writer.flush()?;

    stage.commit()?;

    println!(
        "{} mode estimates (k = {}, silhouette = {})",
        estimates.len(),
        output.selected_k,
        output
            .mean_silhouette
            .map(|s| format!("{s:.3}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    if output.low_confidence {
        println!("note: no multi-cluster structure; single low-confidence cluster reported");
    }
    for (index, estimate) in estimates.iter().enumerate() {
        println!(
            "  mode {}: {:.3} Hz, decay {:+.3} 1/s, {} observations",
            index + 1,
            estimate.frequency_hz,
            estimate.decay_rate,
            estimate.member_count
        );
    }
    println!(
        "wrote {}, {}, {} in {:.2} s",
        obs_path.display(),
        est_path.display(),
        plot_path.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let mut text = String::new();
    File::open(&args.input)
        .with_context(|| format!("cannot open {}", args.input.display()))?
        .read_to_string(&mut text)?;
    let trimmed = text.trim_start();

    if trimmed.starts_with('{') && trimmed.contains("\"estimates\"") {
        let doc: report::Timestamped<EstimatesReport> =
            serde_json::from_str(trimmed).context("not a valid estimates file")?;
        print_estimates_table(&doc.body);
        return Ok(());
    }

    // JSON-lines observations.
    let observations = ObservationSet::read_jsonl(trimmed.as_bytes())
        .context("not a valid observations file")?;
    let channels = observations.first().map_or(0, |o| o.phasors.len());
    println!("{} observations, {} channels", observations.len(), channels);
    if !observations.is_empty() {
        let (f_lo, f_hi) = observations.iter().fold((f64::MAX, f64::MIN), |acc, o| {
            (acc.0.min(o.frequency_hz), acc.1.max(o.frequency_hz))
        });
        let windows: std::collections::BTreeSet<usize> =
            observations.iter().map(|o| o.window_index).collect();
        println!(
            "frequencies {f_lo:.3}..{f_hi:.3} Hz across {} windows",
            windows.len()
        );
    }
    Ok(())
}

fn print_estimates_table(report: &EstimatesReport) {
    println!(
        "{} estimates over channels [{}] (k = {}, silhouette = {}{})",
        report.estimates.len(),
        report.channel_ids.join(", "),
        report.selected_k,
        report
            .mean_silhouette
            .map(|s| format!("{s:.3}"))
            .unwrap_or_else(|| "n/a".into()),
        if report.low_confidence {
            ", low confidence"
        } else {
            ""
        }
    );
    println!(
        "{:>4}  {:>8}  {:>11}  {:>7}  top phasors",
        "#", "f (Hz)", "decay (1/s)", "members"
    );
    for (index, estimate) in report.estimates.iter().enumerate() {
        let mut phasors: Vec<(String, f64, f64)> = estimate
            .shape
            .iter()
            .map(|(id, [re, im])| {
                let g = modemeter_core::Complex64::new(*re, *im);
                (id.clone(), g.norm(), g.arg().to_degrees())
            })
            .collect();
        phasors.sort_by(|a, b| b.1.total_cmp(&a.1));
        let top: Vec<String> = phasors
            .iter()
            .take(4)
            .map(|(id, mag, deg)| format!("{id}={mag:.2}@{deg:+.0}deg"))
            .collect();
        println!(
            "{:>4}  {:>8.3}  {:>11.3}  {:>7}  {}",
            index + 1,
            estimate.frequency_hz,
            estimate.decay_rate,
            estimate.member_count,
            top.join(" ")
        );
    }
}

/// Writes outputs to `.tmp` siblings first and renames them into place only
/// when everything succeeded, so failures never leave torn files behind.
struct StagedOutputs {
    staged: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl StagedOutputs {
    fn new() -> Self {
        Self {
            staged: Vec::new(),
            committed: false,
        }
    }

    fn path_for(&mut self, target: &Path) -> PathBuf {
        let mut tmp = target.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        self.staged.push((tmp.clone(), target.to_path_buf()));
        tmp
    }

    fn commit(&mut self) -> Result<()> {
        for (tmp, target) in &self.staged {
            fs::rename(tmp, target)
                .with_context(|| format!("cannot move {} into place", target.display()))?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for StagedOutputs {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.staged {
                let _ = fs::remove_file(tmp);
            }
        }
    }
}
