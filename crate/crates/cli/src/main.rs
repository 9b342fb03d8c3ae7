use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use pcc_event::io::{self as stream_io, FileError, ReadError, StreamFormat};
use pcc_event::kv::{KvError, KvMap};
use pcc_event::pipeline::{self, GatingSummary, PipelineConfig, PipelineError};
use pcc_event::scene::{self, SceneConfig, SceneError};
use thiserror::Error;

mod report;

const THREADS_ENV: &str = "PCC_EVENT_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "pcc-event",
    version,
    about = "Event-camera scene simulator and PCC integrity pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scene and write its event stream.
    Simulate {
        #[command(flatten)]
        scene: SceneArgs,
        /// Output stream file.
        #[arg(long)]
        out: PathBuf,
        /// Stream format; defaults to csv for `.csv` paths and binary otherwise.
        #[arg(long)]
        format: Option<StreamFormat>,
    },
    /// Run the integrity monitor and gate over an observed/predicted pair.
    Analyze {
        #[arg(long)]
        observed: PathBuf,
        #[arg(long)]
        predicted: PathBuf,
        /// Pipeline config (`key = value`); defaults apply to missing keys.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        /// Output directory for metrics.csv, alarms.csv and summary.kv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the per-tick history of one pixel as CSV.
    Trace {
        #[command(flatten)]
        scene: SceneArgs,
        /// Pixel as `x,y`.
        #[arg(long, value_parser = parse_pixel)]
        pixel: (u16, u16),
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a summary.kv against the reference targets.
    Report {
        /// Path to summary.kv.
        summary: PathBuf,
    },
}

#[derive(clap::Args, Debug)]
struct SceneArgs {
    /// Scene config (`key = value`) applied over the default scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `off` simulates the dip-free prediction run.
    #[arg(long, value_enum, default_value_t = Dip::On)]
    dip: Dip,
    #[arg(long = "duration-us")]
    duration_us: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Dip {
    On,
    Off,
}

fn parse_pixel(s: &str) -> Result<(u16, u16), String> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `x,y`, got `{s}`"))?;
    let coord = |v: &str| {
        v.trim()
            .parse::<u16>()
            .map_err(|_| format!("bad coordinate `{v}`"))
    };
    Ok((coord(x)?, coord(y)?))
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Contract(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Contract(_) => 3,
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn scene_error(e: SceneError) -> CliError {
    match e {
        SceneError::OutOfBounds { .. } => CliError::Contract(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

fn file_error(e: FileError) -> CliError {
    match &e {
        FileError::Open { .. } | FileError::Write { .. } => CliError::Io(e.to_string()),
        FileError::Read {
            source: ReadError::Io(_),
            ..
        } => CliError::Io(e.to_string()),
        FileError::Read { .. } => CliError::Contract(e.to_string()),
    }
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::Config(_) => CliError::Config(e.to_string()),
        _ => CliError::Contract(e.to_string()),
    }
}

fn read_kv(path: &Path) -> Result<KvMap, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    KvMap::parse(&text).map_err(|e| kv_error(path, e))
}

fn kv_error(path: &Path, e: KvError) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn load_scene(args: &SceneArgs) -> Result<SceneConfig, CliError> {
    let mut config = match &args.scene {
        Some(path) => SceneConfig::from_kv(&read_kv(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => SceneConfig::default_scene(),
    };
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    }
    if let Some(d) = args.duration_us {
        config.duration_us = d;
    }
    config.validate().map_err(scene_error)?;
    Ok(match args.dip {
        Dip::On => config,
        Dip::Off => config.prediction(),
    })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| {
        CliError::Usage(format!(
            "{THREADS_ENV}: expected a thread count, got `{value}`"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("{THREADS_ENV}: {e}")))?;
    }
    Ok(())
}

fn cmd_simulate(
    args: &SceneArgs,
    out: &Path,
    format: Option<StreamFormat>,
) -> Result<(), CliError> {
    let config = load_scene(args)?;
    let start = Instant::now();
    let stream = scene::simulate(&config, args.dip == Dip::On).map_err(scene_error)?;
    let elapsed = start.elapsed();
    let format = format.unwrap_or_else(|| stream_io::format_for_path(out));
    let bytes = stream_io::save_stream(out, &stream, format).map_err(file_error)?;

    let seconds = config.duration_us as f64 * 1e-6;
    let rate = if seconds > 0.0 {
        stream.len() as f64 / seconds
    } else {
        0.0
    };
    eprintln!(
        "simulate: {} events over {} us ({:.0} ev/s), dip {}, seed {}, {:.2} s",
        stream.len(),
        config.duration_us,
        rate,
        if args.dip == Dip::On { "on" } else { "off" },
        config.rng_seed,
        elapsed.as_secs_f64()
    );
    eprintln!("wrote {} ({bytes} bytes)", out.display());
    Ok(())
}

fn cmd_analyze(
    observed: &Path,
    predicted: &Path,
    pipeline_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let config = match pipeline_path {
        Some(path) => PipelineConfig::from_kv(&read_kv(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => PipelineConfig::default(),
    };
    let load =
        |p: &Path| stream_io::load_stream(p, stream_io::format_for_path(p)).map_err(file_error);
    let observed = load(observed)?;
    let predicted = load(predicted)?;
    let output = pipeline::run(&observed, &predicted, &config).map_err(pipeline_error)?;
    pipeline::write_records(&output, out).map_err(|e| CliError::Io(e.to_string()))?;

    let s = &output.summary;
    eprintln!(
        "analyze: {} records, {} alarms, {} gate windows, f_vg {:.4}, mean ROI {:.4}, charge {:.4}",
        output.records.len(),
        output.alarms.len(),
        s.total_windows,
        s.f_vg,
        s.mean_roi_fraction,
        s.downstream_charge
    );
    for a in &output.alarms {
        let clear = a
            .clear_us
            .map_or("active".to_string(), |c| format!("{c} us"));
        eprintln!(
            "alarm: onset {} us, clear {clear}, r_C {:.3}",
            a.onset_us, a.trigger_value
        );
    }
    Ok(())
}

fn cmd_trace(args: &SceneArgs, pixel: (u16, u16), out: Option<&Path>) -> Result<(), CliError> {
    let config = load_scene(args)?;
    let (x, y) = pixel;
    let trace = scene::pixel_trace(&config, x, y, args.dip == Dip::On).map_err(scene_error)?;

    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(File::create(path).map_err(|e| io_error(path, e))?),
        None => Box::new(io::stdout().lock()),
    };
    let label = out.map_or(PathBuf::from("<stdout>"), Path::to_path_buf);
    let mut w = BufWriter::new(sink);
    let mut write = || -> io::Result<()> {
        writeln!(
            w,
            "t_us,log_luminance,sampled_log_luminance,reference,event"
        )?;
        for s in &trace {
            let event = s.event.map(|e| e.p.as_i8().to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                s.t_us, s.log_luminance, s.sampled_log_luminance, s.reference, event
            )?;
        }
        w.flush()
    };
    write().map_err(|e| io_error(&label, e))?;

    let events = trace.iter().filter(|s| s.event.is_some()).count();
    eprintln!(
        "trace: pixel ({x}, {y}), {} ticks, {events} events",
        trace.len()
    );
    Ok(())
}

fn cmd_report(path: &Path) -> Result<(), CliError> {
    let summary = GatingSummary::from_kv(&read_kv(path)?).map_err(|e| kv_error(path, e))?;
    let (text, passed) = report::render(&summary);
    print!("{text}");
    if summary.total_windows > 0 {
        println!("overall: {}", if passed { "PASS" } else { "FAIL" });
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { scene, out, format } => cmd_simulate(&scene, &out, format),
        Command::Analyze {
            observed,
            predicted,
            pipeline,
            out,
        } => cmd_analyze(&observed, &predicted, pipeline.as_deref(), &out),
        Command::Trace { scene, pixel, out } => cmd_trace(&scene, pixel, out.as_deref()),
        Command::Report { summary } => cmd_report(&summary),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
