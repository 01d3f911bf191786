use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmagnav::harness::{
    cmd_match_once, run_crlb_curves, run_field_estimation_sweep, run_localization_sweep, run_runtime_benchmark,
    write_synth_map, ExperimentConfig,
};
use qmagnav::map::RasterFormat;
use qmagnav::matcher::Pipeline;
use qmagnav::Result;

/// NV magnetometry simulation and magnetic-anomaly map matching.
#[derive(Debug, Parser)]
#[command(name = "qmagnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Budgeted quantum bound vs dwell time, with classical levels.
    Crlb,
    /// Corner field estimation sweep over sites, budgets and repetitions.
    Estimate,
    /// Estimation followed by map matching per sensor count and pipeline.
    Localize,
    /// Search runtime and counters vs ROI size.
    Bench,
    /// One search of a measurement file against a total-field raster.
    Match {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        measurement: PathBuf,
    },
    /// Write the configured anomaly and total-field rasters.
    SynthMap,
}

#[derive(Debug, Args)]
struct Opts {
    /// JSON experiment manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// grad, corner, grad-corner or corner-grad.
    #[arg(long, global = true)]
    metric: Option<Pipeline>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    #[arg(long, global = true)]
    seeds: Option<usize>,
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Sensing budget in seconds; repeat for a ladder.
    #[arg(long, global = true)]
    budget: Vec<f64>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=4))]
    sensors: Option<u8>,
    /// ROI area fraction; repeat for a sweep.
    #[arg(long = "roi-frac", global = true)]
    roi_frac: Vec<f64>,
    /// asc or bin.
    #[arg(long, global = true)]
    format: Option<RasterFormat>,
}

fn configure(opts: &Opts) -> Result<ExperimentConfig> {
    let mut c = match &opts.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = opts.seed {
        c.seed = s;
    }
    if let Some(o) = &opts.out {
        c.out_dir = o.clone();
    }
    if let Some(m) = opts.metric {
        c.pipelines = vec![m];
        c.search.pipeline = m;
    }
    if let Some(s) = opts.stride {
        c.search.stride = s;
    }
    if let Some(k) = opts.seeds {
        c.search.seeds = k;
    }
    if let Some(w) = opts.window {
        c.search.window = w;
    }
    if !opts.budget.is_empty() {
        c.budgets = opts.budget.clone();
    }
    if let Some(n) = opts.sensors {
        c.sensor_counts = vec![n as usize];
    }
    if !opts.roi_frac.is_empty() {
        c.roi_fracs = opts.roi_frac.clone();
        c.localization_roi_frac = opts.roi_frac[0];
    }
    if let Some(f) = opts.format {
        c.format = f;
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<()> {
    let c = configure(&cli.opts)?;
    let dir = &c.out_dir;
    let files = match &cli.command {
        Command::Crlb => {
            let r = run_crlb_curves(&c)?;
            println!("minimum: tau = {:e} s, var = {:e} T^2", r.minimum.tau, r.minimum.variance_b);
            r.write(dir)?
        }
        Command::Estimate => run_field_estimation_sweep(&c)?.write(dir)?,
        Command::Localize => run_localization_sweep(&c)?.write(dir)?,
        Command::Bench => run_runtime_benchmark(&c)?.write(dir)?,
        Command::Match { map, measurement } => {
            print!("{}", cmd_match_once(map, cli.opts.format, measurement, &c.search)?);
            Vec::new()
        }
        Command::SynthMap => write_synth_map(&c, dir, c.format)?,
    };
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
