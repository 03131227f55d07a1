use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use risloc::fisher::{state_bounds, CrbReport};
use risloc::harness::{self, output, Config, ProfilePolicy};
use risloc::rng::{stream_rng, Stream};
use risloc::signal::random_phase_profile;
use risloc::Error;

const DEFAULTS: &str = "\
Reference scenario (used when no --config is given; every field can be overridden in JSON):
  TX at [0, 0, 0] m; RXs at [-3, 5, -1] and [3, -3, 0] m
  RIS at [4, 1, -4] m, orientation 30 deg, 17x17 elements, spacing 2.5 mm
  wavelength 1 cm (30 GHz); 128 subcarriers at 120 kHz; 100 OFDM symbols
  transmit power 20 dBm per subcarrier; noise PSD -174 dBm/Hz; noise figure 5 dB
  IFFT size 4096; c = 3e8 m/s
Experiment defaults: 200 trials, master seed 1, one phase profile per experiment,
  power axis 10..34 dBm in 2 dB steps, N_c in {16, 32, 64, 128} at 20 dBm,
  M in {2..6} on a 5 m circle, 21x21 contour over [-10, 10] m at z = -1 m.
Print the full default configuration with `risloc crb --dump-config`.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.";

#[derive(Parser)]
#[command(name = "risloc", version, about = "RIS position and orientation estimation with Cramér-Rao bounds", after_help = DEFAULTS)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration (scenario, estimator and experiment blocks).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Monte Carlo trials per sweep point; overrides the config.
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Output file (written atomically). Defaults to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One noisy trial through the full estimator, with truth and bounds (JSON).
    Simulate {
        /// Trial index within the seed stream.
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Bounds at the configured state.
    Crb {
        /// Print the effective configuration instead.
        #[arg(long)]
        dump_config: bool,
    },
    /// RMSE and bounds versus transmit power.
    SweepPower,
    /// RMSE and bounds versus number of subcarriers at fixed spacing.
    SweepBandwidth,
    /// PEB/OEB over an xy grid.
    Contour,
    /// Full-model versus TOA-only bounds over the receiver count.
    CompareToa {
        /// Bounds only, skip the Monte Carlo runs.
        #[arg(long)]
        bounds_only: bool,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn load(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.experiment.master_seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.experiment.trials = t;
    }
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress(done: usize, total: usize) {
    eprintln!("[{done}/{total}] sweep points done");
}

fn run(cli: &Cli, cfg: &Config) -> Result<String, Error> {
    let csv = |default: Format| cli.format.unwrap_or(default) == Format::Csv;
    let spacing = cfg.scenario.subcarrier_spacing_hz;
    match &cli.command {
        Command::Simulate { trial } => {
            if csv(Format::Json) {
                return Err(Error::Config("simulate only writes JSON".into()));
            }
            Ok(output::to_json(&harness::simulate_once(cfg, *trial)?))
        }
        Command::Crb { dump_config: true } => Ok(cfg.to_json()),
        Command::Crb { dump_config: false } => {
            let (sc, st) = cfg.scenario.to_model()?;
            let keys: &[u64] = match cfg.experiment.profile_policy {
                ProfilePolicy::PerExperiment => &[],
                ProfilePolicy::PerTrial => &[0],
            };
            let prof = random_phase_profile(sc.num_elements(), sc.num_symbols, &mut stream_rng(cfg.experiment.master_seed, Stream::Profile, keys));
            let r = state_bounds(&sc, &st, &prof)?;
            if csv(Format::Json) {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(CrbReport::csv_header(sc.num_receivers())).map_err(|e| Error::Io(e.to_string()))?;
                w.write_record(r.csv_row()).map_err(|e| Error::Io(e.to_string()))?;
                Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).expect("utf-8"))
            } else {
                Ok(output::to_json(&r))
            }
        }
        Command::SweepPower => {
            let r = harness::run_monte_carlo(cfg, &progress)?;
            if csv(Format::Csv) { output::rmse_csv(&r, spacing) } else { Ok(output::to_json(&r)) }
        }
        Command::SweepBandwidth => {
            let r = harness::sweep_bandwidth(cfg, &progress)?;
            if csv(Format::Csv) { output::rmse_csv(&r, spacing) } else { Ok(output::to_json(&r)) }
        }
        Command::Contour => {
            let r = harness::crb_contour(cfg)?;
            if csv(Format::Csv) { output::contour_csv(&r) } else { Ok(output::to_json(&r)) }
        }
        Command::CompareToa { bounds_only } => {
            let r = harness::compare_toa_only(cfg, !bounds_only, &progress)?;
            if csv(Format::Csv) { output::toa_comparison_csv(&r) } else { Ok(output::to_json(&r)) }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("risloc: {e}");
            return ExitCode::from(1);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(p) => p.install(|| run(&cli, &cfg)),
        Err(e) => Err(Error::Io(e.to_string())),
    };
    let text = match result {
        Ok(t) => t,
        Err(e) => {
            eprintln!("risloc: {e}");
            return ExitCode::from(if matches!(e, Error::Config(_)) { 1 } else { 2 });
        }
    };
    let written = match &cli.out {
        Some(p) => output::write_atomic(p, &text),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("risloc: {e}");
            ExitCode::from(2)
        }
    }
}
