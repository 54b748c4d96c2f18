mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use usddps::prior::ENDPOINT_ENV;

/// Multi-channel blind speech dereverberation by diffusion posterior sampling.
#[derive(Debug, Parser)]
#[command(name = "usddps", version)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic reverberant scene.
    Synth(SynthArgs),
    /// Weighted prediction error dereverberation.
    Wpe(WpeArgs),
    /// Diffusion posterior sampling dereverberation.
    Dereverb(DereverbArgs),
    /// SI-SDR, best-shift SI-SDR and log-spectral distance against a reference.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Mono clean source; a seeded speech-like surrogate is used when absent.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Surrogate length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct WpeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Prediction taps per channel; defaults by channel count.
    #[arg(long)]
    pub taps: Option<usize>,
    #[arg(long)]
    pub delay: Option<usize>,
    #[arg(long = "iters")]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub variance_floor: Option<f64>,
    /// WPE configuration (JSON); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DereverbArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// usd-dps, mc-buddy, mc-fcp or unguided.
    #[arg(long)]
    pub mode: Option<String>,
    /// gaussian, oracle:CLEAN.wav, remote:HOST:PORT, remote:/path.sock, or
    /// remote alone to use the endpoint in the environment.
    #[arg(long, default_value = "gaussian")]
    pub prior: String,
    #[arg(long = "steps")]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub lambda_prime: Option<f64>,
    #[arg(long)]
    pub n_its: Option<usize>,
    #[arg(long)]
    pub rescale_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rir_taps: Option<usize>,
    #[arg(long)]
    pub rir_bands: Option<usize>,
    #[arg(long)]
    pub fcp_taps: Option<usize>,
    #[arg(long)]
    pub fcp_epsilon: Option<f64>,
    /// stop-through or exact.
    #[arg(long)]
    pub fcp_gradient: Option<String>,
    /// Sampler configuration (JSON); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seconds to wait on a remote score server.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step diagnostics as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Final parametric RIRs as a JSON array.
    #[arg(long)]
    pub rir_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Wpe(a) => commands::wpe(a),
        Command::Dereverb(a) => commands::dereverb(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let commands::CliError::Input(_) = e {
                if e.to_string().contains(ENDPOINT_ENV) {
                    eprintln!("hint: pass --prior remote:HOST:PORT or set {ENDPOINT_ENV}");
                }
            }
            ExitCode::from(e.code())
        }
    }
}
