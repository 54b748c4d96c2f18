use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::{Duration, Instant};

use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use usddps::metrics::evaluate;
use usddps::prior::{Covariance, Endpoint, GaussianPrior, OracleDenoiser, RemoteScore, ScorePrior};
use usddps::sampler::{dereverb as run_sampler, write_trace, FcpGradient, Mode, SamplerConfig};
use usddps::stft::StftConfig;
use usddps::synth::{direct_to_reverberant_db, make_scene, speech_surrogate, SceneManifest, SceneSpec};
use usddps::wav::{read_wav, write_wav};
use usddps::waveform::MultiChannelWaveform;
use usddps::wpe::{wpe_dereverb, WpeConfig};
use usddps::Error;

use crate::{DereverbArgs, EvalArgs, SynthArgs, WpeArgs};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, files or configuration: exit code 1.
    #[error("{0}")]
    Input(String),
    /// The run itself failed: exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Shape(_) | Error::Degenerate(_) | Error::Wav(_) | Error::Json(_) => {
                CliError::Input(e.to_string())
            }
            Error::NonFinite { .. } | Error::Prior { .. } | Error::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn load(path: &Path) -> CliResult<MultiChannelWaveform> {
    read_wav(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn save(path: &Path, x: &MultiChannelWaveform) -> CliResult {
    write_wav(path, x).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input(format!("{} is not valid JSON: {e}", path.display())))
}

/// `base` with the keys of the JSON object in `file` laid over it.
fn overlay<T: Serialize + DeserializeOwned>(base: T, file: Option<&Path>) -> CliResult<T> {
    let Some(path) = file else { return Ok(base) };
    let mut merged = serde_json::to_value(&base).map_err(|e| CliError::Runtime(e.to_string()))?;
    let Value::Object(over) = read_json(path)? else {
        return Err(input(format!("{} must hold a JSON object", path.display())));
    };
    let target = merged.as_object_mut().expect("configurations serialize to objects");
    for (k, v) in over {
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

pub fn synth(a: SynthArgs) -> CliResult {
    let spec: SceneSpec =
        serde_json::from_value(read_json(&a.spec)?).map_err(|e| input(format!("{}: {e}", a.spec.display())))?;
    spec.validate()?;
    let clean = match &a.clean {
        Some(path) => {
            let w = load(path)?;
            if w.num_channels() != 1 {
                return Err(input(format!(
                    "{} has {} channels; the clean source must be mono",
                    path.display(),
                    w.num_channels()
                )));
            }
            if w.sample_rate() != spec.sample_rate {
                return Err(input(format!(
                    "{} is sampled at {} Hz but the scene uses {} Hz",
                    path.display(),
                    w.sample_rate(),
                    spec.sample_rate
                )));
            }
            w.into_channels().remove(0)
        }
        None => {
            if !(a.seconds > 0.0) || !a.seconds.is_finite() {
                return Err(input(format!("--seconds must be positive, got {}", a.seconds)));
            }
            let len = (a.seconds * spec.sample_rate as f64).round() as usize;
            speech_surrogate(len, spec.sample_rate, spec.seed)?
        }
    };
    let scene = make_scene(&clean, &spec)?;
    fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", a.out_dir.display())))?;
    save(&a.out_dir.join("y.wav"), &scene.y)?;
    save(&a.out_dir.join("direct.wav"), &MultiChannelWaveform::mono(scene.x_direct.clone(), spec.sample_rate)?)?;
    save(&a.out_dir.join("clean.wav"), &MultiChannelWaveform::mono(clean.clone(), spec.sample_rate)?)?;
    let manifest = SceneManifest {
        drr_db: scene
            .rirs
            .iter()
            .enumerate()
            .map(|(c, h)| direct_to_reverberant_db(h, spec.delay(c)))
            .collect(),
        rir_len: scene.rirs.iter().map(Vec::len).collect(),
        samples: clean.len(),
        mixture: "y.wav".into(),
        direct: "direct.wav".into(),
        spec,
    };
    save_json(&a.out_dir.join("manifest.json"), &manifest)
}

pub fn wpe(a: WpeArgs) -> CliResult {
    let y = load(&a.input)?;
    let mut cfg = overlay(WpeConfig::for_channels(y.num_channels()), a.config.as_deref())?;
    set(&mut cfg.taps, a.taps);
    set(&mut cfg.delay, a.delay);
    set(&mut cfg.iterations, a.iterations);
    set(&mut cfg.variance_floor, a.variance_floor);
    cfg.validate()?;
    let start = Instant::now();
    let out = wpe_dereverb(&y, &cfg)?;
    info!("WPE on {} channels took {:.2?}", y.num_channels(), start.elapsed());
    save(&a.out, &out)
}

fn make_prior(spec: &str, len: usize, cfg: &SamplerConfig, timeout: f64) -> CliResult<Box<dyn ScorePrior>> {
    if spec == "gaussian" {
        // white, zero mean, at the level the sampler rescales estimates to
        let var = cfg.rescale_std * cfg.rescale_std;
        let prior = GaussianPrior::new(vec![0.0; len], Covariance::Diagonal(vec![var; len]))
            .map_err(|e| input(format!("gaussian prior: {e}")))?;
        return Ok(Box::new(prior));
    }
    if let Some(path) = spec.strip_prefix("oracle:") {
        let w = load(Path::new(path))?;
        if w.num_channels() != 1 || w.len() != len {
            return Err(input(format!(
                "oracle {path} must be mono with {len} samples, got {} x {}",
                w.num_channels(),
                w.len()
            )));
        }
        return Ok(Box::new(OracleDenoiser::new(w.into_channels().remove(0))));
    }
    let client = if spec == "remote" {
        RemoteScore::from_env()
    } else if let Some(endpoint) = spec.strip_prefix("remote:") {
        Endpoint::parse(endpoint).map(RemoteScore::new)
    } else {
        return Err(input(format!(
            "unknown prior {spec:?} (expected gaussian, oracle:CLEAN.wav or remote:HOST:PORT)"
        )));
    }
    .map_err(|e| input(e.to_string()))?;
    if !(timeout > 0.0) || !timeout.is_finite() {
        return Err(input(format!("--timeout must be positive, got {timeout}")));
    }
    Ok(Box::new(client.with_timeout(Duration::from_secs_f64(timeout))))
}

pub fn dereverb(a: DereverbArgs) -> CliResult {
    let y = load(&a.input)?;
    let mut cfg = overlay(SamplerConfig::default(), a.config.as_deref())?;
    if let Some(m) = &a.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    set(&mut cfg.n_steps, a.n_steps);
    set(&mut cfg.sigma_max, a.sigma_max);
    set(&mut cfg.sigma_min, a.sigma_min);
    set(&mut cfg.rho, a.rho);
    set(&mut cfg.zeta, a.zeta);
    set(&mut cfg.lambda_prime, a.lambda_prime);
    set(&mut cfg.n_its, a.n_its);
    set(&mut cfg.rescale_std, a.rescale_std);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.rir_taps, a.rir_taps);
    set(&mut cfg.rir_bands, a.rir_bands);
    set(&mut cfg.fcp_taps, a.fcp_taps);
    set(&mut cfg.fcp_epsilon, a.fcp_epsilon);
    if let Some(g) = &a.fcp_gradient {
        cfg.fcp_gradient = match g.as_str() {
            "stop-through" | "stop_through" => FcpGradient::StopThrough,
            "exact" => FcpGradient::Exact,
            other => return Err(input(format!("unknown FCP gradient {other:?} (expected stop-through or exact)"))),
        };
    }
    if cfg.stft == StftConfig::default() && y.sample_rate() != 16000 {
        cfg.stft = StftConfig::for_sample_rate(y.sample_rate())?;
    }
    cfg.validate()?;
    let mut prior = make_prior(&a.prior, y.len(), &cfg, a.timeout)?;
    let start = Instant::now();
    let out = run_sampler(&y, &mut *prior, &cfg)?;
    info!(
        "{} with {} prior: {} steps in {:.2?}",
        cfg.mode.name(),
        prior.name(),
        cfg.n_steps,
        start.elapsed()
    );
    save(&a.out, &MultiChannelWaveform::mono(out.estimate, y.sample_rate())?)?;
    if let Some(path) = &a.trace {
        let file = File::create(path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        write_trace(BufWriter::new(file), &out.traces).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    if let Some(path) = &a.rir_out {
        let docs = out
            .rirs
            .iter()
            .map(|p| p.to_json().and_then(|s| Ok(serde_json::from_str::<Value>(&s)?)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        save_json(path, &docs)?;
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult {
    let est = load(&a.est)?;
    let reference = load(&a.reference)?;
    if est.len() != reference.len() {
        return Err(input(format!(
            "estimate has {} samples, reference has {}",
            est.len(),
            reference.len()
        )));
    }
    if est.num_channels() > 1 || reference.num_channels() > 1 {
        log::warn!("multichannel input; comparing channel 0 only");
    }
    let cfg = StftConfig::for_sample_rate(reference.sample_rate())?;
    let report = evaluate(est.channel(0), reference.channel(0), &cfg)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?);
    if let Some(path) = &a.report {
        save_json(path, &report)?;
    }
    Ok(())
}
