use usddps::metrics::{evaluate, si_sdr_best_shift};
use usddps::prior::{GaussianPrior, OracleDenoiser};
use usddps::sampler::{dereverb, read_trace, write_trace, Mode, SamplerConfig};
use usddps::stft::StftConfig;
use usddps::synth::{make_scene, speech_surrogate, Scene, SceneSpec};
use usddps::wav::{read_wav, write_wav};
use usddps::waveform::MultiChannelWaveform;
use usddps::wpe::{wpe_dereverb, WpeConfig};

fn scene(seconds: f64, channels: usize, seed: u64) -> (Vec<f64>, Scene) {
    let x = speech_surrogate((seconds * 16000.0) as usize, 16000, seed).unwrap();
    let sc = make_scene(&x, &SceneSpec::new(channels, 0.6, Some(20.0), seed)).unwrap();
    (x, sc)
}

fn small(mode: Mode) -> SamplerConfig {
    SamplerConfig {
        mode,
        n_steps: 30,
        rir_taps: 40,
        rir_bands: 8,
        fcp_taps: 20,
        n_its: 3,
        ..SamplerConfig::default()
    }
}

#[test]
fn wpe_improves_on_the_mixture() {
    for seed in 0..2 {
        let (_, sc) = scene(1.0, 2, seed);
        let mix = si_sdr_best_shift(sc.y.channel(0), &sc.x_direct).unwrap();
        let w = wpe_dereverb(&sc.y, &WpeConfig::for_channels(2)).unwrap();
        let out = si_sdr_best_shift(w.channel(0), &sc.x_direct).unwrap();
        assert!(out > mix, "seed {seed}: {out} vs {mix}");
    }
}

#[test]
fn guided_sampling_beats_wpe_with_the_oracle_prior() {
    let (x, sc) = scene(0.25, 2, 3);
    let wpe = wpe_dereverb(&sc.y, &WpeConfig::for_channels(2)).unwrap();
    let wpe = si_sdr_best_shift(wpe.channel(0), &sc.x_direct).unwrap();
    for mode in [Mode::UsdDps, Mode::McBuddy, Mode::McFcp] {
        let out = dereverb(&sc.y, &mut OracleDenoiser::new(x.clone()), &small(mode)).unwrap();
        let state = si_sdr_best_shift(&out.final_state, &sc.x_direct).unwrap();
        assert!(state > wpe + 5.0, "{mode:?}: {state} vs {wpe}");
        assert!(out.estimate.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}

#[test]
fn gaussian_prior_run_stays_finite_and_traced() {
    let (_, sc) = scene(0.25, 3, 4);
    let len = sc.y.len();
    let mut prior = GaussianPrior::new(
        vec![0.0; len],
        usddps::prior::Covariance::Diagonal(vec![0.05 * 0.05; len]),
    )
    .unwrap();
    let out = dereverb(&sc.y, &mut prior, &small(Mode::UsdDps)).unwrap();
    assert!(out.estimate.iter().chain(&out.final_state).all(|v| v.is_finite()));
    assert_eq!(out.rirs.len(), 1);
    let mut buf = Vec::new();
    write_trace(&mut buf, &out.traces).unwrap();
    assert_eq!(read_trace(&buf[..]).unwrap(), out.traces);
}

#[test]
fn results_survive_a_wav_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, sc) = scene(0.5, 2, 5);
    let path = dir.path().join("y.wav");
    write_wav(&path, &sc.y).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.num_channels(), 2);
    for (a, b) in back.channels().iter().zip(sc.y.channels()) {
        // float32 storage
        assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() <= 1e-7 * v.abs().max(1e-3)));
    }
    let mono = MultiChannelWaveform::mono(sc.x_direct.clone(), 16000).unwrap();
    let report = evaluate(mono.channel(0), &sc.x_direct, &StftConfig::default()).unwrap();
    assert_eq!(report.si_sdr, 60.0);
    assert!(report.lsd.abs() < 1e-9);
}
