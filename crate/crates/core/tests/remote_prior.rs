mod support;

use std::time::{Duration, Instant};

use support::{unit_gaussian, Loopback, Reply};
use usddps::prior::{GaussianPrior, PriorError, RemoteScore, ScorePrior};
use usddps::sampler::{dereverb, Mode, SamplerConfig};
use usddps::stft::StftConfig;
use usddps::waveform::MultiChannelWaveform;

fn client(server: &Loopback) -> RemoteScore {
    RemoteScore::new(server.endpoint.clone()).with_timeout(Duration::from_secs(5))
}

fn awkward_samples() -> Vec<f64> {
    let mut x: Vec<f64> = (0..1000).map(|i| ((i as f64) * 0.37).sin() * 0.8).collect();
    x.extend([0.0, -0.0, 1e-40, -3.5e38, f32::MIN_POSITIVE as f64, 1.0 / 3.0]);
    x
}

#[test]
fn negated_echo_is_bit_exact() {
    let server = Loopback::tcp(|_, _, x| Reply::Score(x.iter().map(|v| -v).collect()));
    let mut prior = client(&server);
    let x = awkward_samples();
    let s = prior.score(&x, 0.25).unwrap();
    for (a, b) in s.iter().zip(&x) {
        assert_eq!(a.to_bits(), (-(*b as f32) as f64).to_bits());
    }
    assert_eq!(prior.name(), "remote");
}

#[test]
fn sigma_reaches_the_server_unchanged() {
    let server = Loopback::tcp(|_, sigma, x| Reply::Score(vec![sigma as f32; x.len()]));
    let mut prior = client(&server);
    let s = prior.score(&[0.0; 4], 0.125).unwrap();
    assert_eq!(s, vec![0.125; 4]);
    assert!(matches!(prior.score(&[0.0; 4], 0.0), Err(PriorError::InvalidSigma(_))));
    assert_eq!(server.requests(), 1);
}

#[test]
fn one_connection_serves_many_requests() {
    let server = Loopback::tcp(unit_gaussian);
    let mut prior = client(&server);
    for i in 0..20 {
        prior.score(&[i as f64; 8], 0.5).unwrap();
    }
    assert_eq!((server.requests(), server.connections()), (20, 1));
}

#[test]
fn wrong_length_is_reported() {
    let server = Loopback::tcp(|_, _, x| Reply::Score(vec![0.0; x.len() - 1]));
    match client(&server).score(&[1.0; 16], 0.1) {
        Err(PriorError::LengthMismatch { expected, got }) => assert_eq!((expected, got), (16, 15)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_headers_carry_the_offset() {
    let cases: [(&[u8], usize); 3] = [
        (b"USDX\x01\x02\x00\x00\x00\x00", 3),
        (b"USDP\x07\x02\x00\x00\x00\x00", 4),
        (b"USDP\x01\x09\x00\x00\x00\x00", 5),
    ];
    for (bytes, want) in cases {
        let raw = bytes.to_vec();
        let server = Loopback::tcp(move |_, _, _| Reply::Raw(raw.clone()));
        match client(&server).score(&[1.0; 4], 0.1) {
            Err(PriorError::Protocol { offset, .. }) => assert_eq!(offset, want),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn server_errors_leave_the_client_usable() {
    let server = Loopback::tcp(|i, sigma, x| {
        if i == 0 {
            Reply::Error("model not loaded".into())
        } else {
            unit_gaussian(i, sigma, x)
        }
    });
    let mut prior = client(&server);
    match prior.score(&[1.0; 4], 1.0) {
        Err(PriorError::Server(text)) => assert_eq!(text, "model not loaded"),
        other => panic!("{other:?}"),
    }
    assert_eq!(prior.score(&[1.0; 4], 1.0).unwrap(), vec![-0.5; 4]);
    assert_eq!(server.connections(), 1);
}

#[test]
fn a_dropped_connection_is_retried_once() {
    let server = Loopback::tcp(|i, sigma, x| if i == 0 { Reply::Hangup } else { unit_gaussian(i, sigma, x) });
    let mut prior = client(&server);
    assert_eq!(prior.score(&[2.0; 3], 1.0).unwrap(), vec![-1.0; 3]);
    assert_eq!((server.requests(), server.connections()), (2, 2));

    let always = Loopback::tcp(|_, _, _| Reply::Hangup);
    let err = client(&always).score(&[2.0; 3], 1.0).unwrap_err();
    assert!(matches!(err, PriorError::Transport { .. }), "{err:?}");
    assert_eq!(always.requests(), 2);
}

#[test]
fn a_stalled_server_times_out() {
    let server = Loopback::tcp(|_, _, _| Reply::Stall(Duration::from_millis(800)));
    let mut prior = RemoteScore::new(server.endpoint.clone()).with_timeout(Duration::from_millis(150));
    let start = Instant::now();
    let err = prior.score(&[0.0; 4], 0.1).unwrap_err();
    assert!(matches!(err, PriorError::Timeout { .. }), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn nothing_listening_is_refused() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = usddps::prior::Endpoint::Tcp(format!("127.0.0.1:{port}"));
    let err = RemoteScore::new(endpoint).score(&[0.0], 0.1).unwrap_err();
    assert!(matches!(err, PriorError::ConnectionRefused { .. }), "{err:?}");
}

#[cfg(unix)]
#[test]
fn unix_socket_round_trip() {
    let server = Loopback::unix(|_, _, x| Reply::Score(x.iter().map(|v| 2.0 * v).collect()));
    let mut prior = client(&server);
    let x = awkward_samples();
    let s = prior.score(&x[..1000], 0.3).unwrap();
    for (a, b) in s.iter().zip(&x) {
        assert_eq!(a.to_bits(), ((2.0 * (*b as f32)) as f64).to_bits());
    }
}

#[test]
fn remote_unguided_sampling_matches_the_in_process_prior() {
    let len = 1024;
    let server = Loopback::tcp(unit_gaussian);
    let y = MultiChannelWaveform::mono(vec![0.0; len], 16000).unwrap();
    let cfg = SamplerConfig {
        mode: Mode::Unguided,
        n_steps: 200,
        seed: 11,
        stft: StftConfig::new(64, 16).unwrap(),
        ..SamplerConfig::default()
    };
    let remote = dereverb(&y, &mut client(&server), &cfg).unwrap();
    let local = dereverb(&y, &mut GaussianPrior::standard(len), &cfg).unwrap();
    assert_eq!(remote.initial_state, local.initial_state);
    let diff: f64 = remote.final_state.iter().zip(&local.final_state).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = local.final_state.iter().map(|v| v * v).sum();
    let rel = (diff / norm).sqrt();
    assert!(rel < 1e-5, "{rel}");
    // one request per step plus the final denoise
    assert_eq!(server.requests(), 201);
}
