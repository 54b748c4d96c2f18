//! In-process USDP server for exercising the remote prior client.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use usddps::prior::protocol::{encode, read_message, Message, ReadError};
use usddps::prior::Endpoint;

/// What the server does with one request.
pub enum Reply {
    Score(Vec<f32>),
    Error(String),
    /// Raw bytes written in place of a frame.
    Raw(Vec<u8>),
    /// Close the connection without answering.
    Hangup,
    /// Sleep, then close.
    Stall(Duration),
}

pub type Handler = dyn Fn(usize, f64, &[f32]) -> Reply + Send + Sync;

pub struct Loopback {
    pub endpoint: Endpoint,
    requests: Arc<AtomicUsize>,
    connections: Arc<AtomicUsize>,
    _dir: Option<tempfile::TempDir>,
}

impl Loopback {
    /// Requests seen so far, including unanswered ones.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::SeqCst)
    }

    pub fn tcp(handler: impl Fn(usize, f64, &[f32]) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (requests, connections) = counters();
        let handler: Arc<Handler> = Arc::new(handler);
        {
            let (requests, connections) = (requests.clone(), connections.clone());
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    connections.fetch_add(1, Ordering::SeqCst);
                    serve(stream, &*handler, &requests);
                }
            });
        }
        Self {
            endpoint: Endpoint::Tcp(addr.to_string()),
            requests,
            connections,
            _dir: None,
        }
    }

    #[cfg(unix)]
    pub fn unix(handler: impl Fn(usize, f64, &[f32]) -> Reply + Send + Sync + 'static) -> Self {
        use std::os::unix::net::UnixListener;
        let dir = tempfile::tempdir().unwrap();
        let path: PathBuf = dir.path().join("score.sock");
        let listener = UnixListener::bind(&path).unwrap();
        let (requests, connections) = counters();
        let handler: Arc<Handler> = Arc::new(handler);
        {
            let (requests, connections) = (requests.clone(), connections.clone());
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    connections.fetch_add(1, Ordering::SeqCst);
                    serve(stream, &*handler, &requests);
                }
            });
        }
        Self {
            endpoint: Endpoint::Unix(path),
            requests,
            connections,
            _dir: Some(dir),
        }
    }
}

fn counters() -> (Arc<AtomicUsize>, Arc<AtomicUsize>) {
    (Arc::new(AtomicUsize::new(0)), Arc::new(AtomicUsize::new(0)))
}

fn serve<S: Read + Write>(mut stream: S, handler: &Handler, requests: &AtomicUsize) {
    loop {
        let (sigma, samples) = match read_message(&mut stream) {
            Ok(Message::Request { sigma, samples }) => (sigma, samples),
            Ok(_) => {
                let _ = stream.write_all(&encode(&Message::Error("expected a request".into())));
                continue;
            }
            Err(ReadError::Protocol(e)) => {
                let _ = stream.write_all(&encode(&Message::Error(e.to_string())));
                return;
            }
            Err(ReadError::Io(_)) => return,
        };
        let index = requests.fetch_add(1, Ordering::SeqCst);
        let bytes = match handler(index, sigma, &samples) {
            Reply::Score(score) => encode(&Message::Response { score }),
            Reply::Error(text) => encode(&Message::Error(text)),
            Reply::Raw(bytes) => bytes,
            Reply::Hangup => return,
            Reply::Stall(d) => {
                thread::sleep(d);
                return;
            }
        };
        if stream.write_all(&bytes).and_then(|_| stream.flush()).is_err() {
            return;
        }
    }
}

/// Score of the unit Gaussian prior, computed in `f32` like a remote model.
pub fn unit_gaussian(_: usize, sigma: f64, x: &[f32]) -> Reply {
    let s = (1.0 / (1.0 + sigma * sigma)) as f32;
    Reply::Score(x.iter().map(|v| -v * s).collect())
}
