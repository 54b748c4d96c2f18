use std::fmt;
use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
#[cfg(unix)]
use std::os::unix::net::UnixStream;
use std::path::PathBuf;
use std::time::Duration;

use log::{debug, warn};

use super::protocol::{read_message, write_message, Message, ReadError};
use super::{check_sigma, PriorError, ScorePrior};

pub const ENDPOINT_ENV: &str = "USDDPS_SCORE_ENDPOINT";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
}

impl Endpoint {
    /// `host:port`, `unix:/path`, or any string containing `/` as a socket path.
    pub fn parse(s: &str) -> Result<Self, PriorError> {
        let s = s.trim();
        if let Some(p) = s.strip_prefix("unix:") {
            return Ok(Endpoint::Unix(PathBuf::from(p)));
        }
        if s.contains('/') {
            return Ok(Endpoint::Unix(PathBuf::from(s)));
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                Ok(Endpoint::Tcp(s.to_string()))
            }
            _ => Err(PriorError::Endpoint(s.to_string())),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(a) => f.write_str(a),
            Endpoint::Unix(p) => write!(f, "unix:{}", p.display()),
        }
    }
}

enum Conn {
    Tcp(TcpStream),
    #[cfg(unix)]
    Unix(UnixStream),
}

impl Read for Conn {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Conn::Tcp(s) => s.read(buf),
            #[cfg(unix)]
            Conn::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Conn {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Conn::Tcp(s) => s.write(buf),
            #[cfg(unix)]
            Conn::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Conn::Tcp(s) => s.flush(),
            #[cfg(unix)]
            Conn::Unix(s) => s.flush(),
        }
    }
}

enum Failure {
    Transport(io::Error),
    Fatal(PriorError),
}

/// Client for an external score server. Holds one connection, reconnecting
/// lazily; a transport failure is retried once on a fresh connection.
pub struct RemoteScore {
    endpoint: Endpoint,
    timeout: Duration,
    conn: Option<Conn>,
}

impl fmt::Debug for RemoteScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteScore")
            .field("endpoint", &self.endpoint)
            .field("timeout", &self.timeout)
            .field("connected", &self.conn.is_some())
            .finish()
    }
}

impl RemoteScore {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            endpoint,
            timeout: DEFAULT_TIMEOUT,
            conn: None,
        }
    }

    pub fn from_env() -> Result<Self, PriorError> {
        let raw = std::env::var(ENDPOINT_ENV)
            .map_err(|_| PriorError::Endpoint(format!("{ENDPOINT_ENV} is not set")))?;
        Ok(Self::new(Endpoint::parse(&raw)?))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn connect(&self) -> io::Result<Conn> {
        let t = Some(self.timeout);
        match &self.endpoint {
            Endpoint::Tcp(addr) => {
                let mut last = io::Error::new(io::ErrorKind::NotFound, "address resolved to nothing");
                for a in addr.to_socket_addrs()? {
                    match TcpStream::connect_timeout(&a, self.timeout) {
                        Ok(s) => {
                            s.set_read_timeout(t)?;
                            s.set_write_timeout(t)?;
                            s.set_nodelay(true)?;
                            return Ok(Conn::Tcp(s));
                        }
                        Err(e) => last = e,
                    }
                }
                Err(last)
            }
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                let s = UnixStream::connect(path)?;
                s.set_read_timeout(t)?;
                s.set_write_timeout(t)?;
                Ok(Conn::Unix(s))
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => Err(io::Error::new(
                io::ErrorKind::Unsupported,
                "unix sockets are not available on this platform",
            )),
        }
    }

    fn exchange(&mut self, request: &Message) -> Result<Message, Failure> {
        if self.conn.is_none() {
            self.conn = Some(self.connect().map_err(Failure::Transport)?);
        }
        let conn = self.conn.as_mut().unwrap();
        write_message(conn, request).map_err(Failure::Transport)?;
        read_message(conn).map_err(|e| match e {
            ReadError::Io(e) => Failure::Transport(e),
            ReadError::Protocol(e) => Failure::Fatal(e),
        })
    }

    fn classify(&self, e: io::Error) -> PriorError {
        let endpoint = self.endpoint.to_string();
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => PriorError::Timeout { endpoint },
            io::ErrorKind::ConnectionRefused => PriorError::ConnectionRefused { endpoint },
            _ => PriorError::Transport { endpoint, source: e },
        }
    }
}

impl ScorePrior for RemoteScore {
    fn score(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        check_sigma(sigma)?;
        let request = Message::Request {
            sigma,
            samples: x.iter().map(|v| *v as f32).collect(),
        };
        let mut attempt = 0;
        let reply = loop {
            match self.exchange(&request) {
                Ok(m) => break m,
                Err(Failure::Fatal(e)) => {
                    // the stream position is unknown after a framing error
                    self.conn = None;
                    return Err(e);
                }
                Err(Failure::Transport(e)) => {
                    self.conn = None;
                    if attempt == 0 {
                        warn!("score request to {} failed ({e}), retrying", self.endpoint);
                        attempt += 1;
                        continue;
                    }
                    return Err(self.classify(e));
                }
            }
        };
        match reply {
            Message::Response { score } => {
                if score.len() != x.len() {
                    return Err(PriorError::LengthMismatch {
                        expected: x.len(),
                        got: score.len(),
                    });
                }
                debug!("score at sigma {sigma:.3e} from {}", self.endpoint);
                Ok(score.into_iter().map(f64::from).collect())
            }
            Message::Error(text) => Err(PriorError::Server(text)),
            Message::Request { .. } => {
                self.conn = None;
                Err(PriorError::Protocol {
                    offset: 5,
                    msg: "server sent a request frame".into(),
                })
            }
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
