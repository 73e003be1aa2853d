//! Wire protocol for an external belief provider.
//!
//! Requests and responses are newline-delimited JSON over a local TCP
//! socket or a child process's standard streams:
//!
//! ```text
//! -> {"id": 1, "query": "...", "options": ["Yes.", "No."]}
//! <- {"id": 1, "likelihoods": [0.09, 0.01]}
//! ```
//!
//! Responses may arrive out of order; the `id` field correlates them. The
//! client keeps up to `max_in_flight` requests outstanding. Likelihoods are
//! raw non-negative scores for the two options; the belief is the
//! normalized first option, `l_yes / (l_yes + l_no)`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{render_query, BeliefError, PhrasingTable, QueryTemplate};
use crate::kb::Fact;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub id: u64,
    pub query: String,
    pub options: [String; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub id: u64,
    pub likelihoods: [f64; 2],
}

/// Where the provider lives.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderEndpoint {
    /// `host:port` of a listening provider.
    Tcp(String),
    /// Command line of a provider speaking the protocol on stdin/stdout.
    Command(Vec<String>),
}

impl ProviderEndpoint {
    /// Parses `tcp://host:port` or `cmd:program arg…`.
    pub fn parse(text: &str) -> Result<Self, BeliefError> {
        if let Some(addr) = text.strip_prefix("tcp://") {
            return Ok(ProviderEndpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = text.strip_prefix("cmd:") {
            let parts: Vec<String> = cmd.split_whitespace().map(|s| s.to_string()).collect();
            if parts.is_empty() {
                return Err(BeliefError::Protocol("empty provider command".into()));
            }
            return Ok(ProviderEndpoint::Command(parts));
        }
        Err(BeliefError::Protocol(format!(
            "unrecognized endpoint '{text}'; expected tcp://host:port or cmd:program…"
        )))
    }
}

trait LineTransport: Send {
    fn send_line(&mut self, line: &str) -> Result<(), String>;
    /// Blocks up to `timeout` for one line. `Ok(None)` means timeout.
    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, String>;
}

struct TcpTransport {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl TcpTransport {
    fn connect(addr: &str) -> Result<Self, String> {
        let stream = TcpStream::connect(addr).map_err(|e| e.to_string())?;
        stream.set_nodelay(true).ok();
        let reader = BufReader::new(stream.try_clone().map_err(|e| e.to_string())?);
        Ok(Self {
            writer: stream,
            reader,
        })
    }
}

impl LineTransport for TcpTransport {
    fn send_line(&mut self, line: &str) -> Result<(), String> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush())
            .map_err(|e| e.to_string())
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, String> {
        self.reader
            .get_ref()
            .set_read_timeout(Some(timeout))
            .map_err(|e| e.to_string())?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err("provider closed the connection".into()),
            Ok(_) => Ok(Some(line)),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                Ok(None)
            }
            Err(e) => Err(e.to_string()),
        }
    }
}

struct CommandTransport {
    child: Child,
    stdin: std::process::ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
}

impl CommandTransport {
    fn spawn(argv: &[String]) -> Result<Self, String> {
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| format!("failed to spawn {}: {e}", argv[0]))?;
        let stdin = child.stdin.take().ok_or("child stdin unavailable")?;
        let stdout = child.stdout.take().ok_or("child stdout unavailable")?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Drop for CommandTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl LineTransport for CommandTransport {
    fn send_line(&mut self, line: &str) -> Result<(), String> {
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.write_all(b"\n"))
            .and_then(|_| self.stdin.flush())
            .map_err(|e| e.to_string())
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, String> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(Some(line)),
            Ok(Err(e)) => Err(e.to_string()),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err("provider exited".into()),
        }
    }
}

/// Client side of the belief-provider protocol.
pub struct ProviderClient {
    transport: Box<dyn LineTransport>,
    template: QueryTemplate,
    phrasing: PhrasingTable,
    timeout: Duration,
    max_in_flight: usize,
    next_id: u64,
}

impl ProviderClient {
    pub fn connect(endpoint: &ProviderEndpoint, template: QueryTemplate) -> Result<Self, BeliefError> {
        let transport: Box<dyn LineTransport> = match endpoint {
            ProviderEndpoint::Tcp(addr) => Box::new(TcpTransport::connect(addr).map_err(|m| {
                BeliefError::Transport {
                    fact: "(connect)".into(),
                    message: m,
                }
            })?),
            ProviderEndpoint::Command(argv) => {
                Box::new(CommandTransport::spawn(argv).map_err(|m| BeliefError::Transport {
                    fact: "(connect)".into(),
                    message: m,
                })?)
            }
        };
        Ok(Self {
            transport,
            template,
            phrasing: PhrasingTable::default(),
            timeout: DEFAULT_TIMEOUT,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            next_id: 1,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_in_flight(mut self, max_in_flight: usize) -> Self {
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn with_phrasing(mut self, phrasing: PhrasingTable) -> Self {
        self.phrasing = phrasing;
        self
    }

    fn fact_id(fact: &Fact) -> String {
        format!("({}, {})", fact.subject, fact.property)
    }

    fn normalize(likelihoods: [f64; 2], fact: &Fact) -> Result<f64, BeliefError> {
        let [yes, no] = likelihoods;
        if !(yes.is_finite() && no.is_finite()) || yes < 0.0 || no < 0.0 || yes + no <= 0.0 {
            return Err(BeliefError::NonPositiveLikelihoods {
                fact: Self::fact_id(fact),
            });
        }
        Ok(yes / (yes + no))
    }

    fn send_request(&mut self, fact: &Fact) -> Result<u64, BeliefError> {
        let id = self.next_id;
        self.next_id += 1;
        let request = ProviderRequest {
            id,
            query: render_query(fact, &self.template, &self.phrasing),
            options: [
                self.template.yes_token().to_string(),
                self.template.no_token().to_string(),
            ],
        };
        let line = serde_json::to_string(&request).expect("request serialization cannot fail");
        self.transport
            .send_line(&line)
            .map_err(|message| BeliefError::Transport {
                fact: Self::fact_id(fact),
                message,
            })?;
        Ok(id)
    }

    fn recv_response(&mut self, fact: &Fact) -> Result<ProviderResponse, BeliefError> {
        let line = self
            .transport
            .recv_line(self.timeout)
            .map_err(|message| BeliefError::Transport {
                fact: Self::fact_id(fact),
                message,
            })?
            .ok_or_else(|| BeliefError::Timeout {
                fact: Self::fact_id(fact),
            })?;
        serde_json::from_str(&line)
            .map_err(|e| BeliefError::Protocol(format!("bad response line: {e}")))
    }

    /// Asks the provider for one fact's belief.
    pub fn belief(&mut self, fact: &Fact) -> Result<f64, BeliefError> {
        let id = self.send_request(fact)?;
        loop {
            let response = self.recv_response(fact)?;
            if response.id == id {
                return Self::normalize(response.likelihoods, fact);
            }
            // A stale id from an abandoned batch; skip it.
        }
    }

    /// Beliefs for a batch, keeping up to `max_in_flight` requests
    /// outstanding. Results come back in input order.
    pub fn beliefs(&mut self, facts: &[Fact]) -> Result<Vec<f64>, BeliefError> {
        let mut results = vec![0.0; facts.len()];
        let mut pending: BTreeMap<u64, usize> = BTreeMap::new();
        let mut sent = 0;
        let mut done = 0;
        while done < facts.len() {
            while sent < facts.len() && pending.len() < self.max_in_flight {
                let id = self.send_request(&facts[sent])?;
                pending.insert(id, sent);
                sent += 1;
            }
            let probe = &facts[*pending.values().next().expect("pending nonempty")];
            let response = self.recv_response(probe)?;
            let Some(slot) = pending.remove(&response.id) else {
                return Err(BeliefError::Protocol(format!(
                    "response for unknown id {}",
                    response.id
                )));
            };
            results[slot] = Self::normalize(response.likelihoods, &facts[slot])?;
            done += 1;
        }
        Ok(results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            ProviderEndpoint::parse("tcp://127.0.0.1:9000").unwrap(),
            ProviderEndpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            ProviderEndpoint::parse("cmd:python3 provider.py").unwrap(),
            ProviderEndpoint::Command(vec!["python3".into(), "provider.py".into()])
        );
        assert!(ProviderEndpoint::parse("ftp://x").is_err());
        assert!(ProviderEndpoint::parse("cmd:").is_err());
    }

    #[test]
    fn normalization_and_degenerate_likelihoods() {
        let fact = Fact::new("daffodil", "IsA,flower", None);
        let p = ProviderClient::normalize([0.09, 0.01], &fact).unwrap();
        assert!((p - 0.9).abs() < 1e-12);
        assert!(matches!(
            ProviderClient::normalize([0.0, 0.0], &fact),
            Err(BeliefError::NonPositiveLikelihoods { .. })
        ));
        assert!(matches!(
            ProviderClient::normalize([-0.1, 0.5], &fact),
            Err(BeliefError::NonPositiveLikelihoods { .. })
        ));
    }

    #[test]
    fn unreachable_tcp_provider_is_a_transport_error() {
        // Port 1 on localhost is essentially never listening.
        let endpoint = ProviderEndpoint::Tcp("127.0.0.1:1".into());
        let err = ProviderClient::connect(&endpoint, QueryTemplate::default_yes_no());
        assert!(matches!(err, Err(BeliefError::Transport { .. })));
    }
}
