//! End-to-end checks of the belief-provider wire protocol over TCP and a
//! child process's standard streams.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::time::Duration;

use loco_core::belief::provider::{ProviderClient, ProviderEndpoint, ProviderRequest};
use loco_core::belief::{BeliefError, QueryTemplate};
use loco_core::kb::Fact;

/// Serves one connection; `answer` maps each request to its likelihood
/// pair, and `batch_window` responses are emitted in reverse order to
/// exercise id correlation.
fn spawn_tcp_server(
    answer: impl Fn(&ProviderRequest) -> [f64; 2] + Send + 'static,
    batch_window: usize,
) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut window: Vec<String> = Vec::new();
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                break;
            }
            let request: ProviderRequest = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(_) => break,
            };
            let likelihoods = answer(&request);
            window.push(
                serde_json::json!({"id": request.id, "likelihoods": likelihoods}).to_string(),
            );
            if window.len() >= batch_window {
                for response in window.drain(..).rev() {
                    writeln!(writer, "{response}").unwrap();
                }
                writer.flush().unwrap();
            }
        }
    });
    addr
}

#[test]
fn tcp_provider_round_trip_normalizes_likelihoods() {
    let addr = spawn_tcp_server(|_| [0.09, 0.01], 1);
    let endpoint = ProviderEndpoint::Tcp(addr);
    let mut client = ProviderClient::connect(&endpoint, QueryTemplate::default_yes_no())
        .unwrap()
        .with_timeout(Duration::from_secs(5));
    let fact = Fact::new("daffodil", "IsA,flower", None);
    let p = client.belief(&fact).unwrap();
    assert!((p - 0.9).abs() < 1e-12);
}

#[test]
fn batched_beliefs_survive_out_of_order_responses() {
    // answer by query content so reordering is detectable
    let addr = spawn_tcp_server(
        |request| {
            if request.query.contains("daffodil") {
                [0.8, 0.2]
            } else {
                [0.1, 0.9]
            }
        },
        4,
    );
    let endpoint = ProviderEndpoint::Tcp(addr);
    let mut client = ProviderClient::connect(&endpoint, QueryTemplate::default_yes_no())
        .unwrap()
        .with_timeout(Duration::from_secs(5))
        .with_max_in_flight(4);
    let facts = vec![
        Fact::new("daffodil", "IsA,flower", None),
        Fact::new("bison", "IsA,flower", None),
        Fact::new("daffodil", "IsA,plant", None),
        Fact::new("bison", "IsA,mammal", None),
    ];
    let beliefs = client.beliefs(&facts).unwrap();
    assert!((beliefs[0] - 0.8).abs() < 1e-12);
    assert!((beliefs[1] - 0.1).abs() < 1e-12);
    assert!((beliefs[2] - 0.8).abs() < 1e-12);
    assert!((beliefs[3] - 0.1).abs() < 1e-12);
}

#[test]
fn silent_provider_times_out() {
    // batch_window of 99 means the server never answers
    let addr = spawn_tcp_server(|_| [0.5, 0.5], 99);
    let endpoint = ProviderEndpoint::Tcp(addr);
    let mut client = ProviderClient::connect(&endpoint, QueryTemplate::default_yes_no())
        .unwrap()
        .with_timeout(Duration::from_millis(200));
    let fact = Fact::new("daffodil", "IsA,flower", None);
    match client.belief(&fact) {
        Err(BeliefError::Timeout { fact }) => assert!(fact.contains("daffodil")),
        other => panic!("expected timeout, got {other:?}"),
    }
}

#[test]
fn zero_likelihoods_are_rejected() {
    let addr = spawn_tcp_server(|_| [0.0, 0.0], 1);
    let endpoint = ProviderEndpoint::Tcp(addr);
    let mut client = ProviderClient::connect(&endpoint, QueryTemplate::default_yes_no())
        .unwrap()
        .with_timeout(Duration::from_secs(5));
    let fact = Fact::new("daffodil", "IsA,flower", None);
    assert!(matches!(
        client.belief(&fact),
        Err(BeliefError::NonPositiveLikelihoods { .. })
    ));
}

#[test]
fn stdio_provider_speaks_the_protocol() {
    // A minimal provider in Python answering on stdin/stdout.
    let script = concat!(
        "import sys, json\n",
        "for line in sys.stdin:\n",
        "    req = json.loads(line)\n",
        "    yes = 0.9 if 'daffodil' in req['query'] else 0.25\n",
        "    print(json.dumps({'id': req['id'], 'likelihoods': [yes, 1.0 - yes]}), flush=True)\n",
    );
    let path = std::env::temp_dir().join(format!("provider_{}.py", std::process::id()));
    std::fs::write(&path, script).unwrap();
    let endpoint = ProviderEndpoint::Command(vec![
        "python3".to_string(),
        path.to_string_lossy().to_string(),
    ]);
    let mut client = ProviderClient::connect(&endpoint, QueryTemplate::default_yes_no())
        .unwrap()
        .with_timeout(Duration::from_secs(10));
    let daffodil = Fact::new("daffodil", "IsA,flower", None);
    let bison = Fact::new("bison", "IsA,mammal", None);
    let beliefs = client.beliefs(&[daffodil, bison]).unwrap();
    assert!((beliefs[0] - 0.9).abs() < 1e-12);
    assert!((beliefs[1] - 0.25).abs() < 1e-12);
    std::fs::remove_file(&path).ok();
}
