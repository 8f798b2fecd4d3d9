#![cfg(feature = "remote")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use neuroloop::protocol::{GenerateError, Generator, RemoteConfig, RemoteGenerator};

/// Read one HTTP request and return its body.
fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    write!(
        stream,
        "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
}

/// Serve the given `(status, body)` replies in order, one per connection.
/// Returns the address and a handle yielding the request bodies seen.
fn server(replies: Vec<(&'static str, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (mut s, _) = listener.accept().unwrap();
            seen.push(read_request(&mut s));
            respond(&mut s, status, &body);
        }
        seen
    });
    (addr, handle)
}

fn config(base_url: String) -> RemoteConfig {
    RemoteConfig {
        base_url,
        attempts: 3,
        backoff_ms: 1,
        timeout_ms: 2000,
        ..RemoteConfig::default()
    }
}

#[test]
fn passes_prompt_and_returns_text() {
    let (url, h) = server(vec![("200 OK", r#"{"text": "{\"a\": 1}"}"#.into())]);
    let mut g = RemoteGenerator::new(config(url));
    assert_eq!(g.generate("hello").unwrap(), r#"{"a": 1}"#);
    let seen = h.join().unwrap();
    let req: serde_json::Value = serde_json::from_str(&seen[0]).unwrap();
    assert_eq!(req["prompt"], "hello");
    assert_eq!(req["model"], "default");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, h) = server(vec![
        ("500 Internal Server Error", "{}".into()),
        ("200 OK", r#"{"text": ""}"#.into()),
        ("200 OK", r#"{"text": "done"}"#.into()),
    ]);
    let mut g = RemoteGenerator::new(config(url));
    assert_eq!(g.generate("p").unwrap(), "done");
    assert_eq!(h.join().unwrap().len(), 3);
}

#[test]
fn gives_up_after_bounded_attempts() {
    let (url, h) = server(vec![
        ("503 Service Unavailable", "{}".into()),
        ("200 OK", "not json".into()),
    ]);
    let mut cfg = config(url);
    cfg.attempts = 2;
    let err = RemoteGenerator::new(cfg).generate("p").unwrap_err();
    assert!(matches!(err, GenerateError::Exhausted { attempts: 2, .. }), "{err}");
    h.join().unwrap();
}

#[test]
fn slow_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let h = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        read_request(&mut s);
        thread::sleep(Duration::from_millis(600));
    });
    let mut cfg = config(url);
    cfg.attempts = 1;
    cfg.timeout_ms = 150;
    let err = RemoteGenerator::new(cfg).generate("p").unwrap_err();
    let GenerateError::Exhausted { last, .. } = err else {
        panic!("expected exhaustion")
    };
    assert_eq!(*last, GenerateError::Timeout);
    h.join().unwrap();
}
