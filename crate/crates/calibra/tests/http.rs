use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use calibra::core::backend::{Backend, BackendError, CompletionRequest};
use calibra::http::HttpBackend;

struct Captured {
    body: serde_json::Value,
    authorization: Option<String>,
    path: String,
}

/// Serves the given `(status, body)` responses in order, one per connection.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let captured = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&captured);
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            sink.lock().unwrap().push(Captured {
                body: serde_json::from_slice(&raw).unwrap(),
                authorization,
                path: request_line.split(' ').nth(1).unwrap().to_string(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, captured, handle)
}

const OK: &str = r#"{"choices":[{"text":" True","finish_reason":"stop","logprobs":{"tokens":[" True"],"token_logprobs":[-0.2],"top_logprobs":[{" True":-0.2," False":-1.8}]}}]}"#;

fn backend(url: &str) -> HttpBackend {
    HttpBackend::new(url, "test-model")
        .unwrap()
        .with_backoff(Duration::from_millis(1))
        .with_api_key(Some("sk-test".into()))
}

#[test]
fn maps_request_onto_wire_format() {
    let (url, captured, handle) = serve(vec![(200, OK.into())]);
    let mut request = CompletionRequest::new("Question: Q\nAnswer:");
    request.top_logprobs = 5;
    request.stop = Some(vec!["\n\n".into()]);
    let completion = backend(&url).complete(&request).unwrap();
    handle.join().unwrap();
    assert_eq!(completion.text, " True");
    assert_eq!(completion.token_logprobs, vec![-0.2]);
    assert_eq!(completion.top_logprobs[0][" False"], -1.8);
    let seen = captured.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    let body = &seen[0].body;
    assert_eq!(body["logprobs"], 5);
    assert_eq!(body["stop"], serde_json::json!(["\n\n"]));
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["max_tokens"], 120);
    assert_eq!(body["temperature"], 1.2);
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let (url, captured, handle) = serve(vec![(429, "{}".into()), (429, "{}".into()), (200, OK.into())]);
    let mut request = CompletionRequest::new("p");
    request.top_logprobs = 1;
    assert!(backend(&url).complete(&request).is_ok());
    handle.join().unwrap();
    assert_eq!(captured.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_three_attempts() {
    let (url, captured, handle) = serve(vec![(429, "slow down".into()); 3]);
    let err = backend(&url).complete(&CompletionRequest::new("p")).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, BackendError::RateLimited(_)));
    assert_eq!(captured.lock().unwrap().len(), 3);
}

#[test]
fn http_errors_surface_body_without_retry() {
    let (url, captured, handle) = serve(vec![(500, "boom".into())]);
    let err = backend(&url).complete(&CompletionRequest::new("p")).unwrap_err();
    handle.join().unwrap();
    assert_eq!(
        err,
        BackendError::Http {
            status: 500,
            body: "boom".into()
        }
    );
    assert_eq!(captured.lock().unwrap().len(), 1);
}

#[test]
fn missing_logprobs_is_a_capability_error() {
    let (url, _, handle) = serve(vec![(200, r#"{"choices":[{"text":" True"}]}"#.into())]);
    let mut request = CompletionRequest::new("p");
    request.top_logprobs = 5;
    let err = backend(&url).complete(&request).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, BackendError::Capability(_)));
}

#[test]
fn malformed_bodies_are_not_retried() {
    let (url, captured, handle) = serve(vec![(200, "not json".into())]);
    let err = backend(&url).complete(&CompletionRequest::new("p")).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, BackendError::Malformed(_)));
    assert_eq!(captured.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = backend(&format!("http://127.0.0.1:{port}"))
        .complete(&CompletionRequest::new("p"))
        .unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)));
}
