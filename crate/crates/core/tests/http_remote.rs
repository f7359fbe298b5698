//! Wire-protocol tests for the HTTP feature provider and VLM client against
//! a minimal in-process HTTP/1.1 server.

use five_bench::five_acc::vlm::QuestionKind;
use five_bench::five_acc::{HttpVlm, VlmClient, VlmQuestion};
use five_bench::metrics::{FeatureProvider, FrameImage, HttpProvider};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

/// Serve `hits` POST requests, answering each body through `respond`.
fn spawn_server(
    hits: usize,
    respond: impl Fn(serde_json::Value) -> serde_json::Value + Send + 'static,
) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for _ in 0..hits {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let response = respond(request).to_string();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                response.len(),
                response
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    format!("http://{addr}")
}

fn fixture_frame() -> FrameImage {
    FrameImage::from_fn(3, 8, 8, 1.0, |c, y, x| ((c + y + x) % 7) as f64 / 7.0)
}

#[test]
fn provider_round_trips_vectors_and_matrices() {
    let url = spawn_server(3, |request| {
        let op = request["op"].as_str().unwrap().to_string();
        match op.as_str() {
            "image_embed" => serde_json::json!({
                "vector": [0.6, 0.8],
                "provider_id": "test", "version": "1"
            }),
            "text_embed" => {
                // payload carries the raw text
                assert_eq!(request["payload"].as_str().unwrap(), "a red square");
                serde_json::json!({
                    "vector": [1.0, 0.0],
                    "provider_id": "test", "version": "1"
                })
            }
            "patch_features" => {
                // payload must be decodable PNG
                use base64::Engine;
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(request["payload"].as_str().unwrap())
                    .unwrap();
                assert_eq!(&bytes[1..4], b"PNG");
                serde_json::json!({
                    "matrix": [[1.0, 0.0], [0.0, 1.0]],
                    "provider_id": "test", "version": "1"
                })
            }
            other => panic!("unexpected op {other}"),
        }
    });
    let provider = HttpProvider::new(url);
    let frame = fixture_frame();
    assert_eq!(provider.image_embed(&frame).unwrap(), vec![0.6, 0.8]);
    assert_eq!(provider.text_embed("a red square").unwrap(), vec![1.0, 0.0]);
    assert_eq!(
        provider.patch_features(&frame).unwrap(),
        vec![vec![1.0, 0.0], vec![0.0, 1.0]]
    );
}

#[test]
fn provider_missing_field_is_reported() {
    let url = spawn_server(1, |_| {
        serde_json::json!({"provider_id": "test", "version": "1"})
    });
    let provider = HttpProvider::new(url);
    let err = provider.image_embed(&fixture_frame()).unwrap_err();
    assert!(err.to_string().contains("missing vector"), "{err}");
}

#[test]
fn vlm_posts_frames_and_reads_answer() {
    let url = spawn_server(1, |request| {
        assert_eq!(request["kind"].as_str().unwrap(), "yn");
        assert_eq!(request["frames"].as_array().unwrap().len(), 2);
        assert!(request["question"].as_str().unwrap().contains("flamingo"));
        serde_json::json!({"answer": "Yes."})
    });
    let vlm = HttpVlm::new(url);
    let frames = vec![fixture_frame(), fixture_frame()];
    let question = VlmQuestion {
        key: "e:yn_target".into(),
        text: "Is there a flamingo in the video? Answer Yes or No.".into(),
        kind: QuestionKind::Yn,
        options: None,
    };
    assert_eq!(vlm.ask(&frames, &question).unwrap(), "Yes.");
}

#[test]
fn vlm_unreachable_endpoint_errors_after_retries() {
    // nothing listens on this port; bind-then-drop to find a free one
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut vlm = HttpVlm::new(format!("http://127.0.0.1:{port}"));
    vlm.retries = 1;
    vlm.backoff_ms = 1;
    let question = VlmQuestion {
        key: "k".into(),
        text: "q".into(),
        kind: QuestionKind::Yn,
        options: None,
    };
    let err = vlm.ask(&[fixture_frame()], &question).unwrap_err();
    assert!(err.to_string().contains("unreachable"), "{err}");
}
