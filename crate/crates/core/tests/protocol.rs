//! HTTP client conformance against a stand-in server that answers from fixture
//! directories, so both backends must agree request for request.

mod common;

use std::path::{Path, PathBuf};
use std::thread;

use serde_json::{json, Value};
use tiny_http::{Header, Method, Response, Server};

use mlm_bias::backend::{
    request_hash, wire, Backend, FixtureBackend, HttpBackend, MaskedQuery, Pooling, TokenSequence,
};
use mlm_bias::crows::crows_metric;
use mlm_bias::jsd::search_biased_prompts;
use mlm_bias::Error;

use common::*;

fn lookup(dir: &Path, endpoint: &str, body: Value) -> (u16, Value) {
    let envelope = json!({ "endpoint": endpoint, "body": body });
    let path = dir.join(format!("{}.json", request_hash(&envelope)));
    let Ok(raw) = std::fs::read_to_string(path) else {
        return (404, json!({ "error": "no recorded response" }));
    };
    let record: Value = serde_json::from_str(&raw).unwrap();
    let outcome = &record["outcome"];
    match outcome["status"].as_str().unwrap() {
        "ok" => (200, outcome["response"].clone()),
        "target_not_in_vocab" => (422, json!({ "error": format!("target {} not in vocabulary", outcome["token"]) })),
        "not_a_mask" => (422, json!({ "error": format!("position {} is not [MASK]", outcome["index"]) })),
        other => panic!("unknown outcome {other}"),
    }
}

fn answer(dir: &Path, method: &Method, url: &str, body: &str) -> (u16, Value) {
    match (method, url) {
        (Method::Get, wire::INFO) => {
            let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
            (200, json!({ "model_id": m["model_id"], "dim": m["dim"], "max_len": m["max_len"] }))
        }
        (Method::Post, wire::EMBED) => {
            // Fixtures hold one text per request; a batch is answered text by text.
            let req: Value = serde_json::from_str(body).unwrap();
            let mut vectors = Vec::new();
            for text in req["texts"].as_array().unwrap() {
                let (status, resp) =
                    lookup(dir, wire::EMBED, json!({ "texts": [text], "pooling": req["pooling"] }));
                if status != 200 {
                    return (status, resp);
                }
                vectors.push(resp["vectors"][0].clone());
            }
            let dim = vectors.first().and_then(|v| v.as_array()).map_or(0, |v| v.len());
            (200, json!({ "vectors": vectors, "dim": dim }))
        }
        (Method::Post, "/boom") => (500, json!({ "error": "internal" })),
        (Method::Post, endpoint) => match serde_json::from_str(body) {
            Ok(v) => lookup(dir, endpoint, v),
            Err(e) => (400, json!({ "error": e.to_string() })),
        },
        _ => (405, json!({ "error": "method not allowed" })),
    }
}

/// Serves `dir` on an ephemeral port; the thread lives for the test process.
fn serve(dir: PathBuf) -> String {
    let server = Server::http("127.0.0.1:0").unwrap();
    let addr = server.server_addr().to_ip().unwrap();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let url = req.url().to_string();
            let (status, value) = if url == "/v1/mask_logprobs" && body.contains("\"boom\"") {
                answer(&dir, &Method::Post, "/boom", &body)
            } else {
                answer(&dir, req.method(), &url, &body)
            };
            let header = Header::from_bytes("Content-Type", "application/json").unwrap();
            let resp = Response::from_string(value.to_string()).with_status_code(status).with_header(header);
            let _ = req.respond(resp);
        }
    });
    format!("http://{addr}")
}

fn pair(name: &str) -> (HttpBackend, FixtureBackend) {
    let dir = fixtures_dir().join(name);
    let http = HttpBackend::new(&serve(dir.clone()), Pooling::Mean, 4).unwrap();
    (http, FixtureBackend::open(dir, Pooling::Mean).unwrap())
}

#[test]
fn info_tokenize_embed_and_mask_agree() {
    let (http, fx) = pair("toy_protocol");
    assert_eq!(http.info().unwrap(), fx.info().unwrap());
    for text in PROTOCOL_TEXTS {
        assert_eq!(http.tokenize(text).unwrap(), fx.tokenize(text).unwrap());
        assert_eq!(http.embed(text).unwrap(), fx.embed(text).unwrap());
        let seq = fx.tokenize(text).unwrap();
        let q = MaskedQuery::new(seq.masked_at(0).unwrap(), 0).unwrap().with_topk(5).unwrap();
        let d = http.mask_logprobs(&q).unwrap();
        assert_eq!(d, fx.mask_logprobs(&q).unwrap());
        assert_eq!(d.entries().len(), 5);
    }
}

#[test]
fn batched_embeddings_keep_input_order() {
    let (http, fx) = pair("toy_protocol");
    let texts: Vec<String> = PROTOCOL_TEXTS.iter().rev().map(|s| s.to_string()).collect();
    let batch = http.embed_many(&texts).unwrap();
    for (text, e) in texts.iter().zip(&batch) {
        assert_eq!(e, &fx.embed(text).unwrap());
    }
}

#[test]
fn unknown_target_maps_to_typed_error() {
    let (http, fx) = pair("toy_protocol");
    let seq = fx.tokenize(PROTOCOL_TEXTS[1]).unwrap();
    let q = MaskedQuery::new(seq.masked_at(1).unwrap(), 1).unwrap().with_target("qqqq");
    assert!(matches!(http.mask_logprobs(&q), Err(Error::TargetNotInVocab(t)) if t == "qqqq"));
}

#[test]
fn server_errors_and_misses_surface() {
    let (http, _) = pair("toy_protocol");
    let seq = TokenSequence::new(vec!["boom".into(), "[MASK]".into()], "boom [MASK]").unwrap();
    match http.mask_logprobs(&MaskedQuery::new(seq, 1).unwrap()) {
        Err(Error::Server { status: 500, message }) => assert_eq!(message, "internal"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(http.tokenize("never recorded"), Err(Error::Server { status: 404, .. })));
}

#[test]
fn unreachable_server() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let http = HttpBackend::new(&format!("http://127.0.0.1:{port}"), Pooling::Mean, 1).unwrap();
    assert!(matches!(http.info(), Err(Error::Unreachable(_))));
}

#[test]
fn crows_suite_over_http() {
    let (http, _) = pair("crows4");
    assert_eq!(crows_metric(&crows4_pairs(), &http).unwrap().metric_score, 75.0);
}

#[test]
fn beam_search_over_http() {
    let (http, fx) = pair("jsd_toy_probe");
    assert_eq!(
        search_biased_prompts(&toy_probe_spec(), &http).unwrap(),
        search_biased_prompts(&toy_probe_spec(), &fx).unwrap()
    );
}
