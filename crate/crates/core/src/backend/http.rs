use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    self, EmbedRequest, EmbedResponse, ErrorResponse, InfoResponse, MaskRequest, MaskResponse,
    TokenizeRequest, TokenizeResponse,
};
use super::{
    check_text, Backend, MaskedQuery, ModelInfo, Pooling, SentenceEmbedding, TokenSequence,
    VocabDistribution,
};
use crate::error::{Error, Result};

/// Counting semaphore bounding in-flight requests.
struct Gate {
    available: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cond.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cond.notify_one();
    }
}

/// Client for a model server speaking the `/v1/*` JSON protocol.
pub struct HttpBackend {
    base: String,
    pooling: Pooling,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base", &self.base)
            .field("pooling", &self.pooling)
            .finish()
    }
}

impl HttpBackend {
    pub fn new(endpoint: &str, pooling: Pooling, max_in_flight: usize) -> Result<Self> {
        if max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be positive"));
        }
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Unreachable(e.to_string()))?;
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_string(),
            pooling,
            client,
            gate: Gate::new(max_in_flight),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn finish<R: DeserializeOwned>(&self, resp: reqwest::blocking::Response) -> Result<R> {
        let status = resp.status();
        let body = resp
            .bytes()
            .map_err(|e| Error::Unreachable(e.to_string()))?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorResponse>(&body)
                .map(|e| e.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
            return Err(Error::Server {
                status: status.as_u16(),
                message,
            });
        }
        serde_json::from_slice(&body).map_err(|e| Error::Protocol(e.to_string()))
    }

    fn post<Q: Serialize, R: DeserializeOwned>(&self, path: &str, body: &Q) -> Result<R> {
        let _permit = self.gate.acquire();
        let resp = self
            .client
            .post(self.url(path))
            .json(body)
            .send()
            .map_err(|e| Error::Unreachable(e.to_string()))?;
        self.finish(resp)
    }

    fn get<R: DeserializeOwned>(&self, path: &str) -> Result<R> {
        let _permit = self.gate.acquire();
        let resp = self
            .client
            .get(self.url(path))
            .send()
            .map_err(|e| Error::Unreachable(e.to_string()))?;
        self.finish(resp)
    }
}

impl Backend for HttpBackend {
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        check_text(text)?;
        let resp: TokenizeResponse = self.post(wire::TOKENIZE, &TokenizeRequest { text: text.into() })?;
        TokenSequence::new(resp.tokens, text)
    }

    fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        Ok(self.embed_many(&[text.to_string()])?.remove(0))
    }

    fn embed_many(&self, texts: &[String]) -> Result<Vec<SentenceEmbedding>> {
        for t in texts {
            check_text(t)?;
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp: EmbedResponse = self.post(
            wire::EMBED,
            &EmbedRequest {
                texts: texts.to_vec(),
                pooling: self.pooling,
            },
        )?;
        resp.into_embeddings(texts.len())
    }

    fn mask_logprobs(&self, query: &MaskedQuery) -> Result<VocabDistribution> {
        query.check_mask()?;
        let req = MaskRequest {
            tokens: query.tokens.tokens().to_vec(),
            mask_index: query.mask_index,
            target: query.target.clone(),
            topk: query.topk,
        };
        let resp: MaskResponse = match self.post(wire::MASK_LOGPROBS, &req) {
            // The server reports an unknown target as 422 mentioning the vocabulary.
            Err(Error::Server { status: 422, message })
                if query.target.is_some() && message.contains("vocab") =>
            {
                return Err(Error::TargetNotInVocab(query.target.clone().unwrap_or_default()))
            }
            other => other?,
        };
        let dist = resp.into_distribution()?;
        if let Some(k) = query.topk {
            if dist.entries().len() > k {
                return Ok(dist.truncated(k));
            }
        }
        Ok(dist)
    }

    fn info(&self) -> Result<ModelInfo> {
        let info: InfoResponse = self.get(wire::INFO)?;
        Ok(info)
    }

    fn pooling(&self) -> Pooling {
        self.pooling
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Arc::new(Gate::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (gate, live, peak) = (gate.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn unreachable_server_is_reported() {
        // Port 9 (discard) on localhost is closed in the sandbox.
        let b = HttpBackend::new("http://127.0.0.1:9", Pooling::Mean, 1).unwrap();
        assert!(matches!(b.tokenize("hu"), Err(Error::Unreachable(_))));
    }
}
