//! Client for the NLP sidecar protocol, plus an in-process stub server.
//!
//! Transport is HTTP. `POST /v1/nlp` takes one JSON request and returns one
//! JSON response; `POST /v1/nlp/batch` takes newline-delimited requests and
//! returns newline-delimited responses in the same order.
//!
//! ```text
//! {"v":1,"op":"extract","text":"..."} -> {"v":1,"entities":[{"surface":"BERT","start":0,"end":4}]}
//! {"v":1,"op":"embed","text":"..."}   -> {"v":1,"vector":[0.1, ...]}
//! {"v":1,"op":"health"}               -> {"v":1,"status":"ok","dim":768,"models":{...}}
//! ```
//!
//! Entity offsets are character positions in `text`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{BaselineExtractor, DocumentContext, EntityExtractor, RawMention};
use crate::ranking::{EmbeddingProvider, HashedEmbedder};

pub const PROTOCOL_VERSION: u32 = 1;
pub const PROVIDER_ENV: &str = "CRPSE_PROVIDER_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Extract,
    Embed,
    Health,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub v: u32,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl ProviderRequest {
    pub fn new(op: Op, text: Option<&str>) -> Self {
        ProviderRequest {
            v: PROTOCOL_VERSION,
            op,
            text: text.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<RawMention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Health {
    pub status: String,
    pub dim: usize,
    pub models: BTreeMap<String, String>,
}

fn provider_err(e: impl std::fmt::Display) -> Error {
    Error::Provider(e.to_string())
}

/// Extraction and embedding served by a remote sidecar.
pub struct RemoteProvider {
    base: String,
    agent: ureq::Agent,
    dim: usize,
    id: String,
}

impl RemoteProvider {
    /// Connects and reads the advertised dimension from `health`.
    pub fn connect(base_url: &str) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        let mut p = RemoteProvider {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
            dim: 0,
            id: String::new(),
        };
        let h = p.health()?;
        if h.status != "ok" {
            return Err(Error::Provider(format!("provider status {:?}", h.status)));
        }
        p.dim = h.dim;
        let models: Vec<String> = h.models.iter().map(|(k, v)| format!("{k}={v}")).collect();
        p.id = format!("remote:{}[{}]", p.base, models.join(","));
        Ok(p)
    }

    fn call(&self, req: &ProviderRequest) -> Result<ProviderResponse> {
        let resp: ProviderResponse = self
            .agent
            .post(&format!("{}/v1/nlp", self.base))
            .send_json(req)
            .map_err(provider_err)?
            .body_mut()
            .read_json()
            .map_err(provider_err)?;
        check_response(resp)
    }

    pub fn health(&self) -> Result<Health> {
        let r = self.call(&ProviderRequest::new(Op::Health, None))?;
        Ok(Health {
            status: r.status.unwrap_or_default(),
            dim: r
                .dim
                .ok_or_else(|| Error::Provider("health response without dim".into()))?,
            models: r.models.unwrap_or_default(),
        })
    }

    /// Sends many requests in one round trip.
    pub fn batch(&self, reqs: &[ProviderRequest]) -> Result<Vec<ProviderResponse>> {
        let body: String = reqs
            .iter()
            .map(|r| serde_json::to_string(r).expect("request serialization cannot fail") + "\n")
            .collect();
        let text = self
            .agent
            .post(&format!("{}/v1/nlp/batch", self.base))
            .header("content-type", "application/x-ndjson")
            .send(body)
            .map_err(provider_err)?
            .body_mut()
            .read_to_string()
            .map_err(provider_err)?;
        let out: Vec<ProviderResponse> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(provider_err).and_then(check_response))
            .collect::<Result<_>>()?;
        if out.len() != reqs.len() {
            return Err(Error::Provider(format!(
                "batch returned {} responses for {} requests",
                out.len(),
                reqs.len()
            )));
        }
        Ok(out)
    }

    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let reqs: Vec<_> = texts.iter().map(|t| ProviderRequest::new(Op::Embed, Some(t))).collect();
        self.batch(&reqs)?.into_iter().map(|r| self.check_vector(r)).collect()
    }

    fn check_vector(&self, r: ProviderResponse) -> Result<Vec<f64>> {
        let v = r
            .vector
            .ok_or_else(|| Error::Provider("embed response without vector".into()))?;
        if v.len() != self.dim {
            return Err(Error::Provider(format!(
                "vector length {} differs from advertised dim {}",
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Provider("non-finite vector component".into()));
        }
        Ok(v)
    }
}

fn check_response(r: ProviderResponse) -> Result<ProviderResponse> {
    if r.v != PROTOCOL_VERSION {
        return Err(Error::VersionMismatch {
            format: "provider protocol",
            expected: PROTOCOL_VERSION,
            found: r.v,
        });
    }
    if let Some(e) = &r.error {
        return Err(Error::Provider(e.clone()));
    }
    Ok(r)
}

impl EntityExtractor for RemoteProvider {
    fn extract(&self, text: &str, _ctx: &DocumentContext) -> Result<Vec<RawMention>> {
        let r = self.call(&ProviderRequest::new(Op::Extract, Some(text)))?;
        let ents = r
            .entities
            .ok_or_else(|| Error::Provider("extract response without entities".into()))?;
        let n = text.chars().count();
        if let Some(bad) = ents.iter().find(|m| m.start >= m.end || m.end > n) {
            return Err(Error::Provider(format!(
                "entity offsets {}..{} invalid for text of length {n}",
                bad.start, bad.end
            )));
        }
        Ok(ents)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let r = self.call(&ProviderRequest::new(Op::Embed, Some(text)))?;
        self.check_vector(r)
    }
}

/// Answers one protocol request with the built-in baseline components.
pub fn stub_response(req: &ProviderRequest, embedder: &HashedEmbedder) -> ProviderResponse {
    let mut r = ProviderResponse {
        v: PROTOCOL_VERSION,
        ..Default::default()
    };
    if req.v != PROTOCOL_VERSION {
        r.error = Some(format!("unsupported protocol version {}", req.v));
        return r;
    }
    let text = req.text.clone().unwrap_or_default();
    match req.op {
        Op::Health => {
            r.status = Some("ok".into());
            r.dim = Some(embedder.dim());
            r.models = Some(BTreeMap::from([
                ("embed".to_string(), embedder.id().to_string()),
                ("extract".to_string(), "baseline".to_string()),
            ]));
        }
        Op::Extract => {
            let ctx = DocumentContext::default();
            r.entities = Some(BaselineExtractor.extract(&text, &ctx).unwrap_or_default());
        }
        Op::Embed => r.vector = Some(embedder.embed(&text).unwrap_or_default()),
    }
    r
}

/// Minimal in-process HTTP server speaking the sidecar protocol, backed by
/// the baseline extractor and hashed embedder. Used for protocol
/// conformance tests and offline runs.
pub struct StubServer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start() -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(provider_err)?;
        let addr = listener.local_addr().map_err(provider_err)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            let embedder = HashedEmbedder::default();
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(s) = stream {
                    if let Err(e) = serve_connection(s, &embedder) {
                        log::debug!("stub connection error: {e}");
                    }
                }
            }
        });
        Ok(StubServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(stream: TcpStream, embedder: &HashedEmbedder) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line)? == 0 {
            return Ok(());
        }
        let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
        let mut content_length = 0usize;
        let mut close = false;
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h)? == 0 {
                return Ok(());
            }
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                let k = k.trim().to_ascii_lowercase();
                if k == "content-length" {
                    content_length = v.trim().parse().unwrap_or(0);
                } else if k == "connection" && v.trim().eq_ignore_ascii_case("close") {
                    close = true;
                }
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        let body = String::from_utf8_lossy(&body);

        let answer = |line: &str| -> String {
            let resp = match serde_json::from_str::<ProviderRequest>(line) {
                Ok(req) => stub_response(&req, embedder),
                Err(e) => ProviderResponse {
                    v: PROTOCOL_VERSION,
                    error: Some(format!("bad request: {e}")),
                    ..Default::default()
                },
            };
            serde_json::to_string(&resp).expect("response serialization cannot fail")
        };
        let (status, payload) = match path.as_str() {
            "/v1/nlp" => ("200 OK", answer(&body)),
            "/v1/nlp/batch" => (
                "200 OK",
                body.lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| answer(l) + "\n")
                    .collect(),
            ),
            _ => ("404 Not Found", String::from("{}")),
        };
        let mut out = stream.try_clone()?;
        write!(
            out,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
            payload.len()
        )?;
        out.flush()?;
        if close {
            return Ok(());
        }
    }
}
