//! Bulk querying of an embedding service: batched, concurrent, retried and
//! resumable after interruption.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use embmark_core::corpus::PairSpec;
use embmark_core::embedding::{EmbeddingSpace, Side};
use embmark_core::io::{sha256_hex, write_embf};
use futures::stream::{self, StreamExt};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use crate::error::{EaasError, Result};
use crate::files::{sidecar, write_atomic, write_pairs};
use crate::service::ADMIN_KEY_HEADER;
use crate::wire::{
    EmbedItem, EmbedRequest, EmbedResponse, ErrorBody, Health, RegisterUser, RegisteredUser,
    MAX_BATCH_ITEMS,
};

/// Suffix of the query list written next to the stolen EMBF file.
pub const QUERIES_SUFFIX: &str = ".queries.json";
/// Suffix of the resume state kept while a steal is incomplete.
pub const PARTIAL_SUFFIX: &str = ".partial.json";

#[derive(Debug, Clone)]
pub struct StealOptions {
    /// Pairs per request; each pair is two items.
    pub batch_pairs: usize,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff: Duration,
    /// Stop after this many newly fetched batches, leaving the resume state.
    pub stop_after: Option<usize>,
}

impl Default for StealOptions {
    fn default() -> Self {
        StealOptions {
            batch_pairs: MAX_BATCH_ITEMS / 2,
            max_in_flight: 4,
            max_attempts: 5,
            backoff: Duration::from_millis(200),
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    endpoint: String,
    api_key: String,
}

async fn error_message(resp: reqwest::Response) -> String {
    let status = resp.status();
    match resp.text().await {
        Ok(body) => serde_json::from_str::<ErrorBody>(&body)
            .map(|b| b.error)
            .unwrap_or(body),
        Err(_) => status.to_string(),
    }
}

fn retryable(status: StatusCode) -> bool {
    status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS
}

impl Client {
    pub fn new(endpoint: &str, api_key: &str) -> Result<Self> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()?;
        Ok(Client {
            http,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
        })
    }

    pub async fn health(&self) -> Result<Health> {
        let resp = self
            .http
            .get(format!("{}/v1/health", self.endpoint))
            .send()
            .await?;
        Ok(resp.json().await?)
    }

    /// One embed request with retries on transport errors and 5xx/429.
    pub async fn embed(&self, items: &[EmbedItem], opts: &StealOptions) -> Result<EmbedResponse> {
        let body = EmbedRequest {
            api_key: self.api_key.clone(),
            items: items.to_vec(),
        };
        let url = format!("{}/v1/embed", self.endpoint);
        let mut last = String::new();
        for attempt in 0..opts.max_attempts {
            if attempt > 0 {
                tokio::time::sleep(opts.backoff * 2u32.pow(attempt - 1)).await;
            }
            match self.http.post(&url).json(&body).send().await {
                Ok(resp) if resp.status().is_success() => {
                    let out: EmbedResponse = resp.json().await?;
                    if out.embeddings.len() != items.len() {
                        return Err(EaasError::ResponseShape {
                            expected: items.len(),
                            found: out.embeddings.len(),
                        });
                    }
                    if let Some(e) = out.embeddings.iter().find(|e| e.len() != out.dim) {
                        return Err(EaasError::ResponseShape {
                            expected: out.dim,
                            found: e.len(),
                        });
                    }
                    return Ok(out);
                }
                Ok(resp) if retryable(resp.status()) => {
                    let status = resp.status();
                    last = format!("{status}: {}", error_message(resp).await);
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    return Err(EaasError::Rejected {
                        status,
                        message: error_message(resp).await,
                    });
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!(
                "embed attempt {} of {} failed: {last}",
                attempt + 1,
                opts.max_attempts
            );
        }
        Err(EaasError::ServiceUnavailable {
            attempts: opts.max_attempts,
            last,
        })
    }
}

/// Registers a user through the admin endpoint and returns its API key.
pub async fn register_remote(
    endpoint: &str,
    admin_key: &str,
    user_id: &str,
) -> Result<RegisteredUser> {
    let resp = reqwest::Client::new()
        .post(format!("{}/v1/admin/users", endpoint.trim_end_matches('/')))
        .header(ADMIN_KEY_HEADER, admin_key)
        .json(&RegisterUser {
            user_id: user_id.to_string(),
        })
        .send()
        .await?;
    if !resp.status().is_success() {
        let status = resp.status().as_u16();
        return Err(EaasError::Rejected {
            status,
            message: error_message(resp).await,
        });
    }
    Ok(resp.json().await?)
}

fn batch_items(pairs: &[PairSpec]) -> Vec<EmbedItem> {
    pairs
        .iter()
        .flat_map(|p| {
            [Side::Image, Side::Text].map(|side| EmbedItem {
                id: p.id.clone(),
                side,
                classes: p.classes(side).to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResumeState {
    spec_digest: String,
    batch_pairs: usize,
    batches: BTreeMap<usize, Vec<Vec<f32>>>,
}

fn spec_digest(pairs: &[PairSpec], batch_pairs: usize) -> Result<String> {
    let mut bytes = serde_json::to_vec(pairs)?;
    bytes.extend_from_slice(&(batch_pairs as u64).to_le_bytes());
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone)]
pub struct StealOutcome {
    pub total_batches: usize,
    pub completed_batches: usize,
    /// The assembled space once every batch is in.
    pub space: Option<EmbeddingSpace>,
    pub embf: PathBuf,
    pub queries: PathBuf,
}

/// Queries the service for every pair and writes the served embeddings to
/// `out` (EMBF) plus the query list to `out` + [`QUERIES_SUFFIX`].
///
/// Finished batches are checkpointed to `out` + [`PARTIAL_SUFFIX`]; a rerun
/// with the same pairs only fetches the missing ones.
pub async fn steal(
    client: &Client,
    pairs: &[PairSpec],
    out: &Path,
    opts: &StealOptions,
) -> Result<StealOutcome> {
    if pairs.is_empty() {
        return Err(EaasError::EmptySpec);
    }
    if opts.batch_pairs == 0 || 2 * opts.batch_pairs > MAX_BATCH_ITEMS {
        return Err(EaasError::Config(format!(
            "batch size must be 1..={} pairs",
            MAX_BATCH_ITEMS / 2
        )));
    }
    let partial = sidecar(out, PARTIAL_SUFFIX);
    let digest = spec_digest(pairs, opts.batch_pairs)?;
    let mut state = if partial.exists() {
        let s: ResumeState = serde_json::from_slice(&fs::read(&partial)?)?;
        if s.spec_digest != digest {
            return Err(EaasError::StaleResumeState);
        }
        log::info!("resuming with {} finished batches", s.batches.len());
        s
    } else {
        ResumeState {
            spec_digest: digest,
            batch_pairs: opts.batch_pairs,
            batches: BTreeMap::new(),
        }
    };

    let chunks: Vec<&[PairSpec]> = pairs.chunks(opts.batch_pairs).collect();
    let total = chunks.len();
    let pending: Vec<usize> = (0..total)
        .filter(|b| !state.batches.contains_key(b))
        .collect();
    let mut fetches = stream::iter(pending)
        .map(|b| {
            let items = batch_items(chunks[b]);
            async move { client.embed(&items, opts).await.map(|r| (b, r)) }
        })
        .buffered(opts.max_in_flight.max(1));
    let mut fetched = 0;
    while let Some(result) = fetches.next().await {
        let (b, resp) = result?;
        state.batches.insert(b, resp.embeddings);
        write_atomic(&partial, &serde_json::to_vec(&state)?)?;
        fetched += 1;
        if opts.stop_after.is_some_and(|n| fetched >= n) && state.batches.len() < total {
            break;
        }
    }
    drop(fetches);

    let queries = sidecar(out, QUERIES_SUFFIX);
    if state.batches.len() < total {
        return Ok(StealOutcome {
            total_batches: total,
            completed_batches: state.batches.len(),
            space: None,
            embf: out.to_path_buf(),
            queries,
        });
    }
    let mut image = Vec::with_capacity(pairs.len());
    let mut text = Vec::with_capacity(pairs.len());
    for rows in state.batches.into_values() {
        let mut rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(f64::from).collect::<Vec<f64>>());
        while let (Some(i), Some(t)) = (rows.next(), rows.next()) {
            image.push(i);
            text.push(t);
        }
    }
    let space =
        EmbeddingSpace::from_rows(image, text, pairs.iter().map(|p| p.id.clone()).collect())?;
    write_embf(out, &space)?;
    write_pairs(&queries, pairs)?;
    fs::remove_file(&partial)?;
    Ok(StealOutcome {
        total_batches: total,
        completed_batches: total,
        space: Some(space),
        embf: out.to_path_buf(),
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use embmark_core::corpus::ClassId;

    #[test]
    fn each_pair_becomes_an_image_and_a_text_item() {
        let pairs = vec![PairSpec {
            id: "p".into(),
            image_classes: vec![ClassId(1)],
            text_classes: vec![ClassId(2), ClassId(3)],
        }];
        let items = batch_items(&pairs);
        assert_eq!(items.len(), 2);
        assert_eq!(
            (items[0].side, items[0].classes.clone()),
            (Side::Image, vec![ClassId(1)])
        );
        assert_eq!(
            (items[1].side, items[1].classes.clone()),
            (Side::Text, vec![ClassId(2), ClassId(3)])
        );
    }

    #[test]
    fn default_batches_fill_the_item_cap() {
        assert_eq!(2 * StealOptions::default().batch_pairs, MAX_BATCH_ITEMS);
    }

    #[test]
    fn digest_depends_on_batching() {
        let pairs = vec![PairSpec::benign("a", vec![ClassId(0)])];
        assert_ne!(
            spec_digest(&pairs, 1).unwrap(),
            spec_digest(&pairs, 2).unwrap()
        );
    }
}
