//! JSON bodies of the embedding service.

use embmark_core::corpus::ClassId;
use embmark_core::embedding::Side;
use serde::{Deserialize, Serialize};

/// Most items accepted in one embed request.
pub const MAX_BATCH_ITEMS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedItem {
    pub id: String,
    pub side: Side,
    pub classes: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub api_key: String,
    pub items: Vec<EmbedItem>,
}

/// Unit-norm embeddings in request order. f32 values serialize in their
/// shortest round-trip form (at most 9 significant digits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedResponse {
    pub dim: usize,
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub dim: usize,
    pub status: String,
    /// Seconds since the service started.
    pub uptime: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterUser {
    pub user_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisteredUser {
    pub user_id: String,
    pub api_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
