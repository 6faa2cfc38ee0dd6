//! The provider's embedding service. Every caller is a registered user with
//! its own watermark transform; `/v1/embed` returns `W_k e / |W_k e|`.

use std::collections::HashMap;
use std::fs;
use std::future::IntoFuture;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use embmark_core::corpus::{ClassCatalog, Encoder};
use embmark_core::embedding::normalize;
use embmark_core::pipeline::train_on_triggers;
use embmark_core::rng::mix_bytes;
use embmark_core::transform::{TrainConfig, TransformMatrix};
use embmark_core::trigger::TriggerSet;
use embmark_core::verify::{UserRegistry, REGISTRY_FILE};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::error::{EaasError, Result};
use crate::wire::{
    EmbedRequest, EmbedResponse, ErrorBody, Health, RegisterUser, RegisteredUser, MAX_BATCH_ITEMS,
};

pub const ADMIN_KEY_ENV: &str = "EMBMARK_ADMIN_KEY";
pub const ADMIN_KEY_HEADER: &str = "x-admin-key";
pub const KEYS_FILE: &str = "keys.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub bind: String,
    pub catalog: PathBuf,
    /// Directory holding `registry.json`, `keys.json` and the WMT1 files.
    pub registry: PathBuf,
    /// Trigger set used to train transforms for newly registered users.
    #[serde(default)]
    pub triggers: Option<PathBuf>,
    /// Encoder noise; defaults to the catalog's.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    /// Encoder seed; defaults to the catalog's.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Schedule for new users; the seed is mixed with the user id.
    #[serde(default = "TrainConfig::desk")]
    pub train: TrainConfig,
}

impl ServiceConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ServiceConfig = serde_json::from_slice(&fs::read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.catalog);
        fix(&mut cfg.registry);
        if let Some(t) = cfg.triggers.as_mut() {
            fix(t);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KeyStore {
    pub keys: Vec<KeyEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub api_key: String,
    pub user_id: String,
}

impl KeyStore {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(KEYS_FILE);
        if !path.exists() {
            return Ok(KeyStore::default());
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(KEYS_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub fn load_registry(dir: &Path) -> Result<UserRegistry> {
    if dir.join(REGISTRY_FILE).exists() {
        Ok(UserRegistry::load(dir)?)
    } else {
        Ok(UserRegistry::new(Vec::new())?)
    }
}

/// Seed of a user's transform: the base training seed mixed with the user id.
pub fn user_seed(base: u64, user_id: &str) -> u64 {
    mix_bytes(base, user_id.as_bytes())
}

fn new_api_key() -> String {
    format!("emk_{}", uuid::Uuid::new_v4().simple())
}

/// Trains a transform for `user_id`, adds it to the registry in `dir` and
/// returns the new API key.
pub fn register_user(
    dir: &Path,
    catalog: &ClassCatalog,
    triggers: &TriggerSet,
    train: &TrainConfig,
    user_id: &str,
) -> Result<(String, TransformMatrix)> {
    let mut registry = load_registry(dir)?;
    if registry.get(user_id).is_some() {
        return Err(embmark_core::Error::DuplicateId(user_id.to_string()).into());
    }
    let cfg = TrainConfig {
        seed: user_seed(train.seed, user_id),
        ..train.clone()
    };
    let w = train_on_triggers(catalog, triggers, &cfg)?;
    w.w.invert()?;
    registry.push(user_id.to_string(), w.clone())?;
    let mut keys = KeyStore::load(dir)?;
    let api_key = new_api_key();
    keys.keys.push(KeyEntry {
        api_key: api_key.clone(),
        user_id: user_id.to_string(),
    });
    registry.save(dir)?;
    keys.save(dir)?;
    Ok((api_key, w))
}

struct Loaded {
    catalog: Arc<ClassCatalog>,
    triggers: Option<Arc<TriggerSet>>,
    noise_sigma: f64,
    seed: u64,
    /// API key to (user id, transform).
    users: HashMap<String, (String, Arc<TransformMatrix>)>,
}

pub struct AppState {
    config: ServiceConfig,
    admin_key: Option<String>,
    started: Instant,
    loaded: RwLock<Option<Loaded>>,
    registry_writer: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(config: ServiceConfig, admin_key: Option<String>) -> Arc<Self> {
        Arc::new(AppState {
            config,
            admin_key,
            started: Instant::now(),
            loaded: RwLock::new(None),
            registry_writer: tokio::sync::Mutex::new(()),
        })
    }

    /// Reads the catalog, triggers and registry and opens the service.
    pub fn load(&self) -> Result<()> {
        let catalog = ClassCatalog::load(&self.config.catalog)?;
        let triggers = match &self.config.triggers {
            Some(p) => Some(Arc::new(TriggerSet::from_json(&fs::read_to_string(p)?)?)),
            None => None,
        };
        let registry = load_registry(&self.config.registry)?;
        let keys = KeyStore::load(&self.config.registry)?;
        let mut users = HashMap::new();
        for k in keys.keys {
            let w = registry.get(&k.user_id).ok_or_else(|| {
                EaasError::Config(format!("key for unknown user {:?}", k.user_id))
            })?;
            if w.dim() != catalog.dim() {
                return Err(EaasError::Config(format!(
                    "transform of {:?} has dimension {}, service has {}",
                    k.user_id,
                    w.dim(),
                    catalog.dim()
                )));
            }
            w.w.invert()?;
            users.insert(k.api_key, (k.user_id, Arc::new(w.clone())));
        }
        let loaded = Loaded {
            noise_sigma: self
                .config
                .noise_sigma
                .unwrap_or(catalog.spec().noise_sigma),
            seed: self.config.seed.unwrap_or(catalog.spec().seed),
            catalog: Arc::new(catalog),
            triggers,
            users,
        };
        log::info!(
            "service ready: dim {}, {} users",
            loaded.catalog.dim(),
            loaded.users.len()
        );
        *self.loaded.write().expect("state lock") = Some(loaded);
        Ok(())
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: message.into(),
        }),
    )
        .into_response()
}

fn not_ready() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "service is loading")
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let uptime = state.started.elapsed().as_secs_f64();
    match state.loaded.read().expect("state lock").as_ref() {
        Some(l) => Json(Health {
            dim: l.catalog.dim(),
            status: "ok".into(),
            uptime,
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                dim: 0,
                status: "loading".into(),
                uptime,
            }),
        )
            .into_response(),
    }
}

async fn embed(
    State(state): State<Arc<AppState>>,
    body: std::result::Result<Json<EmbedRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let guard = state.loaded.read().expect("state lock");
    let Some(loaded) = guard.as_ref() else {
        return not_ready();
    };
    let Some((_, w)) = loaded.users.get(&req.api_key) else {
        return error(StatusCode::UNAUTHORIZED, "unknown api key");
    };
    if req.items.len() > MAX_BATCH_ITEMS {
        return error(
            StatusCode::BAD_REQUEST,
            format!(
                "{} items exceed the batch cap of {MAX_BATCH_ITEMS}",
                req.items.len()
            ),
        );
    }
    let encoder = Encoder::new(&loaded.catalog, loaded.noise_sigma, loaded.seed);
    let mut embeddings = Vec::with_capacity(req.items.len());
    for item in &req.items {
        let served = encoder
            .embed(&item.id, item.side, &item.classes)
            .and_then(|e| w.w.matvec_slice(e.values()))
            .and_then(|v| normalize(&v));
        match served {
            Ok(v) => embeddings.push(v.into_iter().map(|x| x as f32).collect()),
            Err(e) => return error(StatusCode::BAD_REQUEST, format!("item {:?}: {e}", item.id)),
        }
    }
    Json(EmbedResponse {
        dim: loaded.catalog.dim(),
        embeddings,
    })
    .into_response()
}

async fn add_user(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: std::result::Result<Json<RegisterUser>, JsonRejection>,
) -> Response {
    let presented = headers.get(ADMIN_KEY_HEADER).and_then(|v| v.to_str().ok());
    match (&state.admin_key, presented) {
        (Some(expected), Some(got)) if expected == got => {}
        _ => return error(StatusCode::UNAUTHORIZED, "admin key required"),
    }
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    if req.user_id.is_empty() || req.user_id.contains('\n') {
        return error(StatusCode::BAD_REQUEST, "invalid user id");
    }
    let _writer = state.registry_writer.lock().await;
    let (catalog, triggers) = {
        let guard = state.loaded.read().expect("state lock");
        let Some(loaded) = guard.as_ref() else {
            return not_ready();
        };
        let Some(triggers) = loaded.triggers.clone() else {
            return error(
                StatusCode::SERVICE_UNAVAILABLE,
                "service has no trigger set configured",
            );
        };
        (loaded.catalog.clone(), triggers)
    };
    let dir = state.config.registry.clone();
    let train = state.config.train.clone();
    let user_id = req.user_id.clone();
    let trained = tokio::task::spawn_blocking(move || {
        register_user(&dir, &catalog, &triggers, &train, &user_id)
    })
    .await;
    match trained {
        Ok(Ok((api_key, w))) => {
            if let Some(loaded) = state.loaded.write().expect("state lock").as_mut() {
                loaded
                    .users
                    .insert(api_key.clone(), (req.user_id.clone(), Arc::new(w)));
            }
            log::info!("registered user {}", req.user_id);
            Json(RegisteredUser {
                user_id: req.user_id,
                api_key,
            })
            .into_response()
        }
        Ok(Err(EaasError::Core(embmark_core::Error::DuplicateId(id)))) => error(
            StatusCode::BAD_REQUEST,
            format!("user {id:?} already registered"),
        ),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/embed", post(embed))
        .route("/v1/admin/users", post(add_user))
        .with_state(state)
}

/// A service bound to a local address, loading in the background.
pub struct RunningService {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    pub loader: JoinHandle<Result<()>>,
    pub server: JoinHandle<std::io::Result<()>>,
}

impl RunningService {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Waits for the background load to finish.
    pub async fn ready(&mut self) -> Result<()> {
        (&mut self.loader)
            .await
            .map_err(|e| EaasError::Config(format!("loader panicked: {e}")))?
    }
}

/// Binds `config.bind` (or `listener`), answers 503 until the data is
/// loaded, then serves.
pub async fn start(
    config: ServiceConfig,
    admin_key: Option<String>,
    listener: Option<TcpListener>,
) -> Result<RunningService> {
    let listener = match listener {
        Some(l) => l,
        None => TcpListener::bind(&config.bind).await?,
    };
    let addr = listener.local_addr()?;
    let state = AppState::new(config, admin_key);
    let server = tokio::spawn(axum::serve(listener, router(state.clone())).into_future());
    let loading = state.clone();
    let loader = tokio::task::spawn_blocking(move || {
        let r = loading.load();
        if let Err(e) = &r {
            log::error!("failed to load service data: {e}");
        }
        r
    });
    Ok(RunningService {
        addr,
        state,
        loader,
        server,
    })
}
