//! HTTP rating service. Each exported manifest is a session; ratings are
//! appended to one log per session in the ratings table format.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gmad_core::formats::{rating_line, read_ratings, Manifest, RATINGS_HEADER};
use gmad_core::protocol::{Stage, Workspace};
use gmad_core::subjective::RatingRecord;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

pub const DEFAULT_TRAINING_PAIRS: usize = 5;
/// Per-round log file written by the service.
pub const LOG_FILE: &str = "service_ratings.csv";
const MAX_SUBJECT_LEN: usize = 64;

/// Everything needed to open one session.
#[derive(Clone, Debug)]
pub struct SessionSpec {
    pub manifest: Manifest,
    /// Image pairs shown before the manifest; their ratings are flagged.
    pub training: Vec<(String, String)>,
    pub features: HashMap<String, Vec<f64>>,
    pub log_path: PathBuf,
}

struct QueueEntry {
    training: bool,
    x: String,
    y: String,
}

struct Session {
    round: u32,
    queue: Vec<QueueEntry>,
    /// Image id to its training flag.
    images: HashMap<String, bool>,
    features: HashMap<String, Vec<f64>>,
    rated: HashMap<String, HashSet<String>>,
    log: File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub image_id: String,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPair {
    pub index: usize,
    pub training: bool,
    pub left: Stimulus,
    pub right: Stimulus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub subject_id: String,
    pub round: u32,
    pub training_pairs: usize,
    pub pairs: Vec<SessionPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub round: u32,
    pub pairs: usize,
    pub training_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreInput {
    pub image_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub subject_id: String,
    pub ratings: Vec<ScoreInput>,
    /// Milliseconds since the Unix epoch; server time when absent.
    #[serde(default)]
    pub timestamp: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub subject_id: String,
    pub session_id: String,
    pub pairs_total: usize,
    pub pairs_done: usize,
    pub training_total: usize,
    pub training_done: usize,
    /// Stored non-training ratings.
    pub ratings: usize,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub accepted: usize,
    pub duplicates: usize,
    pub progress: Progress,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<gmad_core::Error> for ApiError {
    fn from(e: gmad_core::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Whether each of `n` queued pairs is shown swapped, fixed by the subject
/// and session ids.
pub fn swapped(subject_id: &str, session_id: &str, n: usize) -> Vec<bool> {
    let key = format!("{subject_id}\u{0}{session_id}");
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()));
    (0..n).map(|_| rng.random::<bool>()).collect()
}

/// `n` disjoint pairs drawn from `candidates`, fixed by the session id.
pub fn training_pairs(candidates: &[String], session_id: &str, n: usize) -> Vec<(String, String)> {
    let n = n.min(candidates.len() / 2);
    let mut sorted = candidates.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(session_id.as_bytes()));
    let picks = sample(&mut rng, sorted.len(), 2 * n).into_vec();
    picks
        .chunks(2)
        .map(|c| (sorted[c[0]].clone(), sorted[c[1]].clone()))
        .collect()
}

fn check_subject(subject_id: &str) -> Result<(), ApiError> {
    let ok = !subject_id.is_empty()
        && subject_id.len() <= MAX_SUBJECT_LEN
        && subject_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_subject",
            format!("subject id must be 1-{MAX_SUBJECT_LEN} characters of [A-Za-z0-9._-]"),
        ))
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Session {
    fn open(spec: SessionSpec) -> gmad_core::Result<Self> {
        let mut queue: Vec<QueueEntry> = spec
            .training
            .iter()
            .map(|(x, y)| QueueEntry {
                training: true,
                x: x.clone(),
                y: y.clone(),
            })
            .collect();
        queue.extend(spec.manifest.pairs.iter().map(|p| QueueEntry {
            training: false,
            x: p.image_x.clone(),
            y: p.image_y.clone(),
        }));
        let mut images = HashMap::new();
        for q in &queue {
            for id in [&q.x, &q.y] {
                if !spec.features.contains_key(id) {
                    return Err(gmad_core::Error::UnknownImage(id.clone()));
                }
                images.insert(id.clone(), q.training);
            }
        }
        let mut rated: HashMap<String, HashSet<String>> = HashMap::new();
        if spec.log_path.exists() {
            for r in read_ratings(&spec.log_path)? {
                rated.entry(r.subject_id).or_default().insert(r.image_id);
            }
        } else {
            if let Some(dir) = spec.log_path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let mut f = File::create(&spec.log_path)?;
            writeln!(f, "{RATINGS_HEADER}")?;
            f.sync_all()?;
        }
        let log = OpenOptions::new().append(true).open(&spec.log_path)?;
        Ok(Self {
            round: spec.manifest.round,
            queue,
            images,
            features: spec.features,
            rated,
            log,
        })
    }

    fn training_total(&self) -> usize {
        self.queue.iter().filter(|q| q.training).count()
    }

    fn progress(&self, session_id: &str, subject_id: &str) -> Progress {
        let empty = HashSet::new();
        let rated = self.rated.get(subject_id).unwrap_or(&empty);
        let done = |training: bool| {
            self.queue
                .iter()
                .filter(|q| q.training == training && rated.contains(&q.x) && rated.contains(&q.y))
                .count()
        };
        let pairs_total = self.queue.len() - self.training_total();
        let pairs_done = done(false);
        Progress {
            subject_id: subject_id.to_string(),
            session_id: session_id.to_string(),
            pairs_total,
            pairs_done,
            training_total: self.training_total(),
            training_done: done(true),
            ratings: rated.iter().filter(|id| self.images.get(*id) == Some(&false)).count(),
            complete: pairs_done == pairs_total,
        }
    }
}

/// Sessions plus their logs. Single writer: callers serialize access.
pub struct RatingStore {
    sessions: BTreeMap<String, Session>,
}

impl RatingStore {
    pub fn open(specs: Vec<SessionSpec>) -> gmad_core::Result<Self> {
        let mut sessions = BTreeMap::new();
        for spec in specs {
            let id = spec.manifest.manifest_id.clone();
            if sessions.insert(id.clone(), Session::open(spec)?).is_some() {
                return Err(gmad_core::Error::InvalidArgument(format!("duplicate session `{id}`")));
            }
        }
        Ok(Self { sessions })
    }

    /// One session per exported round of the workspace, with training pairs
    /// drawn from the rated calibration images.
    pub fn from_workspace(ws: &Workspace, training: usize) -> gmad_core::Result<Self> {
        let state = ws.load_state()?;
        let catalog = ws.catalog()?;
        let base: Vec<String> = ws.base()?.ids().map(str::to_string).collect();
        let mut specs = Vec::new();
        for r in state.rounds.iter().filter(|r| r.is_done(Stage::Exported)) {
            let manifest = Manifest::load(&ws.round_file(r.round, "manifest.json"))?;
            let training = training_pairs(&base, &manifest.manifest_id, training);
            let mut features = HashMap::new();
            let ids = manifest
                .image_ids()
                .into_iter()
                .chain(training.iter().flat_map(|(x, y)| [x.clone(), y.clone()]));
            for id in ids {
                let rec = catalog
                    .get(&id)
                    .ok_or_else(|| gmad_core::Error::UnknownImage(id.clone()))?;
                features.insert(id, rec.features.clone());
            }
            specs.push(SessionSpec {
                manifest,
                training,
                features,
                log_path: ws.round_file(r.round, LOG_FILE),
            });
        }
        if specs.is_empty() {
            return Err(gmad_core::Error::Stage("no exported manifest to serve".into()));
        }
        Self::open(specs)
    }

    fn session(&self, id: &str) -> Result<&Session, ApiError> {
        self.sessions
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`")))
    }

    pub fn sessions(&self) -> Vec<SessionSummary> {
        self.sessions
            .iter()
            .map(|(id, s)| SessionSummary {
                session_id: id.clone(),
                round: s.round,
                pairs: s.queue.len() - s.training_total(),
                training_pairs: s.training_total(),
            })
            .collect()
    }

    pub fn manifest(&self, session_id: &str, subject_id: &str) -> Result<SessionManifest, ApiError> {
        check_subject(subject_id)?;
        let s = self.session(session_id)?;
        let flips = swapped(subject_id, session_id, s.queue.len());
        let stim = |id: &str| Stimulus {
            image_id: id.to_string(),
            features: s.features[id].clone(),
        };
        let pairs = s
            .queue
            .iter()
            .zip(flips)
            .enumerate()
            .map(|(index, (q, flip))| {
                let (l, r) = if flip { (&q.y, &q.x) } else { (&q.x, &q.y) };
                SessionPair {
                    index,
                    training: q.training,
                    left: stim(l),
                    right: stim(r),
                }
            })
            .collect();
        Ok(SessionManifest {
            session_id: session_id.to_string(),
            subject_id: subject_id.to_string(),
            round: s.round,
            training_pairs: s.training_total(),
            pairs,
        })
    }

    pub fn progress(&self, session_id: &str, subject_id: &str) -> Result<Progress, ApiError> {
        check_subject(subject_id)?;
        Ok(self.session(session_id)?.progress(session_id, subject_id))
    }

    /// Validates the whole batch, then appends the ratings not stored yet.
    /// A repeated `(subject, session, image)` keeps the first score.
    pub fn submit(&mut self, session_id: &str, req: &SubmitRequest) -> Result<SubmitResponse, ApiError> {
        check_subject(&req.subject_id)?;
        let s = self
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{session_id}`")))?;
        if req.ratings.is_empty() {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "malformed_payload", "no ratings in request"));
        }
        for r in &req.ratings {
            if !(r.score.is_finite() && (0.0..=100.0).contains(&r.score)) {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "invalid_score",
                    format!("score for `{}` must lie in [0, 100]", r.image_id),
                ));
            }
            if !s.images.contains_key(&r.image_id) {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "unknown_image",
                    format!("image `{}` is not in session `{session_id}`", r.image_id),
                ));
            }
        }
        let timestamp = req.timestamp.unwrap_or_else(now_ms);
        let rated = s.rated.entry(req.subject_id.clone()).or_default();
        let mut fresh = Vec::new();
        let mut lines = String::new();
        for r in &req.ratings {
            if rated.contains(&r.image_id) || fresh.contains(&r.image_id) {
                continue;
            }
            let record = RatingRecord {
                subject_id: req.subject_id.clone(),
                session_id: session_id.to_string(),
                image_id: r.image_id.clone(),
                score: r.score,
                timestamp,
                training: s.images[&r.image_id],
            };
            lines.push_str(&rating_line(&record)?);
            lines.push('\n');
            fresh.push(r.image_id.clone());
        }
        if !lines.is_empty() {
            s.log
                .write_all(lines.as_bytes())
                .and_then(|_| s.log.sync_data())
                .map_err(gmad_core::Error::from)?;
        }
        let accepted = fresh.len();
        rated.extend(fresh);
        Ok(SubmitResponse {
            accepted,
            duplicates: req.ratings.len() - accepted,
            progress: s.progress(session_id, &req.subject_id),
        })
    }
}

type Shared = Arc<Mutex<RatingStore>>;

#[derive(Deserialize)]
struct SubjectQuery {
    subject_id: Option<String>,
}

fn subject(q: SubjectQuery) -> Result<String, ApiError> {
    q.subject_id
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing_subject", "query parameter `subject_id` is required"))
}

fn lock(store: &Shared) -> std::sync::MutexGuard<'_, RatingStore> {
    store.lock().unwrap_or_else(|e| e.into_inner())
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_sessions(State(store): State<Shared>) -> Json<Vec<SessionSummary>> {
    Json(lock(&store).sessions())
}

async fn get_session(
    State(store): State<Shared>,
    Path(session_id): Path<String>,
    Query(q): Query<SubjectQuery>,
) -> Result<Json<SessionManifest>, ApiError> {
    let subject_id = subject(q)?;
    lock(&store).manifest(&session_id, &subject_id).map(Json)
}

async fn get_progress(
    State(store): State<Shared>,
    Path(session_id): Path<String>,
    Query(q): Query<SubjectQuery>,
) -> Result<Json<Progress>, ApiError> {
    let subject_id = subject(q)?;
    lock(&store).progress(&session_id, &subject_id).map(Json)
}

async fn post_ratings(
    State(store): State<Shared>,
    Path(session_id): Path<String>,
    payload: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let Json(req) = payload.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_payload", e.body_text()))?;
    let out = lock(&store).submit(&session_id, &req)?;
    log::info!(
        "{session_id}: {} stored {} ({} duplicate)",
        req.subject_id,
        out.accepted,
        out.duplicates
    );
    Ok(Json(out))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(store: RatingStore) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", get(list_sessions))
        .route("/api/sessions/{session_id}", get(get_session))
        .route("/api/sessions/{session_id}/progress", get(get_progress))
        .route("/api/sessions/{session_id}/ratings", post(post_ratings))
        .fallback(not_found)
        .layer(cors)
        .with_state(Arc::new(Mutex::new(store)))
}

pub async fn serve(store: RatingStore, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("rating service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
