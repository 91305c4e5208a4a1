//! HTTP + WebSocket front end.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | POST | `/sessions` | [`CreateSession`] |
//! | GET | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/constraints` | constraint script |
//! | POST | `/sessions/{id}/step` | [`StepRequest`] |
//! | POST | `/sessions/{id}/select` | [`SelectRequest`] |
//! | POST | `/sessions/{id}/accept` | |
//! | GET | `/sessions/{id}/candidates` | `?seed=` |
//! | GET | `/sessions/{id}/interpolation` | `?frames=M` |
//! | POST | `/sessions/{id}/transfer` | [`TransferRequest`] |
//! | POST | `/transform` | [`TransformRequest`] |
//! | GET (WS) | `/sessions/{id}/stream` | frames as [`FrameMessage`] JSON |
//!
//! Errors are JSON [`ErrorBody`] values with a stable `error` code.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use latentbrush::bundle::ModelBundle;
use latentbrush::edit::EditState;
use latentbrush::script::EditScript;
use latentbrush::transfer::TransformMode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::config::{ServiceConfig, Settings};
use crate::error::{ApiError, Result};
use crate::session::{png_base64, decode_base64_image, FrameMessage, Origin, Session};
use crate::store::SessionStore;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub model: Option<String>,
    /// Base64-encoded image file; omit for a blank session.
    #[serde(default)]
    pub photo: Option<String>,
    /// Seed of the blank-mode starting latent.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub k: usize,
    #[serde(default)]
    pub lr: Option<f32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub z: Vec<f32>,
    #[serde(default)]
    pub accept: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRequest {
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default)]
    pub pixel_fallback: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRequest {
    /// Session whose photo is the source.
    pub session: String,
    /// Base64 target photo.
    pub photo: String,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub frames: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub model: String,
    pub origin: Origin,
    pub z0: Vec<f32>,
    pub z: Vec<f32>,
    pub steps: usize,
    pub energy: f64,
    pub constraints: usize,
    pub history_len: usize,
    pub next_seq: u64,
    pub projection_loss: Option<f32>,
    pub lambda_s: f32,
    pub created_ms: u64,
    pub updated_ms: u64,
    /// Current frame, base64 PNG.
    pub frame: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub z: Vec<f32>,
    pub energy: f64,
    /// Sequence numbers of the frames streamed by this request.
    pub seqs: Vec<u64>,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateView {
    pub z: Vec<f32>,
    pub energy: f64,
    pub frame: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidatesResponse {
    pub candidates: Vec<CandidateView>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FramesResponse {
    pub frames: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferResponse {
    pub frames: Vec<String>,
    pub generated: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformResponse {
    pub z_a: Vec<f32>,
    pub z_b: Vec<f32>,
    pub frames: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedQuery {
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FramesQuery {
    frames: usize,
}

/// Read-side copy of a session, replaced wholesale after each mutation.
struct View {
    summary: SessionSummary,
    /// Session clone for read-only computations (candidates, interpolation).
    session: Session,
}

struct Slot {
    busy: AtomicBool,
    session: Mutex<Session>,
    view: RwLock<Arc<View>>,
    frames: broadcast::Sender<FrameMessage>,
}

/// Clears the busy flag when the mutation finishes, however it finishes.
struct BusyGuard(Arc<Slot>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

fn summarize(s: &Session) -> Result<SessionSummary> {
    let st: &EditState = &s.state;
    Ok(SessionSummary {
        id: s.record.id.clone(),
        model: s.record.model.clone(),
        origin: s.record.origin,
        z0: st.z0.values().to_vec(),
        z: st.z.values().to_vec(),
        steps: st.steps,
        energy: s.energy,
        constraints: st.constraints.len(),
        history_len: s.history.len(),
        next_seq: s.record.next_seq,
        projection_loss: s.record.projection_loss,
        lambda_s: st.lambda_s,
        created_ms: s.record.created_ms,
        updated_ms: s.record.updated_ms,
        frame: png_base64(&s.frame)?,
    })
}

impl Slot {
    fn new(session: Session) -> Result<Arc<Self>> {
        let view = View {
            summary: summarize(&session)?,
            session: session.clone(),
        };
        Ok(Arc::new(Self {
            busy: AtomicBool::new(false),
            session: Mutex::new(session),
            view: RwLock::new(Arc::new(view)),
            frames: broadcast::channel(256).0,
        }))
    }

    fn view(&self) -> Arc<View> {
        self.view.read().expect("view lock poisoned").clone()
    }

    fn publish(&self, s: &Session) -> Result<()> {
        let view = View {
            summary: summarize(s)?,
            session: s.clone(),
        };
        *self.view.write().expect("view lock poisoned") = Arc::new(view);
        Ok(())
    }
}

/// Shared server state.
pub struct AppState {
    pub settings: Settings,
    pub default_model: String,
    models: BTreeMap<String, Arc<ModelBundle>>,
    store: Option<SessionStore>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    blank_counter: AtomicU64,
}

impl AppState {
    pub fn new(settings: Settings, models: BTreeMap<String, Arc<ModelBundle>>, store: Option<SessionStore>) -> Arc<Self> {
        let default_model = models.keys().next().cloned().unwrap_or_else(|| "default".into());
        Arc::new(Self {
            settings,
            default_model,
            models,
            store,
            sessions: RwLock::new(HashMap::new()),
            blank_counter: AtomicU64::new(0),
        })
    }

    /// Load every configured model bundle.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Arc<Self>> {
        cfg.validate()?;
        let mut models = BTreeMap::new();
        for (id, dir) in &cfg.models {
            log::info!("loading model {id} from {}", dir.display());
            models.insert(id.clone(), Arc::new(ModelBundle::load(dir)?));
        }
        if models.is_empty() {
            return Err(ApiError::Config("no models configured (model.<id> = <bundle dir>)".into()));
        }
        let store = cfg.store_dir.as_ref().map(SessionStore::new).transpose()?;
        let default = cfg.default_model.clone();
        let mut state = Self::new(cfg.settings.clone(), models, store);
        let s = Arc::get_mut(&mut state).expect("fresh state is unshared");
        if s.models.contains_key(&default) {
            s.default_model = default;
        }
        Ok(state)
    }

    fn model(&self, id: &str) -> Result<Arc<ModelBundle>> {
        self.models.get(id).cloned().ok_or_else(|| ApiError::UnknownModel(id.to_string()))
    }

    /// Look up a live session, falling back to the store.
    fn slot(&self, id: &str) -> Result<Arc<Slot>> {
        if let Some(s) = self.sessions.read().expect("session map poisoned").get(id) {
            return Ok(s.clone());
        }
        let store = self.store.as_ref().ok_or_else(|| ApiError::NotFound(id.to_string()))?;
        let (record, history, photo) = store.read(id)?;
        let model = self.model(&record.model)?;
        let session = Session::replay(record, history, photo, model, &self.settings)?;
        let mut map = self.sessions.write().expect("session map poisoned");
        let slot = match map.get(id) {
            Some(s) => s.clone(),
            None => {
                let s = Slot::new(session)?;
                map.insert(id.to_string(), s.clone());
                s
            }
        };
        Ok(slot)
    }

    fn insert(&self, session: Session) -> Result<Arc<Slot>> {
        if let Some(store) = &self.store {
            store.save(&session)?;
        }
        let slot = Slot::new(session)?;
        let id = slot.view().summary.id.clone();
        self.sessions.write().expect("session map poisoned").insert(id, slot.clone());
        Ok(slot)
    }

    /// Subscribe to the frame stream of `id`.
    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<FrameMessage>> {
        Ok(self.slot(id)?.frames.subscribe())
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Join(e.to_string()))?
}

/// Run `f` as the single in-flight mutation of session `id`; a concurrent mutation gets
/// [`ApiError::Busy`]. The session is persisted and republished afterwards.
async fn mutate<T: Send + 'static>(
    app: Arc<AppState>,
    id: String,
    f: impl FnOnce(&mut Session, &broadcast::Sender<FrameMessage>) -> Result<T> + Send + 'static,
) -> Result<T> {
    let slot = app.slot(&id)?;
    if slot.busy.swap(true, Ordering::AcqRel) {
        return Err(ApiError::Busy(id));
    }
    let guard = BusyGuard(slot);
    blocking(move || {
        let slot = &guard.0;
        let mut s = slot.session.lock().expect("session lock poisoned");
        let out = f(&mut s, &slot.frames)?;
        if let Some(store) = &app.store {
            store.save(&s)?;
        }
        slot.publish(&s)?;
        Ok(out)
    })
    .await
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

fn parse_query<T: DeserializeOwned>(q: std::result::Result<Query<T>, axum::extract::rejection::QueryRejection>) -> Result<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::BadRequest(e.body_text()))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<SessionSummary>> {
    let req: CreateSession = if body.is_empty() { CreateSession::default() } else { parse_body(&body)? };
    let model_id = req.model.unwrap_or_else(|| app.default_model.clone());
    let model = app.model(&model_id)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let a = app.clone();
    let session = blocking(move || match req.photo {
        Some(data) => {
            let photo = decode_base64_image(&data)?;
            Session::from_photo(id, model_id, model, photo, &a.settings)
        }
        None => {
            let seed = req
                .seed
                .unwrap_or_else(|| a.settings.blank_seed.wrapping_add(a.blank_counter.fetch_add(1, Ordering::Relaxed)));
            Session::blank(id, model_id, model, seed, &a.settings)
        }
    })
    .await?;
    let slot = app.insert(session)?;
    let summary = slot.view().summary.clone();
    Ok(Json(summary))
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSummary>> {
    Ok(Json(app.slot(&id)?.view().summary.clone()))
}

async fn put_constraints(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<SessionSummary>> {
    let script: EditScript = parse_body(&body)?;
    mutate(app, id, move |s, _| {
        s.set_constraints(script)?;
        summarize(s)
    })
    .await
    .map(Json)
}

async fn step(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<StepResponse>> {
    let req: StepRequest = parse_body(&body)?;
    mutate(app, id, move |s, tx| {
        let mut seqs = Vec::new();
        s.step(req.k, req.lr, &mut |msg| {
            seqs.push(msg.seq);
            // No subscribers is fine.
            let _ = tx.send(msg);
        })?;
        Ok(StepResponse {
            z: s.state.z.values().to_vec(),
            energy: s.energy,
            seqs,
            steps: s.state.steps,
        })
    })
    .await
    .map(Json)
}

async fn select(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<SessionSummary>> {
    let req: SelectRequest = parse_body(&body)?;
    mutate(app, id, move |s, _| {
        s.select(req.z, req.accept)?;
        summarize(s)
    })
    .await
    .map(Json)
}

async fn accept(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSummary>> {
    mutate(app, id, move |s, _| {
        s.accept()?;
        summarize(s)
    })
    .await
    .map(Json)
}

async fn candidates(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: std::result::Result<Query<SeedQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<CandidatesResponse>> {
    let seed = parse_query(q)?.seed;
    let view = app.slot(&id)?.view();
    blocking(move || {
        let candidates = view
            .session
            .candidates(seed)?
            .into_iter()
            .map(|c| {
                Ok(CandidateView {
                    z: c.z.into_values(),
                    energy: c.energy,
                    frame: png_base64(&c.frame)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CandidatesResponse { candidates })
    })
    .await
    .map(Json)
}

async fn interpolation(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    q: std::result::Result<Query<FramesQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<FramesResponse>> {
    let m = parse_query(q)?.frames;
    let view = app.slot(&id)?.view();
    blocking(move || {
        let frames = view.session.interpolation(m)?.iter().map(png_base64).collect::<Result<_>>()?;
        Ok(FramesResponse { frames })
    })
    .await
    .map(Json)
}

async fn transfer(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<TransferResponse>> {
    let req: TransferRequest = if body.is_empty() { TransferRequest::default() } else { parse_body(&body)? };
    let mut cfg = app.settings.transfer;
    if let Some(n) = req.frames {
        cfg.frames = n;
    }
    if let Some(p) = req.pixel_fallback {
        cfg.pixel_fallback = p;
    }
    // Holds the mutation slot so the session cannot step underneath the transfer.
    mutate(app, id, move |s, _| {
        let r = s.transfer(&cfg)?;
        Ok(TransferResponse {
            frames: r.frames.iter().map(png_base64).collect::<Result<_>>()?,
            generated: r.generated.iter().map(png_base64).collect::<Result<_>>()?,
        })
    })
    .await
    .map(Json)
}

async fn transform(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<TransformResponse>> {
    let req: TransformRequest = parse_body(&body)?;
    let mode: TransformMode = match &req.mode {
        Some(m) => m.parse()?,
        None => TransformMode::ShapeAndColor,
    };
    let mut cfg = app.settings.transfer;
    if let Some(n) = req.frames {
        cfg.frames = n;
    }
    let other = decode_base64_image(&req.photo)?;
    mutate(app, req.session, move |s, _| {
        let r = s.transform(&other, mode, &cfg)?;
        Ok(TransformResponse {
            z_a: r.z_a.into_values(),
            z_b: r.z_b.into_values(),
            frames: r.transfer.frames.iter().map(png_base64).collect::<Result<_>>()?,
        })
    })
    .await
    .map(Json)
}

async fn stream(State(app): State<Arc<AppState>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response> {
    let rx = app.subscribe(&id)?;
    Ok(ws.on_upgrade(move |socket| forward_frames(socket, rx)))
}

async fn forward_frames(mut socket: WebSocket, mut rx: broadcast::Receiver<FrameMessage>) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(frame) => {
                    let text = serde_json::to_string(&frame).expect("frames serialize");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                // A slow consumer only ever wants the newest frames.
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("stream skipped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/constraints", post(put_constraints))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/select", post(select))
        .route("/sessions/{id}/accept", post(accept))
        .route("/sessions/{id}/candidates", get(candidates))
        .route("/sessions/{id}/interpolation", get(interpolation))
        .route("/sessions/{id}/transfer", post(transfer))
        .route("/sessions/{id}/stream", get(stream))
        .route("/transform", post(transform))
        .with_state(app)
}
