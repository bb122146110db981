//! HTTP/JSON front end over a single session.
//!
//! Reads take a shared lock; mutations take the write lock briefly. A retrain
//! runs on a blocking thread against a snapshot and is committed when it
//! finishes, so readers see the pre-job state until then. While a job runs,
//! every other mutation answers 409.

mod dto;

pub use dto::{
    ClassDto, EditRequest, ErrorBody, HistoryDto, HistoryItemDto, JobState, JobStatusDto, MoveDto, PointDto,
    RetrainRequest, SessionDto,
};

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::ops::ControlFlow;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{class_heatmap, guide_geometry, importance_scores, DEFAULT_GRID};
use crate::session::{save_session, Session};

/// Error wrapper rendered as `{code, message}`.
#[derive(Debug)]
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self(Error::Input(r.body_text()))
    }
}

fn classify(e: &Error) -> (StatusCode, &'static str) {
    use Error::*;
    match e {
        Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "config"),
        Shape(_) => (StatusCode::UNPROCESSABLE_ENTITY, "shape"),
        Input(_) | Parse { .. } | Schema(_) => (StatusCode::UNPROCESSABLE_ENTITY, "input"),
        Rejected(_) => (StatusCode::UNPROCESSABLE_ENTITY, "rejected"),
        EmptyClass(_) => (StatusCode::UNPROCESSABLE_ENTITY, "empty_class"),
        Precondition(_) => (StatusCode::CONFLICT, "precondition"),
        Busy => (StatusCode::CONFLICT, "busy"),
        NoOp(_) => (StatusCode::CONFLICT, "noop"),
        NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        Divergence { .. } | NonFiniteGradient { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "divergence"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = classify(&self.0);
        let body = ErrorBody {
            code: code.into(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Default)]
struct Jobs {
    next_id: u64,
    running: Option<u64>,
    table: BTreeMap<u64, JobStatusDto>,
}

/// Shared server state.
pub struct AppState {
    session: RwLock<Session>,
    jobs: Mutex<Jobs>,
    persist_dir: Option<PathBuf>,
    cancel: AtomicBool,
}

impl AppState {
    /// `persist_dir`, if set, receives the session after every committed
    /// retrain and on shutdown.
    pub fn new(session: Session, persist_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            session: RwLock::new(session),
            jobs: Mutex::new(Jobs {
                next_id: 1,
                ..Jobs::default()
            }),
            persist_dir,
            cancel: AtomicBool::new(false),
        })
    }

    pub fn session(&self) -> parking_lot::RwLockReadGuard<'_, Session> {
        self.session.read()
    }

    pub fn running_job(&self) -> Option<u64> {
        self.jobs.lock().running
    }

    pub fn job(&self, id: u64) -> Option<JobStatusDto> {
        self.jobs.lock().table.get(&id).cloned()
    }

    /// Asks a running job to stop at the next epoch boundary.
    pub fn cancel_running(&self) {
        self.cancel.store(true, Ordering::SeqCst);
    }

    fn persist(&self) {
        if let Some(dir) = &self.persist_dir {
            if let Err(e) = save_session(&self.session.read(), dir) {
                log::error!("saving session to {} failed: {e}", dir.display());
            }
        }
    }

    /// Runs `f` under the write lock unless a retrain job is active.
    fn mutate<T>(&self, f: impl FnOnce(&mut Session) -> crate::Result<T>) -> Result<T, ApiError> {
        let jobs = self.jobs.lock();
        if jobs.running.is_some() {
            return Err(Error::Busy.into());
        }
        let mut s = self.session.write();
        drop(jobs);
        Ok(f(&mut s)?)
    }
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/session", get(get_session))
        .route("/api/points", get(get_points))
        .route("/api/heatmap", get(get_heatmap))
        .route("/api/guides", get(get_guides))
        .route("/api/edits", post(post_edits))
        .route("/api/undo", post(post_undo))
        .route("/api/redo", post(post_redo))
        .route("/api/history", get(get_history))
        .route("/api/history/{index}/restore", post(post_restore))
        .route("/api/history/{index}/label", post(post_label))
        .route("/api/classes/{class}/visibility", post(post_visibility))
        .route("/api/retrain", post(post_retrain))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/metrics", get(get_metrics))
        .route("/api/reset", post(post_reset))
        .with_state(state)
}

fn session_dto(s: &Session, running_job: Option<u64>) -> SessionDto {
    let ds = s.dataset();
    let m = s.metrics();
    SessionDto {
        items: ds.len(),
        classes: (0..ds.num_classes())
            .map(|c| ClassDto {
                id: c,
                name: ds.class_names[c].clone(),
                color: ds.class_colors[c].clone(),
                visible: s.visibility()[c],
            })
            .collect(),
        checkpoint: s.checkpoint_id(),
        checkpoints: s.checkpoints().len(),
        method: s.layout().method,
        cursor: s.history().cursor(),
        history_len: s.history().len(),
        pending_edits: s.pending_edits().len(),
        accuracy_before: m.accuracy_before,
        accuracy_after: m.accuracy_after,
        running_job,
    }
}

async fn get_session(State(st): State<SharedState>) -> ApiResult<SessionDto> {
    let running = st.running_job();
    Ok(Json(session_dto(&st.session.read(), running)))
}

#[derive(Debug, Default, Deserialize)]
pub struct PointsQuery {
    pub min_importance: Option<f64>,
    pub limit: Option<usize>,
    pub class: Option<usize>,
}

/// Points passing the importance, rank and class filters, in id order.
pub fn points(s: &Session, q: &PointsQuery) -> crate::Result<Vec<PointDto>> {
    let ds = s.dataset();
    let fp = s.forward_all()?;
    let preds = fp.predictions();
    let ranked = importance_scores(&fp.probs.cast::<f64>());
    let mut rank = vec![0usize; ds.len()];
    let mut importance = vec![0.0; ds.len()];
    for (r, &(id, imp)) in ranked.iter().enumerate() {
        rank[id] = r;
        importance[id] = imp;
    }
    let layout = s.layout();
    Ok((0..ds.len())
        .filter(|&i| q.min_importance.is_none_or(|m| importance[i] >= m))
        .filter(|&i| q.limit.is_none_or(|l| rank[i] < l))
        .filter(|&i| q.class.is_none_or(|c| ds.labels[i] == c))
        .map(|i| PointDto {
            id: i,
            x: layout.coords[i][0],
            y: layout.coords[i][1],
            predicted: preds[i],
            label: ds.labels[i],
            importance: importance[i],
            mispredicted: preds[i] != ds.labels[i],
            visible: s.visibility()[ds.labels[i]],
            split: ds.splits[i],
            thumbnail: ds.thumbnails[i].clone(),
        })
        .collect())
}

async fn get_points(State(st): State<SharedState>, Query(q): Query<PointsQuery>) -> ApiResult<Vec<PointDto>> {
    Ok(Json(points(&st.session.read(), &q)?))
}

#[derive(Debug, Deserialize)]
struct HeatmapQuery {
    class: usize,
    grid: Option<usize>,
}

async fn get_heatmap(
    State(st): State<SharedState>,
    Query(q): Query<HeatmapQuery>,
) -> ApiResult<crate::metrics::HeatmapGrid> {
    let s = st.session.read();
    let grid = q.grid.unwrap_or(DEFAULT_GRID);
    if grid == 0 || grid > 512 {
        return Err(Error::Input(format!("grid size {grid} must lie in 1..=512")).into());
    }
    Ok(Json(class_heatmap(s.layout(), &s.dataset().labels, q.class, grid, None)?))
}

async fn get_guides(State(st): State<SharedState>) -> ApiResult<Vec<crate::metrics::GuideCircle>> {
    let s = st.session.read();
    Ok(Json(guide_geometry(s.layout(), &s.dataset().labels, s.dataset().num_classes())?))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CursorDto {
    pub cursor: usize,
    /// History index of the new entry, absent for an empty edit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

fn now() -> Option<u64> {
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

async fn post_edits(
    State(st): State<SharedState>,
    body: Result<Json<EditRequest>, JsonRejection>,
) -> ApiResult<CursorDto> {
    let Json(req) = body?;
    let tx = req.into_transaction(now());
    let index = st.mutate(|s| s.apply_edits(tx))?;
    Ok(Json(CursorDto {
        cursor: st.session.read().history().cursor(),
        index,
    }))
}

fn cursor_of(st: &AppState) -> Json<CursorDto> {
    Json(CursorDto {
        cursor: st.session.read().history().cursor(),
        index: None,
    })
}

async fn post_undo(State(st): State<SharedState>) -> ApiResult<CursorDto> {
    st.mutate(Session::undo)?;
    Ok(cursor_of(&st))
}

async fn post_redo(State(st): State<SharedState>) -> ApiResult<CursorDto> {
    st.mutate(Session::redo)?;
    Ok(cursor_of(&st))
}

async fn post_reset(State(st): State<SharedState>) -> ApiResult<CursorDto> {
    st.mutate(Session::reset)?;
    Ok(cursor_of(&st))
}

async fn post_restore(State(st): State<SharedState>, Path(index): Path<usize>) -> ApiResult<CursorDto> {
    st.mutate(|s| s.restore(index))?;
    Ok(cursor_of(&st))
}

#[derive(Debug, Deserialize)]
struct LabelRequest {
    label: Option<String>,
}

async fn post_label(
    State(st): State<SharedState>,
    Path(index): Path<usize>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<CursorDto> {
    let Json(req) = body?;
    st.mutate(|s| s.set_label(index, req.label))?;
    Ok(cursor_of(&st))
}

#[derive(Debug, Deserialize)]
struct VisibilityRequest {
    visible: bool,
}

async fn post_visibility(
    State(st): State<SharedState>,
    Path(class): Path<usize>,
    body: Result<Json<VisibilityRequest>, JsonRejection>,
) -> ApiResult<SessionDto> {
    let Json(req) = body?;
    let mut s = st.session.write();
    s.set_visibility(class, req.visible)?;
    Ok(Json(session_dto(&s, st.running_job())))
}

async fn get_history(State(st): State<SharedState>) -> ApiResult<HistoryDto> {
    let s = st.session.read();
    let h = s.history();
    Ok(Json(HistoryDto {
        cursor: h.cursor(),
        entries: h
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| HistoryItemDto::new(i, e, h.cursor()))
            .collect(),
    }))
}

async fn get_metrics(State(st): State<SharedState>) -> ApiResult<crate::metrics::MetricsReport> {
    Ok(Json(st.session.read().metrics().clone()))
}

async fn get_job(State(st): State<SharedState>, Path(id): Path<u64>) -> ApiResult<JobStatusDto> {
    st.job(id)
        .map(Json)
        .ok_or_else(|| Error::NotFound(format!("job {id}")).into())
}

async fn post_retrain(
    State(st): State<SharedState>,
    body: Result<Json<RetrainRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<JobStatusDto>), ApiError> {
    let Json(req) = body?;
    let config = req.into_config();
    let (id, job) = {
        let mut jobs = st.jobs.lock();
        if jobs.running.is_some() {
            return Err(Error::Busy.into());
        }
        let job = st.session.read().prepare_retrain(&config)?;
        let id = jobs.next_id;
        jobs.next_id += 1;
        jobs.running = Some(id);
        jobs.table.insert(
            id,
            JobStatusDto {
                id,
                state: JobState::Pending,
                epoch: 0,
                epochs: config.epochs,
                micro_f1: Vec::new(),
                loss_dis: Vec::new(),
                checkpoint: None,
                error: None,
            },
        );
        st.cancel.store(false, Ordering::SeqCst);
        (id, job)
    };
    let status = st.job(id).expect("inserted above");
    let worker = Arc::clone(&st);
    tokio::task::spawn_blocking(move || run_job(&worker, id, job));
    Ok((StatusCode::ACCEPTED, Json(status)))
}

fn run_job(st: &AppState, id: u64, job: crate::session::RetrainJob) {
    let update = |f: &mut dyn FnMut(&mut JobStatusDto)| {
        if let Some(j) = st.jobs.lock().table.get_mut(&id) {
            f(j);
        }
    };
    update(&mut |j| j.state = JobState::Running);
    let outcome = job.run(|e| {
        update(&mut |j| {
            j.epoch = e.epoch;
            j.micro_f1.extend(e.val_micro_f1);
            j.loss_dis.push(e.loss_dis);
        });
        if st.cancel.load(Ordering::SeqCst) {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    let committed = outcome.and_then(|r| st.session.write().commit_retrain(r));
    let mut jobs = st.jobs.lock();
    if let Some(j) = jobs.table.get_mut(&id) {
        match &committed {
            Ok(ckpt) => {
                j.state = JobState::Done;
                j.checkpoint = Some(*ckpt);
            }
            Err(e) => {
                j.state = JobState::Failed;
                j.error = Some(e.to_string());
            }
        }
    }
    jobs.running = None;
    drop(jobs);
    if committed.is_ok() {
        st.persist();
    }
}

/// Serves the API until ctrl-c, then stops any running job and saves the session.
pub async fn serve(state: SharedState, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    let app = router(Arc::clone(&state));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.cancel_running();
    while state.running_job().is_some() {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    state.persist();
    Ok(())
}
