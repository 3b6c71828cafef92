//! Session-based HTTP API for eliciting a person's utility.
//!
//! Every mutation is an event appended to `<data dir>/<id>.jsonl` before it
//! is applied in memory; on startup the logs are replayed. Mutations of one
//! session serialize through its write lock.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use elicit_core::bounds::{BoundReport, Lambda};
use elicit_core::design::{multi_round_step, DesignState, QueryKind, Round};
use elicit_core::lottery::{Choice, ComparisonRecord, Lottery};
use elicit_core::mle::{optimal_set_band, solve_mle, MleProblem, MleSolution, MleStatus};
use elicit_core::utility::{Shape, StructureLevel};
use elicit_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use crate::analysis::{bounds_for, recommend, Recommendation};
use crate::error::AppError;
use crate::io::{format_money, parse_money, parse_scenarios, DatasetFile, WireLottery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub lipschitz: f64,
    pub cbar: f64,
    /// Largest payoff, as a decimal string.
    pub upper: String,
    pub delta: f64,
    pub structure: Shape,
    /// New breakpoints are rounded to multiples of this amount.
    pub payoff_quantum: String,
    /// Probability mass moved by each designed query.
    pub scale: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            lipschitz: 10.0,
            cbar: 100.0,
            upper: "100000".into(),
            delta: 0.05,
            structure: Shape::Full,
            payoff_quantum: "100".into(),
            scale: 0.5,
        }
    }
}

impl SessionConfig {
    /// Field-level problems, empty when the configuration is usable.
    pub fn problems(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let mut bad = |k: &str, m: &str| {
            out.insert(k.to_string(), m.to_string());
        };
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            bad("lipschitz", "must be positive");
        }
        if !(self.cbar > 0.0 && self.cbar.is_finite()) {
            bad("cbar", "must be positive");
        }
        match parse_money(&self.upper) {
            Ok(u) if u > 0.0 => {
                if self.structure == Shape::Full && self.lipschitz * u <= 1.0 {
                    bad("lipschitz", "lipschitz * upper must exceed 1");
                }
            }
            _ => bad("upper", "must be a positive decimal amount"),
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad("delta", "must lie in (0, 1)");
        }
        if !matches!(parse_money(&self.payoff_quantum), Ok(q) if q > 0.0) {
            bad("payoff_quantum", "must be a positive decimal amount");
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            bad("scale", "must lie in (0, 1]");
        }
        out
    }

    fn level(&self) -> StructureLevel {
        StructureLevel {
            shape: self.structure,
            lipschitz: self.lipschitz,
            cbar: self.cbar,
            unstructured_bound: StructureLevel::DEFAULT_UNSTRUCTURED_BOUND,
        }
    }

    fn upper_value(&self) -> f64 {
        parse_money(&self.upper).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { id: String, created_at: u64, config: SessionConfig },
    RoundIssued { round: Round },
    Answered { query_id: usize, z: Choice },
    Estimated { answered: usize, solution: MleSolution },
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Collecting,
    Estimated,
    Closed,
}

#[derive(Debug, Clone)]
struct IssuedQuery {
    round: usize,
    kind: QueryKind,
    w: Lottery,
    y: Lottery,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    created_at: u64,
    config: SessionConfig,
    design: DesignState,
    queries: Vec<IssuedQuery>,
    answers: Vec<Option<Choice>>,
    /// Query ids in the order they were answered.
    answer_order: Vec<usize>,
    estimate: Option<(usize, MleSolution)>,
    status: SessionStatus,
}

impl Session {
    fn from_created(event: &Event) -> Result<Self, AppError> {
        let Event::Created { id, created_at, config } = event else {
            return Err(AppError::Invalid("event log must start with a creation event".into()));
        };
        let quantum = parse_money(&config.payoff_quantum)?;
        let design = DesignState::new(config.upper_value(), quantum, config.scale)?;
        Ok(Self {
            id: id.clone(),
            created_at: *created_at,
            config: config.clone(),
            design,
            queries: Vec::new(),
            answers: Vec::new(),
            answer_order: Vec::new(),
            estimate: None,
            status: SessionStatus::Collecting,
        })
    }

    fn apply(&mut self, event: &Event) -> Result<(), AppError> {
        match event {
            Event::Created { .. } => return Err(AppError::Invalid("duplicate creation event".into())),
            Event::RoundIssued { round } => {
                let mut next = self.design.clone();
                let expect = multi_round_step(&mut next)?;
                if &expect != round {
                    return Err(AppError::Invalid(format!("round {} in the log does not match the design", round.round)));
                }
                self.design = next;
                for q in &round.queries {
                    self.queries.push(IssuedQuery { round: round.round, kind: q.kind, w: q.w.clone(), y: q.y.clone() });
                    self.answers.push(None);
                }
            }
            Event::Answered { query_id, z } => {
                let slot = self.answers.get_mut(*query_id).ok_or_else(|| AppError::Invalid(format!("answer to unknown query {query_id}")))?;
                if slot.is_some() {
                    return Err(AppError::Invalid(format!("query {query_id} answered twice")));
                }
                *slot = Some(*z);
                self.answer_order.push(*query_id);
                self.status = SessionStatus::Collecting;
            }
            Event::Estimated { answered, solution } => {
                self.estimate = Some((*answered, solution.clone()));
                self.status = SessionStatus::Estimated;
            }
            Event::Closed => self.status = SessionStatus::Closed,
        }
        Ok(())
    }

    fn records(&self) -> Vec<ComparisonRecord> {
        self.answer_order
            .iter()
            .map(|&i| {
                let q = &self.queries[i];
                ComparisonRecord { w: q.w.clone(), y: q.y.clone(), z: self.answers[i].expect("answered") }
            })
            .collect()
    }

    pub fn dataset(&self) -> DatasetFile {
        DatasetFile { grid: self.design.grid().clone(), records: self.records(), seed: None, sigma_star: None }
    }

    fn query_view(&self, id: usize) -> QueryView {
        let q = &self.queries[id];
        QueryView {
            status: "query",
            query: Some(WireQuery { id, round: q.round, kind: q.kind, w: WireLottery::from(&q.w), y: WireLottery::from(&q.y) }),
            answered: self.answer_order.len(),
            issued: self.queries.len(),
        }
    }

    fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            created_at: self.created_at,
            status: self.status,
            config: self.config.clone(),
            rounds: self.design.rounds(),
            grid: self.design.grid().points().iter().map(|y| format_money(*y)).collect(),
            issued: self.queries.len(),
            answered: self.answer_order.len(),
            estimate: self.estimate.as_ref().map(|(n, s)| estimate_view(*n, s, self.config.delta)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireQuery {
    pub id: usize,
    pub round: usize,
    pub kind: QueryKind,
    pub w: WireLottery,
    pub y: WireLottery,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct QueryView {
    /// `query` or `design_complete`.
    pub status: &'static str,
    pub query: Option<WireQuery>,
    pub answered: usize,
    pub issued: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolyPoint {
    pub y: String,
    pub u: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimateView {
    pub answered: usize,
    pub status: MleStatus,
    pub gamma_star: f64,
    pub gamma_zero_tol: f64,
    pub sigma_hat: Option<f64>,
    pub loglik: f64,
    pub rank: usize,
    pub dim: usize,
    pub lambda_min: f64,
    /// Estimated utility at the breakpoints.
    pub utility: Option<Vec<PolyPoint>>,
    /// Pointwise largest utility consistent with the estimate.
    pub band_upper: Option<Vec<PolyPoint>>,
    pub bounds: Option<BoundReport>,
}

fn estimate_view(answered: usize, s: &MleSolution, delta: f64) -> EstimateView {
    let poly = |pts: Vec<(f64, f64)>| pts.into_iter().map(|(y, u)| PolyPoint { y: format_money(y), u }).collect();
    let utility = s.alpha_hat.as_ref().map(|a| poly(s.grid.points().iter().copied().zip(a.iter().copied()).collect()));
    let band_upper = optimal_set_band(s).and_then(|b| b.upper_polyline()).ok().map(poly);
    EstimateView {
        answered,
        status: s.status,
        gamma_star: s.gamma_star,
        gamma_zero_tol: s.gamma_zero_tol,
        sigma_hat: s.sigma_hat,
        loglik: s.loglik,
        rank: s.spectrum.rank,
        dim: s.spectrum.dim,
        lambda_min: s.spectrum.lambda_min,
        utility,
        band_upper,
        bounds: bounds_for(s, delta, Lambda::Auto).ok(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionView {
    pub id: String,
    pub created_at: u64,
    pub status: SessionStatus,
    pub config: SessionConfig,
    pub rounds: usize,
    pub grid: Vec<String>,
    pub issued: usize,
    pub answered: usize,
    pub estimate: Option<EstimateView>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChoiceRequest {
    pub query_id: usize,
    pub z: Choice,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChoiceAck {
    pub query_id: usize,
    pub z: Choice,
    /// True when the same answer had already been recorded.
    pub duplicate: bool,
    pub answered: usize,
    pub issued: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecommendRequest {
    /// Scenario CSV with header `asset_0,...,asset_S`.
    pub scenarios_csv: String,
    pub budget: String,
    /// One cap per risky asset, or a single cap for all.
    pub caps: Vec<f64>,
}

/// JSON error body with an HTTP status.
#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Unprocessable { message: String, fields: BTreeMap<String, String> },
    Internal(String),
}

impl ApiError {
    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError::Unprocessable { message: message.into(), fields: BTreeMap::new() }
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        match e {
            AppError::Io(e) => ApiError::Internal(e.to_string()),
            other => ApiError::unprocessable(other.to_string()),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        ApiError::from(AppError::Core(e))
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::unprocessable(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, kind, message, fields) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m, None),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "conflict", m, None),
            ApiError::Unprocessable { message, fields } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid", message, (!fields.is_empty()).then_some(fields))
            }
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m, None),
        };
        let body = serde_json::json!({ "error": kind, "message": message, "fields": fields });
        (code, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// All sessions plus the directory their logs live in (none keeps them in
/// memory only).
pub struct Store {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<RwLock<Session>>>>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self { dir: None, sessions: RwLock::new(HashMap::new()) }
    }

    /// Opens `dir`, replaying every `*.jsonl` session log in it.
    pub fn open(dir: &FsPath) -> Result<Self, AppError> {
        fs::create_dir_all(dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> =
            fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "jsonl")).collect();
        paths.sort();
        for path in paths {
            let s = replay(&path)?;
            sessions.insert(s.id.clone(), Arc::new(RwLock::new(s)));
        }
        Ok(Self { dir: Some(dir.to_path_buf()), sessions: RwLock::new(sessions) })
    }

    fn append(&self, id: &str, event: &Event) -> Result<(), AppError> {
        if let Some(dir) = &self.dir {
            let mut f = fs::OpenOptions::new().create(true).append(true).open(dir.join(format!("{id}.jsonl")))?;
            let mut line = serde_json::to_vec(event)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        Ok(())
    }

    /// Persists then applies.
    fn commit(&self, session: &mut Session, event: Event) -> Result<(), AppError> {
        let mut next = session.clone();
        next.apply(&event)?;
        self.append(&session.id, &event)?;
        *session = next;
        Ok(())
    }

    async fn get(&self, id: &str) -> ApiResult<Arc<RwLock<Session>>> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
    }

    pub async fn len(&self) -> usize {
        self.sessions.read().await.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.sessions.read().await.is_empty()
    }
}

/// Rebuilds a session from its event log.
pub fn replay(path: &FsPath) -> Result<Session, AppError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut session: Option<Session> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line)?;
        match session.as_mut() {
            None => session = Some(Session::from_created(&event)?),
            Some(s) => s.apply(&event)?,
        }
    }
    session.ok_or_else(|| AppError::Invalid(format!("{} is empty", path.display())))
}

fn ensure_open(s: &Session) -> ApiResult<()> {
    if s.status == SessionStatus::Closed {
        return Err(ApiError::Conflict("session is closed".into()));
    }
    Ok(())
}

fn issue_round(store: &Store, s: &mut Session) -> ApiResult<bool> {
    let mut next = s.design.clone();
    match multi_round_step(&mut next) {
        Ok(round) => {
            store.commit(s, Event::RoundIssued { round })?;
            Ok(true)
        }
        Err(CoreError::DesignComplete) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

async fn create(State(store): State<Arc<Store>>, body: Result<Json<SessionConfig>, JsonRejection>) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let Json(config) = body?;
    let fields = config.problems();
    if !fields.is_empty() {
        return Err(ApiError::Unprocessable { message: "invalid session configuration".into(), fields });
    }
    let id = uuid::Uuid::new_v4().to_string();
    let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let created = Event::Created { id: id.clone(), created_at, config };
    let mut session = Session::from_created(&created)?;
    store.append(&id, &created)?;
    issue_round(&store, &mut session)?;
    let view = session.view();
    store.sessions.write().await.insert(id, Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn show(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let s = store.get(&id).await?;
    let s = s.read().await;
    Ok(Json(s.view()))
}

async fn dataset(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<DatasetFile>> {
    let s = store.get(&id).await?;
    let s = s.read().await;
    Ok(Json(s.dataset()))
}

async fn next_query(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<QueryView>> {
    let s = store.get(&id).await?;
    let mut s = s.write().await;
    ensure_open(&s)?;
    if let Some(i) = s.answers.iter().position(Option::is_none) {
        return Ok(Json(s.query_view(i)));
    }
    if issue_round(&store, &mut s)? {
        let i = s.answers.iter().position(Option::is_none).expect("new round has queries");
        return Ok(Json(s.query_view(i)));
    }
    Ok(Json(QueryView { status: "design_complete", query: None, answered: s.answer_order.len(), issued: s.queries.len() }))
}

async fn submit_choice(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Result<Json<ChoiceRequest>, JsonRejection>,
) -> ApiResult<Json<ChoiceAck>> {
    let Json(req) = body?;
    let s = store.get(&id).await?;
    let mut s = s.write().await;
    ensure_open(&s)?;
    let slot = *s.answers.get(req.query_id).ok_or_else(|| ApiError::NotFound(format!("query {} was not issued", req.query_id)))?;
    let duplicate = match slot {
        Some(z) if z == req.z => true,
        Some(z) => return Err(ApiError::Conflict(format!("query {} was already answered with {z}", req.query_id))),
        None => {
            store.commit(&mut s, Event::Answered { query_id: req.query_id, z: req.z })?;
            false
        }
    };
    Ok(Json(ChoiceAck { query_id: req.query_id, z: req.z, duplicate, answered: s.answer_order.len(), issued: s.queries.len() }))
}

async fn estimate(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<EstimateView>> {
    let s = store.get(&id).await?;
    let mut s = s.write().await;
    ensure_open(&s)?;
    let answered = s.answer_order.len();
    if answered == 0 {
        return Err(ApiError::Conflict("no answered queries to estimate from".into()));
    }
    if let Some((n, sol)) = &s.estimate {
        if *n == answered {
            return Ok(Json(estimate_view(*n, sol, s.config.delta)));
        }
    }
    let data = s.records();
    let grid = s.design.grid().clone();
    let level = s.config.level();
    // The session stays locked while the solve runs elsewhere.
    let solution = tokio::task::spawn_blocking(move || solve_mle(&MleProblem::new(grid, &data, level)?))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    store.commit(&mut s, Event::Estimated { answered, solution: solution.clone() })?;
    Ok(Json(estimate_view(answered, &solution, s.config.delta)))
}

/// Caps as given, or one cap repeated for every risky asset.
pub fn broadcast_caps(caps: &[f64], assets: usize) -> Result<Vec<f64>, AppError> {
    match caps.len() {
        1 => Ok(vec![caps[0]; assets]),
        n if n == assets => Ok(caps.to_vec()),
        n => Err(AppError::Invalid(format!("{n} caps given for {assets} risky assets"))),
    }
}

async fn recommend_handler(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Result<Json<RecommendRequest>, JsonRejection>,
) -> ApiResult<Json<Recommendation>> {
    let Json(req) = body?;
    let s = store.get(&id).await?;
    let s = s.read().await;
    ensure_open(&s)?;
    let Some((_, solution)) = &s.estimate else {
        return Err(ApiError::Conflict("no estimate yet: answer queries and POST /estimate first".into()));
    };
    if !matches!(solution.status, MleStatus::Unique | MleStatus::SeparationAtBound) {
        return Err(ApiError::Conflict(format!(
            "estimate status is {:?}; the answers do not pin down a utility, so collect more answers and estimate again",
            solution.status
        )));
    }
    let scenarios = parse_scenarios(req.scenarios_csv.as_bytes())?;
    let assets = scenarios[0].len() - 1;
    let caps = broadcast_caps(&req.caps, assets)?;
    let budget = parse_money(&req.budget)?;
    Ok(Json(recommend(solution, scenarios, budget, caps, s.config.delta)?))
}

async fn close(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let s = store.get(&id).await?;
    let mut s = s.write().await;
    ensure_open(&s)?;
    store.commit(&mut s, Event::Closed)?;
    Ok(Json(s.view()))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/choices", post(submit_choice))
        .route("/sessions/{id}/estimate", post(estimate))
        .route("/sessions/{id}/recommend", post(recommend_handler))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/dataset", get(dataset))
        .with_state(store)
}

/// Serves the API on `addr` until the process stops.
pub async fn serve(addr: &str, data_dir: &FsPath) -> Result<(), AppError> {
    let store = Arc::new(Store::open(data_dir)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {} with {} stored sessions", listener.local_addr()?, store.len().await);
    axum::serve(listener, router(store)).await?;
    Ok(())
}
