use std::collections::BTreeSet;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use catforge_core::{CategoryHierarchy, EntitySetInput};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::decisions::{DecisionRecord, SuggestionRef, Verdict};
use crate::error::ServiceError;
use crate::state::AppState;

pub const EDITOR_HEADER: &str = "x-editor-id";
const SIBLING_PREVIEW: usize = 10;
const MEMBER_SAMPLE: usize = 10;
const BREADCRUMB_DEPTH: usize = 12;

pub fn router(state: AppState) -> Router {
    let ui = state.config().ui_dir.clone();
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/suggest", post(suggest))
        .route("/api/decisions", post(decide).get(list_decisions))
        .route("/api/category/{id}", get(category))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

#[derive(Debug, Serialize)]
struct Health {
    service: &'static str,
    version: &'static str,
    snapshot_version: u64,
    index_stale: bool,
    categories: usize,
    entities: usize,
    decisions: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let snap = state.snapshot();
    Json(Health {
        service: "catforge",
        version: env!("CARGO_PKG_VERSION"),
        snapshot_version: snap.version,
        index_stale: snap.is_stale(),
        categories: snap.hierarchy.num_categories(),
        entities: snap.hierarchy.num_entities(),
        decisions: state.records().await.len(),
    })
}

#[derive(Debug, Deserialize)]
struct SuggestRequest {
    #[serde(default)]
    case_id: Option<String>,
    entities: Vec<String>,
    #[serde(default)]
    page_title: String,
    #[serde(default)]
    context: String,
    #[serde(default)]
    page_categories: BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CategoryRef {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SuggestionItem {
    pub rank: usize,
    pub label: String,
    pub parent_id: String,
    pub parent_label: String,
    pub score: f64,
    /// Path from a root down to the parent.
    pub breadcrumb: Vec<CategoryRef>,
    /// Existing children of the parent.
    pub siblings: Vec<CategoryRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SuggestResponse {
    pub case_id: String,
    pub snapshot_version: u64,
    pub suggestions: Vec<SuggestionItem>,
    pub notes: Vec<String>,
}

fn cat_ref(h: &CategoryHierarchy, id: &str) -> Option<CategoryRef> {
    h.category(id).map(|c| CategoryRef {
        id: c.id.clone(),
        label: c.label.clone(),
    })
}

fn breadcrumb(h: &CategoryHierarchy, id: &str) -> Vec<CategoryRef> {
    let mut path = Vec::new();
    let mut seen = BTreeSet::new();
    let mut cur = Some(id.to_string());
    while let Some(c) = cur.filter(|c| seen.insert(c.clone()) && path.len() < BREADCRUMB_DEPTH) {
        path.extend(cat_ref(h, &c));
        cur = h.largest_parent(&c).ok().flatten().map(|p| p.id.clone());
    }
    path.reverse();
    path
}

async fn suggest(
    State(state): State<AppState>,
    payload: Result<Json<SuggestRequest>, JsonRejection>,
) -> Result<Json<SuggestResponse>, ServiceError> {
    let req = body(payload)?;
    if req.entities.is_empty() {
        return Err(ServiceError::BadRequest("entity list must not be empty".into()));
    }
    let snap = state.snapshot();
    let input = EntitySetInput {
        case_id: req.case_id.unwrap_or_else(|| "request".into()),
        entity_ids: req.entities,
        page_title: req.page_title,
        context_text: req.context,
        page_categories: req.page_categories,
    };
    let engine = snap.engine.clone();
    let out = tokio::task::spawn_blocking(move || engine.suggest(&input, &[]))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;

    let h = &snap.hierarchy;
    let suggestions = out
        .ranked
        .suggestions
        .iter()
        .filter(|s| h.contains_category(&s.parent_id) && !h.has_child_label(&s.parent_id, &s.label))
        .enumerate()
        .map(|(i, s)| SuggestionItem {
            rank: i + 1,
            label: s.label.clone(),
            parent_id: s.parent_id.clone(),
            parent_label: s.parent_label.clone(),
            score: s.score,
            breadcrumb: breadcrumb(h, &s.parent_id),
            siblings: h
                .children(&s.parent_id)
                .iter()
                .filter_map(|c| cat_ref(h, c))
                .take(SIBLING_PREVIEW)
                .collect(),
        })
        .collect();
    Ok(Json(SuggestResponse {
        case_id: out.case_id,
        snapshot_version: snap.version,
        suggestions,
        notes: out.ranked.notes,
    }))
}

#[derive(Debug, Deserialize)]
struct DecisionRequest {
    suggestion: SuggestionRef,
    verdict: Verdict,
}

async fn decide(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<DecisionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<DecisionRecord>), ServiceError> {
    let req = body(payload)?;
    let editor = headers
        .get(EDITOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty())
        .unwrap_or("anonymous")
        .to_string();
    let record = state.decide(req.suggestion, req.verdict, editor).await?;
    let status = if record.category_id.is_some() {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(record)))
}

async fn list_decisions(State(state): State<AppState>) -> Json<Vec<DecisionRecord>> {
    Json(state.records().await)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CategoryView {
    pub id: String,
    pub label: String,
    pub parents: Vec<CategoryRef>,
    pub children: Vec<CategoryRef>,
    pub member_count: usize,
    pub member_sample: Vec<CategoryRef>,
}

async fn category(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<CategoryView>, ServiceError> {
    let snap = state.snapshot();
    let h = &snap.hierarchy;
    let c = h
        .category(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("category `{id}`")))?;
    Ok(Json(CategoryView {
        id: c.id.clone(),
        label: c.label.clone(),
        parents: c.parent_ids.iter().filter_map(|p| cat_ref(h, p)).collect(),
        children: h.children(&id).iter().filter_map(|k| cat_ref(h, k)).collect(),
        member_count: c.member_ids.len(),
        member_sample: c
            .member_ids
            .iter()
            .filter_map(|e| h.entity(e))
            .take(MEMBER_SAMPLE)
            .map(|e| CategoryRef {
                id: e.id.clone(),
                label: e.label.clone(),
            })
            .collect(),
    }))
}
