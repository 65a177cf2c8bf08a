//! HTTP API under `/api/v1`. Request and response bodies are JSON text.
//!
//! In virtual-clock mode the `x-civicbin-now-ms` request header supplies the
//! instant a command executes at.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::service::{ServiceError, ServiceHandle};
use super::{CentralError, CitizenRegistration, ComplaintSubmission, Selector, Topology};
use crate::canonical;
use crate::domain::{ComplaintId, CrewId, Millis};
use crate::gateway::BatchReport;
use crate::sensing::StationObservation;

pub const CLOCK_HEADER: &str = "x-civicbin-now-ms";

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    message: String,
}

pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn malformed(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: code.to_owned(),
            message: message.into(),
        }
    }
}

impl From<CentralError> for ApiError {
    fn from(e: CentralError) -> Self {
        use CentralError as E;
        let status = match &e {
            E::DuplicateNid(_) | E::InvalidTransition(_) | E::WrongCrew { .. } => StatusCode::CONFLICT,
            E::Format(_)
            | E::MalformedBatch(_)
            | E::MalformedObservation(_)
            | E::MissingPhoto
            | E::InvalidTopology(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::UnknownZone(_)
            | E::UnknownStation(_)
            | E::UnknownCitizen(_)
            | E::UnknownComplaint(_)
            | E::UnknownCrew(_)
            | E::UnknownNotification(_) => StatusCode::NOT_FOUND,
            E::UnknownSelector(_) => StatusCode::BAD_REQUEST,
            E::Replay(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            code: e.code().to_owned(),
            message: e.to_string(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "unavailable".into(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(
            self.status,
            &ErrorBody {
                error: self.code,
                message: self.message,
            },
        )
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let text = canonical::to_canonical_string(body).expect("response serializes");
    (status, [("content-type", "application/json")], text).into_response()
}

fn parse<T: DeserializeOwned>(body: &str, code: &str) -> Result<T, ApiError> {
    serde_json::from_str(body).map_err(|e| ApiError::malformed(code, e.to_string()))
}

fn request_time(svc: &ServiceHandle, headers: &HeaderMap) -> Result<Millis, ApiError> {
    let requested = match headers.get(CLOCK_HEADER) {
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse::<Millis>().ok())
                .ok_or_else(|| ApiError::malformed("bad_clock", format!("{CLOCK_HEADER} must be an integer")))?,
        ),
        None => None,
    };
    Ok(svc.now(requested))
}

type ApiResult = Result<Response, ApiError>;

pub fn router(svc: ServiceHandle) -> Router {
    Router::new()
        .route("/api/v1/topology", post(provision))
        .route("/api/v1/reports", post(ingest_report))
        .route("/api/v1/observations", post(ingest_observation))
        .route("/api/v1/citizens", post(register_citizen))
        .route("/api/v1/complaints", post(submit_complaint).get(list("complaints")))
        .route("/api/v1/complaints/{id}/dispatch", post(dispatch))
        .route("/api/v1/complaints/{id}/resolve", post(resolve))
        .route("/api/v1/sla/sweep", post(sla_sweep))
        .route("/api/v1/bins", get(list("bins")))
        .route("/api/v1/stations", get(list("stations")))
        .route("/api/v1/alerts", get(list("alerts")))
        .route("/api/v1/notifications", get(list("notifications")))
        .route("/api/v1/events", get(events))
        .with_state(svc)
}

fn list(
    selector: &'static str,
) -> impl Fn(State<ServiceHandle>) -> std::future::Ready<Response> + Clone + Send + Sync + 'static {
    move |State(svc): State<ServiceHandle>| {
        let sel: Selector = selector.parse().expect("static selector");
        std::future::ready(json_response(StatusCode::OK, &svc.snapshot(&sel)))
    }
}

async fn provision(State(svc): State<ServiceHandle>, headers: HeaderMap, body: String) -> ApiResult {
    let topology: Topology = parse(&body, "invalid_topology")?;
    let now = request_time(&svc, &headers)?;
    svc.call(move |c| c.provision(topology, now)).await??;
    let snap = svc.snapshot(&Selector::Bins);
    Ok(json_response(StatusCode::OK, &serde_json::json!({ "seq": snap.seq })))
}

async fn ingest_report(State(svc): State<ServiceHandle>, headers: HeaderMap, body: String) -> ApiResult {
    let batch = BatchReport::from_wire(&body).map_err(CentralError::from)?;
    let now = request_time(&svc, &headers)?;
    let res = svc.call(move |c| c.ingest_batch(&batch, now)).await??;
    Ok(json_response(StatusCode::OK, &res))
}

async fn ingest_observation(State(svc): State<ServiceHandle>, headers: HeaderMap, body: String) -> ApiResult {
    let obs: StationObservation = parse(&body, "malformed_observation")?;
    let now = request_time(&svc, &headers)?;
    let alerts = svc.call(move |c| c.ingest_station_observation(&obs, now)).await??;
    Ok(json_response(StatusCode::OK, &serde_json::json!({ "alerts_raised": alerts })))
}

async fn register_citizen(State(svc): State<ServiceHandle>, headers: HeaderMap, body: String) -> ApiResult {
    let req: CitizenRegistration = parse(&body, "format_error")?;
    let now = request_time(&svc, &headers)?;
    let citizen = svc
        .call(move |c| c.register_citizen(&req.nid, &req.name, &req.phone, now))
        .await??;
    Ok(json_response(StatusCode::CREATED, &citizen))
}

async fn submit_complaint(State(svc): State<ServiceHandle>, headers: HeaderMap, body: String) -> ApiResult {
    let req: ComplaintSubmission = parse(&body, "malformed_complaint")?;
    let now = request_time(&svc, &headers)?;
    let complaint = svc.call(move |c| c.submit_complaint(&req, now)).await??;
    Ok(json_response(StatusCode::CREATED, &complaint))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CrewBody {
    crew_id: CrewId,
}

async fn dispatch(
    State(svc): State<ServiceHandle>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: String,
) -> ApiResult {
    let req: CrewBody = parse(&body, "malformed_request")?;
    let now = request_time(&svc, &headers)?;
    let id = ComplaintId::new(id);
    let complaint = svc
        .call(move |c| c.dispatch_complaint(&id, &req.crew_id, now))
        .await??;
    Ok(json_response(StatusCode::OK, &complaint))
}

async fn resolve(
    State(svc): State<ServiceHandle>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: String,
) -> ApiResult {
    let req: CrewBody = parse(&body, "malformed_request")?;
    let now = request_time(&svc, &headers)?;
    let id = ComplaintId::new(id);
    let complaint = svc
        .call(move |c| c.resolve_complaint(&id, &req.crew_id, now))
        .await??;
    Ok(json_response(StatusCode::OK, &complaint))
}

async fn sla_sweep(State(svc): State<ServiceHandle>, headers: HeaderMap) -> ApiResult {
    let now = request_time(&svc, &headers)?;
    let alerts = svc.call(move |c| c.sla_sweep(now)).await?;
    Ok(json_response(StatusCode::OK, &serde_json::json!({ "breaches": alerts })))
}

#[derive(Deserialize)]
struct SinceQuery {
    since: Option<u64>,
}

/// Server-sent events, one StateEvent per message with `id` = seq. Resumes
/// after `since` or the `Last-Event-ID` header, whichever is given (the
/// header wins).
async fn events(
    State(svc): State<ServiceHandle>,
    Query(q): Query<SinceQuery>,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let from_header = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|s| s.trim().parse::<u64>().ok());
    let since = from_header.or(q.since).unwrap_or(0);
    Sse::new(event_stream(svc, since)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

pub fn event_stream(svc: ServiceHandle, since: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    let head = svc.head();
    futures::stream::unfold(
        (svc, head, since, VecDeque::new()),
        |(svc, mut head, mut last, mut pending)| async move {
            loop {
                if let Some(ev) = pending.pop_front() {
                    let ev: super::StateEvent = ev;
                    last = ev.seq;
                    let data = canonical::to_canonical_string(&ev).expect("event serializes");
                    let msg = Event::default()
                        .id(ev.seq.to_string())
                        .event(ev.body.kind())
                        .data(data);
                    return Some((Ok(msg), (svc, head, last, pending)));
                }
                let current = *head.borrow_and_update();
                if current > last {
                    pending.extend(svc.events_after(last));
                    continue;
                }
                if head.changed().await.is_err() {
                    return None;
                }
            }
        },
    )
}

/// Periodic SLA sweep for wall-clock deployments.
pub fn spawn_sla_sweeper(svc: ServiceHandle, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let now = svc.now(None);
            if svc.call(move |c| c.sla_sweep(now)).await.is_err() {
                break;
            }
        }
    })
}
