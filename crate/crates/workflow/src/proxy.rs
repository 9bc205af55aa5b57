//! Proxy resource server: stores sealed objects, queues assessment requests
//! and enforces role scopes on every route. It never sees plaintext.
//!
//! | method | route                          | grant                      |
//! |--------|--------------------------------|----------------------------|
//! | PUT    | /objects                       | put object of header kind  |
//! | GET    | /objects?kind=K                | list objects of kind K     |
//! | GET    | /objects/{id}                  | get object of stored kind  |
//! | GET    | /attestation                   | get attestation            |
//! | PUT    | /attestation                   | put attestation            |
//! | POST   | /assessments                   | put assessment request     |
//! | POST   | /assessments/claim             | get assessment request     |
//! | GET    | /assessments/{id}              | get status                 |
//! | POST   | /assessments/{id}/fail         | put status                 |
//! | GET    | /assessments/{id}/report       | get report object          |

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use tokio::sync::oneshot;

use crate::access::{permits, token_eq, AccessToken, Grant, Permission, Resource, Role};
use crate::api::*;
use crate::attestation::AttestationStub;
use crate::sealed::{public_key_from_hex, ContentKind, EnvelopeHeader, KeyId};
use crate::store::{new_id, ObjectStore};

pub const DEFAULT_MAX_UPLOAD: u64 = 1 << 30;
pub const CREDENTIALS_FILE: &str = "credentials.json";

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub store_dir: PathBuf,
    pub bind: SocketAddr,
    pub max_upload_bytes: u64,
    pub token_ttl: Duration,
}

impl ProxyConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            store_dir: store_dir.into(),
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            max_upload_bytes: DEFAULT_MAX_UPLOAD,
            token_ttl: Duration::from_secs(24 * 3600),
        }
    }
}

#[derive(Debug, Default)]
struct Queue {
    records: HashMap<String, AssessmentRecord>,
    pending: VecDeque<String>,
}

struct ProxyState {
    store: ObjectStore,
    tokens: Vec<AccessToken>,
    attestation: RwLock<Option<AttestationStub>>,
    queue: Mutex<Queue>,
    max_upload: u64,
}

struct ApiError(StatusCode, String);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<io::Error> for ApiError {
    fn from(e: io::Error) -> Self {
        log::error!("store failure: {e}");
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage failure")
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn forbidden() -> ApiError {
    ApiError::new(StatusCode::FORBIDDEN, "outside the token's scope")
}

fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such resource")
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, msg)
}

impl ProxyState {
    fn authenticate(&self, headers: &HeaderMap) -> ApiResult<Role> {
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer token"))?;
        let token = self
            .tokens
            .iter()
            .find(|t| token_eq(&t.token, presented))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown token"))?;
        if token.is_expired() {
            return Err(ApiError::new(StatusCode::UNAUTHORIZED, "token expired"));
        }
        Ok(token.principal)
    }

    fn authorize(&self, headers: &HeaderMap, grant: Grant) -> ApiResult<Role> {
        let role = self.authenticate(headers)?;
        if permits(role, grant) {
            Ok(role)
        } else {
            Err(forbidden())
        }
    }
}

fn header_str<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers
        .get(name)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

async fn put_object(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<(StatusCode, Json<ObjectMeta>)> {
    let kind: ContentKind = header_str(&headers, CONTENT_KIND_HEADER)
        .ok_or_else(|| bad_request("missing content kind"))?
        .parse()
        .map_err(bad_request)?;
    st.authorize(&headers, (Resource::Object(kind), Permission::Put))?;

    let declared_len =
        header_str(&headers, header::CONTENT_LENGTH.as_str()).and_then(|v| v.parse::<u64>().ok());
    let too_large = || ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "upload exceeds the size cap");
    if declared_len.is_some_and(|n| n > st.max_upload) {
        return Err(too_large());
    }
    let limit = usize::try_from(st.max_upload).unwrap_or(usize::MAX);
    let bytes = to_bytes(body, limit).await.map_err(|_| too_large())?;

    let envelope = EnvelopeHeader::parse(&bytes).map_err(|e| bad_request(e.to_string()))?;
    if envelope.kind != kind {
        return Err(bad_request("envelope kind differs from the declared kind"));
    }

    let sender_public_key = match kind {
        ContentKind::Dataset => {
            let pk_hex = header_str(&headers, SENDER_KEY_HEADER)
                .ok_or_else(|| bad_request("datasets need the sender public key"))?;
            let pk = public_key_from_hex(pk_hex).map_err(|e| bad_request(e.to_string()))?;
            if KeyId::of(&pk) != envelope.sender {
                return Err(bad_request("sender public key does not match the envelope"));
            }
            Some(pk_hex.to_ascii_lowercase())
        }
        _ => None,
    };

    let assessment = if kind == ContentKind::Report {
        let id = header_str(&headers, ASSESSMENT_HEADER)
            .ok_or_else(|| bad_request("reports need an assessment id"))?
            .to_string();
        let q = st.queue.lock().expect("queue lock");
        match q.records.get(&id) {
            Some(r) if r.status == AssessmentStatus::Running => {}
            Some(_) => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "assessment is not running",
                ))
            }
            None => return Err(not_found()),
        }
        Some(id)
    } else {
        None
    };

    let meta = ObjectMeta {
        object_id: new_id(),
        kind,
        domain: header_str(&headers, DOMAIN_HEADER).map(str::to_string),
        dataset_format: (kind == ContentKind::Dataset).then(|| {
            header_str(&headers, DATASET_FORMAT_HEADER)
                .unwrap_or("ndjson")
                .to_string()
        }),
        recipient_key_id: envelope.recipient,
        sender_key_id: envelope.sender,
        sender_public_key,
        size: bytes.len() as u64,
        created_at: crate::access::unix_now(),
    };
    let store_meta = meta.clone();
    let st2 = st.clone();
    tokio::task::spawn_blocking(move || st2.store.put(store_meta, &bytes))
        .await
        .map_err(|e| io::Error::other(e.to_string()))??;

    if let Some(id) = assessment {
        let mut q = st.queue.lock().expect("queue lock");
        if let Some(r) = q.records.get_mut(&id) {
            r.status = AssessmentStatus::Completed;
            r.report_id = Some(meta.object_id.clone());
        }
    }
    log::info!(
        "stored {} object {} ({} bytes)",
        meta.kind,
        meta.object_id,
        meta.size
    );
    Ok((StatusCode::CREATED, Json(meta)))
}

async fn list_objects(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<Vec<ObjectMeta>>> {
    let role = st.authenticate(&headers)?;
    if !ContentKind::ALL
        .into_iter()
        .any(|k| permits(role, (Resource::Object(k), Permission::List)))
    {
        return Err(forbidden());
    }
    let kind: ContentKind = q
        .get("kind")
        .ok_or_else(|| bad_request("missing kind"))?
        .parse()
        .map_err(bad_request)?;
    if !permits(role, (Resource::Object(kind), Permission::List)) {
        return Err(forbidden());
    }
    Ok(Json(st.store.list(kind)))
}

fn meta_headers(meta: &ObjectMeta) -> HeaderMap {
    let mut h = HeaderMap::new();
    let mut set = |name: &'static str, v: &str| {
        if let Ok(v) = HeaderValue::from_str(v) {
            h.insert(name, v);
        }
    };
    set(CONTENT_KIND_HEADER, meta.kind.as_str());
    if let Some(d) = &meta.domain {
        set(DOMAIN_HEADER, d);
    }
    if let Some(f) = &meta.dataset_format {
        set(DATASET_FORMAT_HEADER, f);
    }
    h.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/octet-stream"),
    );
    h
}

async fn read_object(st: &Arc<ProxyState>, meta: &ObjectMeta) -> ApiResult<Response> {
    let st2 = st.clone();
    let id = meta.object_id.clone();
    let bytes = tokio::task::spawn_blocking(move || st2.store.read(&id))
        .await
        .map_err(|e| io::Error::other(e.to_string()))??;
    Ok((StatusCode::OK, meta_headers(meta), bytes).into_response())
}

async fn get_object(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let role = st.authenticate(&headers)?;
    if !ContentKind::ALL
        .into_iter()
        .any(|k| permits(role, (Resource::Object(k), Permission::Get)))
    {
        return Err(forbidden());
    }
    let meta = st.store.meta(&id).ok_or_else(not_found)?;
    if !permits(role, (Resource::Object(meta.kind), Permission::Get)) {
        return Err(forbidden());
    }
    read_object(&st, &meta).await
}

async fn get_attestation(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
) -> ApiResult<Json<AttestationStub>> {
    st.authorize(&headers, (Resource::Attestation, Permission::Get))?;
    let a = st.attestation.read().expect("attestation lock").clone();
    a.map(Json).ok_or_else(not_found)
}

async fn put_attestation(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<StatusCode> {
    st.authorize(&headers, (Resource::Attestation, Permission::Put))?;
    let bytes = to_bytes(body, 64 * 1024)
        .await
        .map_err(|_| ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "attestation too large"))?;
    let stub: AttestationStub =
        serde_json::from_slice(&bytes).map_err(|e| bad_request(e.to_string()))?;
    public_key_from_hex(&stub.enclave_public_key).map_err(|e| bad_request(e.to_string()))?;
    *st.attestation.write().expect("attestation lock") = Some(stub);
    Ok(StatusCode::NO_CONTENT)
}

async fn post_assessment(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<(StatusCode, Json<AssessmentRecord>)> {
    st.authorize(&headers, (Resource::AssessmentRequest, Permission::Put))?;
    let bytes = to_bytes(body, 64 * 1024)
        .await
        .map_err(|_| ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "request too large"))?;
    let req: AssessmentRequest =
        serde_json::from_slice(&bytes).map_err(|e| bad_request(e.to_string()))?;
    let fetch = |id: &str, kind: ContentKind| -> ApiResult<ObjectMeta> {
        let m = st.store.meta(id).ok_or_else(not_found)?;
        if m.kind != kind {
            return Err(bad_request(format!("object {id} is not a {kind}")));
        }
        Ok(m)
    };
    let dataset = fetch(&req.dataset_id, ContentKind::Dataset)?;
    let schema = fetch(&req.schema_id, ContentKind::Schema)?;
    let config = fetch(&req.config_id, ContentKind::Config)?;
    let schema_matches = schema.domain.is_none() || schema.domain == dataset.domain;
    if config.domain != dataset.domain || !schema_matches {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "configuration domain does not match the dataset domain",
        ));
    }

    let record = AssessmentRecord {
        assessment_id: new_id(),
        dataset_id: req.dataset_id,
        schema_id: req.schema_id,
        config_id: req.config_id,
        domain: dataset.domain,
        status: AssessmentStatus::Queued,
        report_id: None,
        created_at: crate::access::unix_now(),
    };
    let mut q = st.queue.lock().expect("queue lock");
    q.pending.push_back(record.assessment_id.clone());
    q.records
        .insert(record.assessment_id.clone(), record.clone());
    log::info!("queued assessment {}", record.assessment_id);
    Ok((StatusCode::CREATED, Json(record)))
}

async fn claim_assessment(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    st.authorize(&headers, (Resource::AssessmentRequest, Permission::Get))?;
    let mut q = st.queue.lock().expect("queue lock");
    while let Some(id) = q.pending.pop_front() {
        let Some(rec) = q.records.get_mut(&id) else {
            continue;
        };
        let dataset = st.store.meta(&rec.dataset_id);
        let Some(dataset) = dataset.filter(|d| d.sender_public_key.is_some()) else {
            rec.status = AssessmentStatus::Failed;
            continue;
        };
        rec.status = AssessmentStatus::Running;
        let claimed = ClaimedAssessment {
            assessment_id: rec.assessment_id.clone(),
            dataset_id: rec.dataset_id.clone(),
            schema_id: rec.schema_id.clone(),
            config_id: rec.config_id.clone(),
            dataset_format: dataset.dataset_format.unwrap_or_else(|| "ndjson".into()),
            report_recipient_key: dataset.sender_public_key.expect("filtered above"),
        };
        return Ok((StatusCode::OK, Json(claimed)).into_response());
    }
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn assessment_status(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<AssessmentRecord>> {
    st.authorize(&headers, (Resource::Status, Permission::Get))?;
    let q = st.queue.lock().expect("queue lock");
    q.records.get(&id).cloned().map(Json).ok_or_else(not_found)
}

async fn fail_assessment(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<StatusCode> {
    st.authorize(&headers, (Resource::Status, Permission::Put))?;
    let mut q = st.queue.lock().expect("queue lock");
    let rec = q.records.get_mut(&id).ok_or_else(not_found)?;
    if rec.status != AssessmentStatus::Running {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "assessment is not running",
        ));
    }
    rec.status = AssessmentStatus::Failed;
    log::warn!("assessment {id} failed");
    Ok(StatusCode::NO_CONTENT)
}

async fn assessment_report(
    State(st): State<Arc<ProxyState>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    st.authorize(
        &headers,
        (Resource::Object(ContentKind::Report), Permission::Get),
    )?;
    let rec = {
        let q = st.queue.lock().expect("queue lock");
        q.records.get(&id).cloned().ok_or_else(not_found)?
    };
    match (rec.status, rec.report_id) {
        (AssessmentStatus::Completed, Some(report_id)) => {
            let meta = st.store.meta(&report_id).ok_or_else(not_found)?;
            read_object(&st, &meta).await
        }
        (AssessmentStatus::Failed, _) => {
            Err(ApiError::new(StatusCode::CONFLICT, "assessment failed"))
        }
        _ => Ok((StatusCode::ACCEPTED, Json(rec.status)).into_response()),
    }
}

fn router(state: Arc<ProxyState>) -> Router {
    Router::new()
        .route("/objects", put(put_object).get(list_objects))
        .route("/objects/{id}", get(get_object))
        .route("/attestation", get(get_attestation).put(put_attestation))
        .route("/assessments", post(post_assessment))
        .route("/assessments/claim", post(claim_assessment))
        .route("/assessments/{id}", get(assessment_status))
        .route("/assessments/{id}/fail", post(fail_assessment))
        .route("/assessments/{id}/report", get(assessment_report))
        .with_state(state)
}

fn write_credentials(dir: &Path, creds: &ProxyCredentials) -> io::Result<()> {
    let path = dir.join(CREDENTIALS_FILE);
    let tmp = dir.join(format!("{CREDENTIALS_FILE}.tmp"));
    std::fs::write(
        &tmp,
        serde_json::to_vec_pretty(creds).map_err(io::Error::other)?,
    )?;
    std::fs::rename(tmp, path)
}

/// A proxy running on a background thread; stopped on drop.
pub struct ProxyHandle {
    pub credentials: ProxyCredentials,
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ProxyHandle {
    pub fn url(&self) -> &str {
        &self.credentials.url
    }

    pub fn token(&self, role: Role) -> &str {
        self.credentials.token(role)
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("proxy thread panicked"))),
            None => Ok(()),
        }
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) -> io::Result<()> {
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("proxy thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

/// Binds, issues one token per role, writes `credentials.json` into the
/// store directory and serves on a background thread.
pub fn spawn(config: ProxyConfig) -> io::Result<ProxyHandle> {
    std::fs::create_dir_all(&config.store_dir)?;
    let store = ObjectStore::open(&config.store_dir)?;
    let listener = std::net::TcpListener::bind(config.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;

    let tokens: BTreeMap<Role, AccessToken> = Role::ALL
        .into_iter()
        .map(|r| (r, AccessToken::issue(r, config.token_ttl)))
        .collect();
    let credentials = ProxyCredentials {
        url: format!("http://{addr}"),
        tokens: tokens.clone(),
    };
    write_credentials(&config.store_dir, &credentials)?;

    let state = Arc::new(ProxyState {
        store,
        tokens: tokens.into_values().collect(),
        attestation: RwLock::new(None),
        queue: Mutex::new(Queue::default()),
        max_upload: config.max_upload_bytes,
    });
    let (tx, rx) = oneshot::channel::<()>();
    let thread =
        std::thread::Builder::new()
            .name("dq-proxy".into())
            .spawn(move || -> io::Result<()> {
                let rt = tokio::runtime::Builder::new_multi_thread()
                    .worker_threads(2)
                    .enable_all()
                    .build()?;
                rt.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener)?;
                    axum::serve(listener, router(state))
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await
                })
            })?;
    log::info!("proxy listening on {addr}");
    Ok(ProxyHandle {
        credentials,
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
