//! Web-service interface for record management:
//! `PUT /records/{name}`, `DELETE /records/{name}`, `GET /records`.

use std::io;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

use super::{DnsError, DnsTable};

#[derive(Debug, Deserialize)]
struct UpsertBody {
    address: Ipv4Addr,
    ttl: Option<u32>,
}

fn error_response(err: DnsError) -> Response {
    let (status, code) = match &err {
        DnsError::InvalidName(_) | DnsError::InvalidZone(_) => (StatusCode::BAD_REQUEST, "InvalidName"),
        DnsError::TtlTooHigh { .. } => (StatusCode::BAD_REQUEST, "TtlTooHigh"),
        DnsError::InvalidTtl => (StatusCode::BAD_REQUEST, "InvalidTtl"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
    };
    (
        status,
        Json(json!({"error": {"code": code, "message": err.to_string()}})),
    )
        .into_response()
}

async fn upsert(
    State(table): State<Arc<DnsTable>>,
    Path(name): Path<String>,
    Json(body): Json<UpsertBody>,
) -> Response {
    match table.upsert_record(&name, body.address, body.ttl) {
        Ok(r) => Json(r).into_response(),
        Err(e) => error_response(e),
    }
}

async fn delete(State(table): State<Arc<DnsTable>>, Path(name): Path<String>) -> Response {
    match table.delete_record(&name) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error_response(e),
    }
}

async fn list(State(table): State<Arc<DnsTable>>) -> Response {
    Json(table.records()).into_response()
}

pub fn router(table: Arc<DnsTable>) -> Router {
    Router::new()
        .route("/records", get(list))
        .route("/records/{name}", put(upsert).delete(delete))
        .with_state(table)
}

/// An HTTP server running on its own thread and runtime.
pub struct HttpHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl HttpHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Bind `addr` synchronously (so port conflicts surface to the caller) and
/// serve `app` on a dedicated thread.
pub fn spawn_router(app: Router, addr: SocketAddr, name: &str) -> io::Result<HttpHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name(name.to_string())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("http runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
    Ok(HttpHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}

pub(super) fn spawn(table: Arc<DnsTable>, addr: SocketAddr) -> Result<HttpHandle, DnsError> {
    spawn_router(router(table), addr, "dns-http").map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => DnsError::PortInUse(addr),
        _ => DnsError::Io(e),
    })
}
