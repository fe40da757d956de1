//! Read-only HTTP query API over published snapshots.
//!
//! `GET /snapshot` returns the twin, `GET /kpis` the report over its log
//! so far. Readers clone the published `Arc` and never hold the lock while
//! serializing, so they do not block the writer.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use tiny_http::{Header, Method, Request, Response, Server};

use super::SharedSnapshot;
use crate::engine::compute_kpis;

pub struct QueryServer {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl QueryServer {
    /// Binds `addr` (port 0 picks a free port) and serves on a thread.
    pub fn start(addr: &str, shared: SharedSnapshot) -> io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("query server is not bound to an IP address"))?;
        let worker = {
            let server = Arc::clone(&server);
            thread::Builder::new().name("query-http".into()).spawn(move || {
                for request in server.incoming_requests() {
                    respond(request, &shared);
                }
            })?
        };
        Ok(Self {
            server,
            addr,
            worker: Some(worker),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for QueryServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn json(status: u16, body: String) -> Response<io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn error(status: u16, message: &str) -> Response<io::Cursor<Vec<u8>>> {
    json(status, serde_json::json!({ "error": message }).to_string())
}

fn respond(request: Request, shared: &SharedSnapshot) {
    let path = request.url().split('?').next().unwrap_or_default().to_string();
    let response = if *request.method() != Method::Get {
        error(405, "only GET is supported")
    } else if path != "/snapshot" && path != "/kpis" {
        error(404, "unknown path")
    } else {
        let snapshot = shared.read().map(|s| s.clone()).unwrap_or(None);
        match snapshot {
            None => error(503, "twin not initialised"),
            Some(state) if path == "/snapshot" => match serde_json::to_string(&*state) {
                Ok(body) => json(200, body),
                Err(e) => error(500, &e.to_string()),
            },
            Some(state) => match compute_kpis(state.event_log(), state.topology()) {
                Ok(report) => json(200, serde_json::to_string(&report).expect("report serializes")),
                Err(e) => error(500, &e.to_string()),
            },
        }
    };
    if let Err(e) = request.respond(response) {
        log::debug!("query response failed: {e}");
    }
}
