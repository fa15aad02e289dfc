//! HTTP front end: `GET /status`, `POST /command`, `GET /stream`.

use std::io::{self, Read, Write};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::RecvTimeoutError;
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use super::{SupervisorCommand, SupervisorError, SupervisorHub};

const MAX_BODY: u64 = 64 * 1024;

/// Running supervisor endpoint. Stops when dropped.
pub struct SupervisorServer {
    addr: SocketAddr,
    server: Arc<Server>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for SupervisorServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SupervisorServer").field("addr", &self.addr).finish()
    }
}

impl SupervisorServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SupervisorServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Binds `listen` (use port 0 for an ephemeral port) and serves `hub`.
pub fn serve(hub: SupervisorHub, listen: &str) -> io::Result<SupervisorServer> {
    let server = Server::http(listen).map_err(|e| io::Error::new(io::ErrorKind::AddrNotAvailable, e.to_string()))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| io::Error::new(io::ErrorKind::Unsupported, "not an IP listener"))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let (srv, flag) = (server.clone(), stop.clone());
    let thread = thread::Builder::new().name("supervisor-http".into()).spawn(move || {
        while !flag.load(Ordering::Relaxed) {
            match srv.recv_timeout(Duration::from_millis(100)) {
                Ok(Some(req)) => handle(req, &hub, &flag),
                Ok(None) => {}
                Err(_) => break,
            }
        }
    })?;
    Ok(SupervisorServer {
        addr,
        server,
        stop,
        thread: Some(thread),
    })
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").unwrap()
}

fn reply(req: Request, status: u16, body: serde_json::Value) {
    let resp = Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(json_header());
    let _ = req.respond(resp);
}

fn handle(mut req: Request, hub: &SupervisorHub, stop: &Arc<AtomicBool>) {
    let path = req.url().split('?').next().unwrap_or("").to_string();
    match (req.method(), path.as_str()) {
        (Method::Get, "/status") => {
            let doc = serde_json::to_value(hub.status()).unwrap_or_default();
            reply(req, 200, doc);
        }
        (Method::Post, "/command") => {
            let mut body = String::new();
            if req.as_reader().take(MAX_BODY).read_to_string(&mut body).is_err() {
                return reply(req, 400, json!({"error": "invalid_payload", "reason": "unreadable body"}));
            }
            let cmd: SupervisorCommand = match serde_json::from_str(&body) {
                Ok(c) => c,
                Err(e) => return reply(req, 400, json!({"error": "invalid_payload", "reason": e.to_string()})),
            };
            match hub.apply_command(cmd) {
                Ok(ack) => reply(req, 200, json!({"ack": ack})),
                Err(SupervisorError::UnknownLoop(id)) => reply(
                    req,
                    404,
                    json!({"error": "unknown_loop", "reason": format!("unknown loop {id}")}),
                ),
                Err(SupervisorError::InvalidPayload(reason)) => {
                    reply(req, 400, json!({"error": "invalid_payload", "reason": reason}))
                }
            }
        }
        (Method::Get, "/stream") => {
            let rx = hub.subscribe();
            let stop = stop.clone();
            thread::spawn(move || {
                let mut w = req.into_writer();
                let head = "HTTP/1.1 200 OK\r\nContent-Type: application/x-ndjson\r\nCache-Control: no-cache\r\nConnection: close\r\n\r\n";
                if w.write_all(head.as_bytes()).and_then(|_| w.flush()).is_err() {
                    return;
                }
                loop {
                    match rx.recv_timeout(Duration::from_millis(200)) {
                        Ok(frame) => {
                            let mut line = serde_json::to_vec(&frame).expect("frame serializes");
                            line.push(b'\n');
                            if w.write_all(&line).and_then(|_| w.flush()).is_err() {
                                return;
                            }
                        }
                        Err(RecvTimeoutError::Timeout) if !stop.load(Ordering::Relaxed) => {}
                        Err(_) => return,
                    }
                }
            });
        }
        (_, "/status" | "/command" | "/stream") => {
            reply(req, 405, json!({"error": "method_not_allowed"}));
        }
        _ => reply(req, 404, json!({"error": "not_found"})),
    }
}
