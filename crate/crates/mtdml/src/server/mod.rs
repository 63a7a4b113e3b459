//! TCP prediction service over the pool manager.
//!
//! Two listeners: the prediction port speaks newline-delimited JSON
//! [`protocol::PredictRequest`]/[`protocol::PredictResponse`]; a separately
//! bound admin port answers status and renewal-log queries with the same
//! framing. Every served prediction goes through the manager's query
//! counter, so pool budgets and renewals apply exactly once per request.

pub mod client;
pub mod protocol;

use crate::error::{Error, Result};
use crate::pool::{generate_pool, PoolConfig, PoolData, StudentPool};
use crate::scheduler::PoolManager;

use protocol::{AdminCmd, AdminRequest, PredictRequest, PredictResponse};

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

const POLL_INTERVAL: Duration = Duration::from_millis(10);
const READ_POLL: Duration = Duration::from_millis(50);

/// Serving configuration; the config file mirrors these fields.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ServeConfig {
    /// Prediction listen address, e.g. "127.0.0.1:7878" ("...:0" for tests).
    pub listen: String,
    /// Admin listen address; must differ from the prediction port.
    pub admin: String,
    /// Fixed query budget; `None` recomputes from T_n, K_t, T_q per swap.
    pub q_max_override: Option<u64>,
    /// Allow confidence/probability output on request. Off by default:
    /// hard labels only.
    pub expose_confidence: bool,
    /// Feature bounds enforced on request inputs; violations are rejected,
    /// not clamped.
    pub bounds: (f64, f64),
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            admin: "127.0.0.1:7879".into(),
            q_max_override: None,
            expose_confidence: false,
            bounds: (0.0, 1.0),
        }
    }
}

/// Running service handle. Dropping it shuts the service down.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub admin_addr: SocketAddr,
    pub manager: Arc<PoolManager>,
    shutdown: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until shutdown is requested externally (never, in practice,
    /// for the CLI foreground mode).
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// Starts serving the given pools (first pool active, rest buffered).
pub fn serve(config: &ServeConfig, pools: Vec<StudentPool>) -> Result<ServerHandle> {
    let manager = Arc::new(PoolManager::new(pools, config.q_max_override)?);
    serve_with_manager(config, manager)
}

/// Starts serving over an externally owned manager (background generators
/// keep enqueueing into it).
pub fn serve_with_manager(config: &ServeConfig, manager: Arc<PoolManager>) -> Result<ServerHandle> {
    let listener = TcpListener::bind(&config.listen)
        .map_err(|e| Error::Endpoint(format!("bind {} failed: {e}", config.listen)))?;
    let admin_listener = TcpListener::bind(&config.admin)
        .map_err(|e| Error::Endpoint(format!("bind {} failed: {e}", config.admin)))?;
    let addr = listener.local_addr()?;
    let admin_addr = admin_listener.local_addr()?;
    listener.set_nonblocking(true)?;
    admin_listener.set_nonblocking(true)?;

    let shutdown = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();

    {
        let manager = Arc::clone(&manager);
        let shutdown = Arc::clone(&shutdown);
        let cfg = config.clone();
        threads.push(std::thread::spawn(move || {
            accept_loop(listener, shutdown, move |stream, stop| {
                predict_connection(stream, &cfg, &manager, stop)
            });
        }));
    }
    {
        let manager = Arc::clone(&manager);
        let shutdown = Arc::clone(&shutdown);
        threads.push(std::thread::spawn(move || {
            accept_loop(admin_listener, shutdown, move |stream, stop| {
                admin_connection(stream, &manager, stop)
            });
        }));
    }

    Ok(ServerHandle {
        addr,
        admin_addr,
        manager,
        shutdown,
        threads,
    })
}

fn accept_loop<F>(listener: TcpListener, shutdown: Arc<AtomicBool>, handler: F)
where
    F: Fn(TcpStream, &AtomicBool) + Send + Sync + 'static,
{
    let handler = Arc::new(handler);
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nodelay(true);
                let handler = Arc::clone(&handler);
                let stop = Arc::clone(&shutdown);
                workers.push(std::thread::spawn(move || handler(stream, &stop)));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(POLL_INTERVAL);
            }
            Err(_) => break,
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

/// Reads one line at a time, tolerating read timeouts so shutdown can
/// interrupt an idle connection.
fn read_line_polling(
    reader: &mut BufReader<TcpStream>,
    stop: &AtomicBool,
) -> Option<String> {
    let mut line = String::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            return None;
        }
        match reader.read_line(&mut line) {
            Ok(0) => return None,
            Ok(_) => return Some(line),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                // Partial data may already be buffered; keep accumulating.
                continue;
            }
            Err(_) => return None,
        }
    }
}

fn predict_connection(
    stream: TcpStream,
    cfg: &ServeConfig,
    manager: &PoolManager,
    stop: &AtomicBool,
) {
    let _ = stream.set_read_timeout(Some(READ_POLL));
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let mut reader = BufReader::new(stream);
    while let Some(line) = read_line_polling(&mut reader, stop) {
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_predict_line(&line, cfg, manager);
        let Ok(mut payload) = serde_json::to_vec(&response) else {
            break;
        };
        payload.push(b'\n');
        if writer.write_all(&payload).is_err() {
            break;
        }
    }
}

fn handle_predict_line(line: &str, cfg: &ServeConfig, manager: &PoolManager) -> PredictResponse {
    let request: PredictRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return PredictResponse::err(String::new(), format!("malformed request: {e}")),
    };
    match handle_predict(&request, cfg, manager) {
        Ok(resp) => resp,
        Err(e) => PredictResponse::err(request.id, e.to_string()),
    }
}

fn handle_predict(
    request: &PredictRequest,
    cfg: &ServeConfig,
    manager: &PoolManager,
) -> Result<PredictResponse> {
    // Requests are fully validated before they are admitted, so rejected
    // requests never consume query budget.
    let expected = manager.input_dim();
    if request.input.len() != expected {
        return Err(Error::Validation(format!(
            "input has {} features, expected {expected}",
            request.input.len()
        )));
    }
    let (lb, ub) = cfg.bounds;
    if request.input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite feature".into()));
    }
    if request.input.iter().any(|&v| v < lb || v > ub) {
        return Err(Error::Validation(format!(
            "feature outside bounds [{lb}, {ub}]"
        )));
    }
    let x: Vec<f32> = request.input.iter().map(|&v| v as f32).collect();
    let (outcome, _renewal) = manager.predict(&x)?;
    let mut response = PredictResponse::ok(request.id.clone(), outcome.label);
    if request.want_confidence && cfg.expose_confidence {
        response.confidence = Some(outcome.confidence);
        response.probs = Some(outcome.probs);
    }
    Ok(response)
}

fn admin_connection(stream: TcpStream, manager: &PoolManager, stop: &AtomicBool) {
    let _ = stream.set_read_timeout(Some(READ_POLL));
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let mut reader = BufReader::new(stream);
    while let Some(line) = read_line_polling(&mut reader, stop) {
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<AdminRequest>(&line) {
            Ok(req) => admin_reply(&req, manager),
            Err(e) => serde_json::json!({ "error": format!("malformed admin request: {e}") }),
        };
        let mut payload = reply.to_string().into_bytes();
        payload.push(b'\n');
        if writer.write_all(&payload).is_err() {
            break;
        }
    }
}

fn admin_reply(req: &AdminRequest, manager: &PoolManager) -> serde_json::Value {
    match req.cmd {
        AdminCmd::Status => {
            serde_json::to_value(manager.status()).unwrap_or_else(|e| {
                serde_json::json!({ "error": format!("status serialization: {e}") })
            })
        }
        AdminCmd::RenewalLog => serde_json::to_value(manager.renewal_log()).unwrap_or_else(|e| {
            serde_json::json!({ "error": format!("log serialization: {e}") })
        }),
        AdminCmd::RenewalLogCsv => serde_json::json!({ "csv": manager.renewal_log_csv() }),
    }
}

/// Keeps the standby buffer topped up to `min_buffer` pools by generating
/// new ones in the background. Pool ids continue from `next_id`.
pub fn spawn_pool_generator(
    manager: Arc<PoolManager>,
    base: crate::nn::Model,
    cfg: PoolConfig,
    data: PoolData,
    min_buffer: usize,
    next_id: Arc<AtomicU64>,
    shutdown: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        while !shutdown.load(Ordering::SeqCst) {
            if manager.status().buffer_depth < min_buffer {
                let id = next_id.fetch_add(1, Ordering::SeqCst);
                let mut pool_cfg = cfg.clone();
                pool_cfg.seed = crate::pool::mix(cfg.seed, id);
                match generate_pool(&base, &pool_cfg, &data, id) {
                    Ok(pool) => manager.enqueue_pool(pool),
                    Err(e) => {
                        eprintln!("background pool generation stopped: {e}");
                        break;
                    }
                }
            } else {
                std::thread::sleep(POLL_INTERVAL);
            }
        }
    })
}
