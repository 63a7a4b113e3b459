//! Line-protocol client plus a remote [`QueryOracle`] for black-box attacks
//! against a live endpoint.

use super::protocol::{AdminCmd, AdminRequest, PredictRequest, PredictResponse};
use crate::attacks::QueryOracle;
use crate::error::{Error, Result};
use crate::linalg::Mat;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

/// Blocking client over one connection to the prediction port.
pub struct PredictClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl PredictClient {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Endpoint(format!("connect {addr}: {e}")))?;
        let _ = stream.set_nodelay(true);
        let writer = stream
            .try_clone()
            .map_err(|e| Error::Endpoint(format!("clone stream: {e}")))?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            next_id: 0,
        })
    }

    /// Sends one raw line and reads one response line.
    pub fn round_trip_raw(&mut self, line: &str) -> Result<String> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .map_err(|e| Error::Endpoint(format!("send: {e}")))?;
        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| Error::Endpoint(format!("recv: {e}")))?;
        if n == 0 {
            return Err(Error::Endpoint("connection closed by server".into()));
        }
        Ok(reply)
    }

    pub fn predict(&mut self, input: &[f64], want_confidence: bool) -> Result<PredictResponse> {
        self.next_id += 1;
        let request = PredictRequest {
            id: format!("q{}", self.next_id),
            input: input.to_vec(),
            want_confidence,
        };
        let line = serde_json::to_string(&request)?;
        let reply = self.round_trip_raw(&line)?;
        let response: PredictResponse = serde_json::from_str(&reply)?;
        if response.id != request.id && response.error.is_none() {
            return Err(Error::Endpoint(format!(
                "response id {} does not match request id {}",
                response.id, request.id
            )));
        }
        Ok(response)
    }

    /// Predicts and requires a label, turning error responses into errors.
    pub fn label(&mut self, input: &[f64]) -> Result<usize> {
        let resp = self.predict(input, false)?;
        match (resp.label, resp.error) {
            (Some(label), None) => Ok(label),
            (_, Some(err)) => Err(Error::Endpoint(err)),
            _ => Err(Error::Endpoint("response carried neither label nor error".into())),
        }
    }
}

/// One-shot admin query.
pub fn admin_query(addr: &str, cmd: AdminCmd) -> Result<serde_json::Value> {
    let stream =
        TcpStream::connect(addr).map_err(|e| Error::Endpoint(format!("connect {addr}: {e}")))?;
    let _ = stream.set_nodelay(true);
    let mut writer = stream
        .try_clone()
        .map_err(|e| Error::Endpoint(format!("clone stream: {e}")))?;
    let mut reader = BufReader::new(stream);
    let line = serde_json::to_string(&AdminRequest { cmd })?;
    writer
        .write_all(line.as_bytes())
        .and_then(|_| writer.write_all(b"\n"))
        .map_err(|e| Error::Endpoint(format!("send: {e}")))?;
    let mut reply = String::new();
    reader
        .read_line(&mut reply)
        .map_err(|e| Error::Endpoint(format!("recv: {e}")))?;
    Ok(serde_json::from_str(&reply)?)
}

/// Black-box oracle over a live endpoint.
///
/// `query_probs` needs the deployment to expose soft outputs
/// (`expose_confidence = true` server-side); `query_labels` works against
/// any deployment.
pub struct RemoteOracle {
    client: Mutex<PredictClient>,
    counter: AtomicU64,
    num_classes: usize,
}

impl RemoteOracle {
    pub fn connect(addr: &str, num_classes: usize) -> Result<Self> {
        Ok(Self {
            client: Mutex::new(PredictClient::connect(addr)?),
            counter: AtomicU64::new(0),
            num_classes,
        })
    }
}

impl QueryOracle for RemoteOracle {
    fn query_probs(&self, inputs: &Mat) -> Result<Vec<Vec<f64>>> {
        self.counter
            .fetch_add(inputs.rows() as u64, Ordering::Relaxed);
        let mut client = self.client.lock().expect("client lock poisoned");
        let mut out = Vec::with_capacity(inputs.rows());
        for i in 0..inputs.rows() {
            let input: Vec<f64> = inputs.row(i).iter().map(|&v| v as f64).collect();
            let resp = client.predict(&input, true)?;
            if let Some(err) = resp.error {
                return Err(Error::Endpoint(err));
            }
            let probs = resp.probs.ok_or_else(|| {
                Error::Endpoint("deployment does not expose probability vectors".into())
            })?;
            out.push(probs);
        }
        Ok(out)
    }

    fn query_labels(&self, inputs: &Mat) -> Result<Vec<usize>> {
        self.counter
            .fetch_add(inputs.rows() as u64, Ordering::Relaxed);
        let mut client = self.client.lock().expect("client lock poisoned");
        let mut out = Vec::with_capacity(inputs.rows());
        for i in 0..inputs.rows() {
            let input: Vec<f64> = inputs.row(i).iter().map(|&v| v as f64).collect();
            out.push(client.label(&input)?);
        }
        Ok(out)
    }

    fn query_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}
