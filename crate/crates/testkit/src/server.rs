use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};
use zcbm_core::vecstore::Embedder;

/// Failure injection for [`MockServer`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MockOptions {
    /// Answer the first `fail_first` requests with 503.
    pub fail_first: usize,
    /// Omit the last embedding of every response.
    pub drop_last_row: bool,
}

struct Shared {
    embedder: Arc<dyn Embedder>,
    opts: MockOptions,
    requests: AtomicUsize,
    batches: Mutex<Vec<Vec<String>>>,
    stop: AtomicBool,
}

/// A blocking HTTP/1.1 server speaking the provider wire format on loopback.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(embedder: Arc<dyn Embedder>) -> Self {
        Self::start_with(embedder, MockOptions::default())
    }

    pub fn start_with(embedder: Arc<dyn Embedder>, opts: MockOptions) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let shared = Arc::new(Shared {
            embedder,
            opts,
            requests: AtomicUsize::new(0),
            batches: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let s = shared.clone();
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let s = s.clone();
                thread::spawn(move || {
                    let _ = serve(stream, &s);
                });
            }
        });
        Self {
            addr,
            shared,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}/embed", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Texts of every successfully answered request, in arrival order.
    pub fn batches(&self) -> Vec<Vec<String>> {
        self.shared.batches.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, s: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut out = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line)? == 0 {
            return Ok(());
        }
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line)?;
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body)?;
        let n = s.requests.fetch_add(1, Ordering::SeqCst) + 1;
        let (status, payload) = if n <= s.opts.fail_first {
            ("503 Service Unavailable", json!({"error": "warming up"}))
        } else {
            respond(&body, s)
        };
        let payload = payload.to_string();
        write!(
            out,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: keep-alive\r\n\r\n{payload}",
            payload.len()
        )?;
        out.flush()?;
    }
}

fn respond(body: &[u8], s: &Shared) -> (&'static str, Value) {
    let texts: Vec<String> = match serde_json::from_slice::<Value>(body)
        .ok()
        .and_then(|v| serde_json::from_value(v["texts"].clone()).ok())
    {
        Some(t) => t,
        None => return ("400 Bad Request", json!({"error": "expected {\"texts\": [...]}"})),
    };
    let m = match s.embedder.embed(&texts) {
        Ok(m) => m,
        Err(e) => return ("500 Internal Server Error", json!({"error": e.to_string()})),
    };
    s.batches.lock().unwrap().push(texts);
    let mut rows: Vec<Vec<f32>> = m.rows().map(|r| r.to_vec()).collect();
    if s.opts.drop_last_row {
        rows.pop();
    }
    ("200 OK", json!({ "embeddings": rows }))
}
