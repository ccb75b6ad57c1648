//! A small scripted HTTP/1.1 server for exercising range requests.
//!
//! Objects are served from memory or from a directory. Each path can carry
//! a queue of faults that are consumed one per request: an error status, a
//! body cut short, or a delay. The server counts requests and tracks the
//! highest number of connections it held open at once.

pub mod oracle;

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Answer with this status and an empty body.
    Status(u16),
    /// Promise the full body but close after this many bytes.
    Truncate(usize),
    /// Wait before answering normally.
    Delay(Duration),
}

enum Source {
    Memory(HashMap<String, Vec<u8>>),
    Dir(PathBuf),
}

impl Source {
    fn get(&self, path: &str) -> Option<Vec<u8>> {
        match self {
            Source::Memory(m) => m.get(path).cloned(),
            Source::Dir(root) => {
                let rel = path.trim_start_matches('/');
                if rel.split('/').any(|c| c == ".." || c.is_empty()) {
                    return None;
                }
                fs::read(root.join(rel)).ok()
            }
        }
    }
}

#[derive(Default)]
struct State {
    faults: HashMap<String, VecDeque<Fault>>,
    per_path: HashMap<String, usize>,
    ranges: Vec<(String, Option<String>)>,
}

struct Shared {
    source: Source,
    state: Mutex<State>,
    requests: AtomicUsize,
    active: AtomicUsize,
    peak: AtomicUsize,
    delay: Mutex<Duration>,
    stop: AtomicBool,
}

pub struct Server {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    /// Serves the given objects; keys are URL paths such as `/a/b.gz`.
    pub fn with_objects(objects: HashMap<String, Vec<u8>>) -> Server {
        Self::start(Source::Memory(objects))
    }

    /// Serves files under `root`; the URL path is the relative file path.
    pub fn with_dir(root: impl Into<PathBuf>) -> Server {
        Self::start(Source::Dir(root.into()))
    }

    fn start(source: Source) -> Server {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
        let addr = listener.local_addr().expect("local addr");
        let shared = Arc::new(Shared {
            source,
            state: Mutex::new(State::default()),
            requests: AtomicUsize::new(0),
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            delay: Mutex::new(Duration::ZERO),
            stop: AtomicBool::new(false),
        });
        let s = Arc::clone(&shared);
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let s = Arc::clone(&s);
                thread::spawn(move || serve(stream, &s));
            }
        });
        Server { addr, shared, accept: Some(accept) }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Queues faults for the next requests to `path`.
    pub fn push_faults(&self, path: &str, faults: impl IntoIterator<Item = Fault>) {
        let mut st = self.shared.state.lock().unwrap();
        st.faults.entry(path.to_string()).or_default().extend(faults);
    }

    /// Delay applied to every response, for holding connections open.
    pub fn set_delay(&self, d: Duration) {
        *self.shared.delay.lock().unwrap() = d;
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    pub fn requests_for(&self, path: &str) -> usize {
        self.shared.state.lock().unwrap().per_path.get(path).copied().unwrap_or(0)
    }

    /// `(path, Range header)` of every request, in arrival order.
    pub fn log(&self) -> Vec<(String, Option<String>)> {
        self.shared.state.lock().unwrap().ranges.clone()
    }

    /// Most requests ever in flight at once.
    pub fn peak_concurrency(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

struct Request {
    path: String,
    range: Option<String>,
    close: bool,
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<Request> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let _method = parts.next()?;
    let target = parts.next()?;
    let version = parts.next().unwrap_or("HTTP/1.1");
    let path = target.split('?').next().unwrap_or(target).to_string();
    let mut range = None;
    let mut close = version == "HTTP/1.0";
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).ok()? == 0 {
            return None;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((name, value)) = h.split_once(':') {
            let value = value.trim();
            match name.trim().to_ascii_lowercase().as_str() {
                "range" => range = Some(value.to_string()),
                "connection" => close = value.eq_ignore_ascii_case("close"),
                _ => {}
            }
        }
    }
    Some(Request { path, range, close })
}

fn parse_range(spec: &str, len: usize) -> Result<(usize, usize), ()> {
    let r = spec.strip_prefix("bytes=").ok_or(())?;
    let (a, b) = r.split_once('-').ok_or(())?;
    let start: usize = a.trim().parse().map_err(|_| ())?;
    let end: usize = if b.trim().is_empty() { len.saturating_sub(1) } else { b.trim().parse().map_err(|_| ())? };
    if start >= len || end < start {
        return Err(());
    }
    Ok((start, end.min(len - 1)))
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        206 => "Partial Content",
        404 => "Not Found",
        416 => "Range Not Satisfiable",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn write_head(out: &mut TcpStream, status: u16, len: usize, extra: &str, close: bool) -> std::io::Result<()> {
    write!(
        out,
        "HTTP/1.1 {status} {}\r\nContent-Length: {len}\r\n{extra}Connection: {}\r\n\r\n",
        reason(status),
        if close { "close" } else { "keep-alive" }
    )
}

fn serve(stream: TcpStream, s: &Shared) {
    let _ = stream.set_nodelay(true);
    let Ok(mut out) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    while let Some(req) = read_request(&mut reader) {
        if s.stop.load(Ordering::SeqCst) {
            return;
        }
        s.requests.fetch_add(1, Ordering::SeqCst);
        let now = s.active.fetch_add(1, Ordering::SeqCst) + 1;
        s.peak.fetch_max(now, Ordering::SeqCst);
        let keep = respond(&mut out, s, &req).unwrap_or(false);
        s.active.fetch_sub(1, Ordering::SeqCst);
        if !keep || req.close {
            break;
        }
    }
    let _ = out.shutdown(Shutdown::Both);
}

/// Returns whether the connection can be reused.
fn respond(out: &mut TcpStream, s: &Shared, req: &Request) -> std::io::Result<bool> {
    let fault = {
        let mut st = s.state.lock().unwrap();
        *st.per_path.entry(req.path.clone()).or_default() += 1;
        st.ranges.push((req.path.clone(), req.range.clone()));
        st.faults.get_mut(&req.path).and_then(VecDeque::pop_front)
    };
    let delay = *s.delay.lock().unwrap();
    if !delay.is_zero() {
        thread::sleep(delay);
    }
    let mut truncate = None;
    match fault {
        Some(Fault::Status(code)) => {
            write_head(out, code, 0, "", false)?;
            return Ok(true);
        }
        Some(Fault::Delay(d)) => thread::sleep(d),
        Some(Fault::Truncate(n)) => truncate = Some(n),
        None => {}
    }
    let Some(body) = s.source.get(&req.path) else {
        write_head(out, 404, 0, "", false)?;
        return Ok(true);
    };
    let (status, slice, extra) = match &req.range {
        None => (200, &body[..], String::new()),
        Some(r) => match parse_range(r, body.len()) {
            Ok((a, b)) => (206, &body[a..=b], format!("Content-Range: bytes {a}-{b}/{}\r\n", body.len())),
            Err(()) => {
                write_head(out, 416, 0, &format!("Content-Range: bytes */{}\r\n", body.len()), false)?;
                return Ok(true);
            }
        },
    };
    match truncate {
        Some(n) => {
            write_head(out, status, slice.len(), &extra, true)?;
            out.write_all(&slice[..n.min(slice.len())])?;
            out.flush()?;
            Ok(false)
        }
        None => {
            write_head(out, status, slice.len(), &extra, false)?;
            out.write_all(slice)?;
            out.flush()?;
            Ok(true)
        }
    }
}

/// Reads everything from a reader; handy for asserting on bodies.
pub fn read_all(mut r: impl Read) -> Vec<u8> {
    let mut v = Vec::new();
    r.read_to_end(&mut v).expect("read");
    v
}
