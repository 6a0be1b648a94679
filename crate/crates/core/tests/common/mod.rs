//! Shared test helpers: naive feature oracles, a metrics counting oracle,
//! random segment generation and a minimal HTTP stub server.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use drivestyle::ingest::{StyleLabel, TrajectorySegment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn naive_mean(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

pub fn naive_central_moment(x: &[f64], k: i32) -> f64 {
    let m = naive_mean(x);
    let mut s = 0.0;
    for v in x {
        s += (v - m).powi(k);
    }
    s / x.len() as f64
}

/// Insertion sort, then linear interpolation at rank `q (n - 1)`.
pub fn naive_quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    for i in 1..s.len() {
        let mut j = i;
        while j > 0 && s[j - 1] > s[j] {
            s.swap(j - 1, j);
            j -= 1;
        }
    }
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    if lo + 1 >= s.len() {
        return s[lo];
    }
    s[lo] + (pos - lo as f64) * (s[lo + 1] - s[lo])
}

/// mean, std, max, min, median, q25, q75, kurtosis, skewness
pub fn naive_stats(x: &[f64]) -> [f64; 9] {
    let m2 = naive_central_moment(x, 2);
    let (kurt, skew) = if m2 == 0.0 {
        (0.0, 0.0)
    } else {
        let sd = m2.sqrt();
        (
            naive_central_moment(x, 4) / (m2 * m2) - 3.0,
            naive_central_moment(x, 3) / (sd * sd * sd),
        )
    };
    let mut max = x[0];
    let mut min = x[0];
    for &v in x {
        if v > max {
            max = v;
        }
        if v < min {
            min = v;
        }
    }
    [
        naive_mean(x),
        m2.sqrt(),
        max,
        min,
        naive_quantile(x, 0.5),
        naive_quantile(x, 0.25),
        naive_quantile(x, 0.75),
        kurt,
        skew,
    ]
}

pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (naive_mean(x), naive_mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

pub fn naive_mean_abs_step(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 1..x.len() {
        s += (x[i] - x[i - 1]).abs();
    }
    s / (x.len() - 1) as f64
}

pub fn naive_count(x: &[f64], pred: impl Fn(f64) -> bool) -> usize {
    let mut c = 0;
    for &v in x {
        if pred(v) {
            c += 1;
        }
    }
    c
}

/// Relative closeness with an absolute floor for values that cancel to ~0.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    let diff = (a - b).abs();
    diff <= rel * a.abs().max(b.abs()) || diff <= 1e-14
}

/// Random segment with strictly increasing time and heavy-tailed
/// acceleration/jerk so that threshold counts are exercised.
pub fn random_segment(rng: &mut ChaCha8Rng, id: usize) -> TrajectorySegment {
    let n = rng.random_range(50..=300);
    let mut t = Vec::with_capacity(n);
    let mut time = 0.0;
    for _ in 0..n {
        time += rng.random_range(0.05..0.15);
        t.push(time);
    }
    let constant_speed = id.is_multiple_of(97);
    let v: Vec<f64> = (0..n)
        .map(|_| {
            if constant_speed {
                12.5
            } else {
                rng.random_range(0.0..30.0)
            }
        })
        .collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let j: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
    TrajectorySegment::new(format!("r{id}"), t, v, a, j, None).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<StyleLabel> {
    (0..n).map(|_| StyleLabel::ALL[rng.random_range(0..4)]).collect()
}

/// Brute-force per-class counts: (tp, fp, fn) for every class.
pub fn counting_oracle(pred: &[StyleLabel], truth: &[StyleLabel]) -> Vec<(u64, u64, u64)> {
    StyleLabel::ALL
        .iter()
        .map(|&c| {
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for i in 0..pred.len() {
                if pred[i] == c && truth[i] == c {
                    tp += 1;
                } else if pred[i] == c {
                    fp += 1;
                } else if truth[i] == c {
                    fn_ += 1;
                }
            }
            (tp, fp, fn_)
        })
        .collect()
}

/// Canned HTTP responder: `(status, json body)` per request.
pub type Responder = Box<dyn Fn(usize, &serde_json::Value) -> (u16, String) + Send + Sync>;

pub struct StubServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    pub auth_headers: Arc<Mutex<Vec<Option<String>>>>,
}

impl StubServer {
    pub fn start(respond: Responder) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let auth_headers = Arc::new(Mutex::new(Vec::new()));
        let (h, b, a) = (hits.clone(), bodies.clone(), auth_headers.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = None;
                let mut line = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                        if k.eq_ignore_ascii_case("authorization") {
                            auth = Some(v.trim().to_string());
                        }
                    }
                }
                let mut body = vec![0u8; len];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
                let n = h.fetch_add(1, Ordering::SeqCst);
                b.lock().unwrap().push(json.clone());
                a.lock().unwrap().push(auth);
                let (status, text) = respond(n, &json);
                let resp = format!(
                    "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(resp.as_bytes());
                let _ = stream.flush();
            }
        });
        Self {
            url,
            hits,
            bodies,
            auth_headers,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

pub fn chat_reply(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

pub fn embedding_reply(values: &[f64]) -> String {
    serde_json::json!({"data": [{"embedding": values}]}).to_string()
}

pub fn fast_retry() -> drivestyle::remote::RetryPolicy {
    drivestyle::remote::RetryPolicy {
        max_attempts: 3,
        base_delay_ms: 1,
        max_delay_ms: 5,
        timeout_ms: 5_000,
    }
}

/// Synthetic segments -> features -> offline descriptions -> local embeddings.
pub fn synthetic_prepared(
    n_per_class: usize,
    steps: usize,
    seed: u64,
) -> (Vec<TrajectorySegment>, drivestyle::pipeline::PreparedData) {
    use drivestyle::embed::HashingEncoder;
    use drivestyle::eval::{gen_synthetic, SynthStyleSpec};
    use drivestyle::features::{FeatureExtractor, SignalRegistry, Thresholds, DEFAULT_TAU};
    use drivestyle::pipeline::{extract_rows, prepare, DEFAULT_SPLIT};
    use drivestyle::semantic::{Describer, LlmConfig};

    let segs = gen_synthetic(&SynthStyleSpec::defaults(), n_per_class, steps, 0.1, seed).unwrap();
    let ex = FeatureExtractor::new(SignalRegistry::default(), Thresholds::shared(DEFAULT_TAU)).unwrap();
    let rows = extract_rows(&segs, &ex).unwrap();
    let describer = Describer::new(&LlmConfig::default(), None, true).unwrap();
    let prep = prepare(rows, DEFAULT_SPLIT, seed, &describer, &HashingEncoder::default()).unwrap();
    (segs, prep)
}
