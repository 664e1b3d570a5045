//! Shared test support: a deterministic synthetic corpus with known
//! ground-truth templates.
#![allow(dead_code)] // not every test binary touches every field
//!
//! Patterns are written pre-tokenized (punctuation separated by spaces) so
//! the ground-truth template string is independent of the tokenizer under
//! test. Slots are drawn from typed value pools: numeric/IP/hex/path values
//! that the preprocessor masks, plus user and host names that the parser has
//! to learn as variables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const USERS: &[&str] = &[
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy",
    "mallory", "oscar", "peggy", "trent", "victor", "wendy",
];

/// (pattern, slots). Slot markers `{i}`, `{d}`, `{ip}`, `{x}`, `{p}`, `{u}`,
/// `{h}` stand for integer, decimal, IPv4, hex id, path, user, host.
const PATTERNS: &[&str] = &[
    // Variables the preprocessor masks outright.
    "Connection from {ip} port {i} closed",
    "Session started on port {i}",
    "Disk usage at {i} percent on {p}",
    "Request took {d} ms",
    "Allocated {i} buffers of size {i}",
    "Heartbeat arrived from {ip}",
    "Checkpoint {x} written to {p}",
    "Retry {i} of {i} for request {x}",
    "Cache flush completed in {d} seconds",
    "Block {x} replicated to {ip}",
    "Listening on {ip}",
    "Worker {i} exited with code {i}",
    "Loaded config from {p}",
    "Packet loss {d} percent to {ip}",
    "Timer fired after {i} ticks",
    "Snapshot {x} saved at {p}",
    "Mounted {p} read only",
    "GC pause of {d} ms detected",
    "Thread pool resized to {i}",
    "Lease {x} renewed for {i} seconds",
    "Upload of {p} finished in {d} seconds",
    "Fetched {i} bytes from {ip}",
    "Verified digest {x} for {p}",
    "Purged {i} stale entries",
    // Word and identifier variables in front, back, and both halves.
    "{u} logged in from {ip}",
    "{u} logged out",
    "Password changed for {u}",
    "Job {x} assigned to {h}",
    "{h} joined cluster {h}",
    "{u} connected to {h} successfully",
    "Quota exceeded for user {u}",
    "Backup for {u} stored at {p}",
    "Node {h} marked healthy",
    "Node {h} marked unhealthy",
    "Session key rotated for {u}",
    "Agent {h} reported {i} errors",
    // Near-identical template pairs that similarity alone would collapse.
    "Interface {h} send {i} packages",
    "Interface {h} received {i} packages",
    "user {u} auth accepted",
    "user {u} auth rejected",
    "Removable base files : {i}",
    "Active base files : {i}",
];

pub struct SyntheticCorpus {
    pub lines: Vec<String>,
    /// 1-based line id -> ground-truth template, in emission order.
    pub truth: Vec<(u64, String)>,
    pub template_count: usize,
}

fn fill(pattern: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}').expect("balanced slot") + start;
        let slot = &rest[start + 1..end];
        let value = match slot {
            "i" => rng.random_range(0u32..100_000).to_string(),
            "d" => format!("{}.{}", rng.random_range(0u32..500), rng.random_range(0u32..100)),
            "ip" => format!(
                "10.{}.{}.{}",
                rng.random_range(0u32..256),
                rng.random_range(0u32..256),
                rng.random_range(1u32..255)
            ),
            "x" => format!("0x{:06x}", rng.random_range(0u32..0xFFFFFF)),
            "p" => format!(
                "/var/{}/file{}.log",
                ["log", "data", "cache", "spool"][rng.random_range(0usize..4)],
                rng.random_range(0u32..900)
            ),
            "u" => USERS[rng.random_range(0usize..USERS.len())].to_string(),
            "h" => format!(
                "{}{}",
                ["node", "rack", "blade"][rng.random_range(0usize..3)],
                rng.random_range(1u32..60)
            ),
            other => panic!("unknown slot {other}"),
        };
        out.push_str(&value);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    out
}

fn truth_template(pattern: &str) -> String {
    let mut out = String::new();
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}').expect("balanced slot") + start;
        out.push_str("<*>");
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    out
}

/// Deterministic corpus: every pattern appears once up front, the remaining
/// lines are drawn uniformly.
pub fn generate(seed: u64, n_lines: usize) -> SyntheticCorpus {
    assert!(n_lines >= PATTERNS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::with_capacity(n_lines);
    let mut truth = Vec::with_capacity(n_lines);
    let emit = |idx: usize, lines: &mut Vec<String>, truth: &mut Vec<(u64, String)>,
                rng: &mut ChaCha8Rng| {
        let line_id = lines.len() as u64 + 1;
        lines.push(fill(PATTERNS[idx], rng));
        truth.push((line_id, truth_template(PATTERNS[idx])));
    };
    for idx in 0..PATTERNS.len() {
        emit(idx, &mut lines, &mut truth, &mut rng);
    }
    while lines.len() < n_lines {
        let idx = rng.random_range(0usize..PATTERNS.len());
        emit(idx, &mut lines, &mut truth, &mut rng);
    }
    SyntheticCorpus {
        lines,
        truth,
        template_count: PATTERNS.len(),
    }
}
