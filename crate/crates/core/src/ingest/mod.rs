//! Packet ingestion: PCAP parsing, ground-truth labeling, deduplication,
//! class balancing, and tokenization into fixed-length integer sequences.

mod dataset;
mod pcap;

pub use dataset::{load_dataset, save_dataset, DatasetError};
pub use pcap::{parse_pcap, parse_pcap_bytes, ParseStats, PcapError, PcapParse};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Token used to pad byte sequences; one past the largest byte value.
pub const PAD_TOKEN: u16 = 256;

/// Vocabulary size for byte models: 256 byte values plus the pad token.
pub const VOCAB_SIZE: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Tcp,
    Udp,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Tcp => write!(f, "TCP"),
            Protocol::Udp => write!(f, "UDP"),
        }
    }
}

/// Transport-layer flow identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
}

/// One transport-layer payload with its flow identity and capture time.
///
/// `bytes` is always non-empty; zero-payload packets are dropped at parse
/// time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadRecord {
    pub bytes: Vec<u8>,
    pub tuple: FiveTuple,
    pub timestamp_us: u64,
    pub label: Option<String>,
}

/// Five-tuple pattern where `None` is a wildcard matching anything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TuplePattern {
    pub src_ip: Option<Ipv4Addr>,
    pub dst_ip: Option<Ipv4Addr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub protocol: Option<Protocol>,
}

impl TuplePattern {
    pub fn matches(&self, t: &FiveTuple) -> bool {
        self.src_ip.map_or(true, |v| v == t.src_ip)
            && self.dst_ip.map_or(true, |v| v == t.dst_ip)
            && self.src_port.map_or(true, |v| v == t.src_port)
            && self.dst_port.map_or(true, |v| v == t.dst_port)
            && self.protocol.map_or(true, |v| v == t.protocol)
    }
}

/// Ground-truth labeling rule: a tuple pattern plus a time window.
///
/// Windows are inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRule {
    pub pattern: TuplePattern,
    pub window_start_us: u64,
    pub window_end_us: u64,
    pub label: String,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("class '{0}' has zero records")]
    EmptyClass(String),
    #[error("record at index {0} is unlabeled; run apply_labels first")]
    Unlabeled(usize),
    #[error("label rule file line {line}: {msg}")]
    RuleParse { line: usize, msg: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("max_len must be at least 1")]
    BadMaxLen,
}

impl LabelRule {
    pub fn new(
        pattern: TuplePattern,
        window_start_us: u64,
        window_end_us: u64,
        label: impl Into<String>,
    ) -> Result<Self, IngestError> {
        if window_start_us > window_end_us {
            return Err(IngestError::RuleParse {
                line: 0,
                msg: format!("window start {window_start_us} after end {window_end_us}"),
            });
        }
        Ok(LabelRule {
            pattern,
            window_start_us,
            window_end_us,
            label: label.into(),
        })
    }

    pub fn matches(&self, record: &PayloadRecord) -> bool {
        self.pattern.matches(&record.tuple)
            && record.timestamp_us >= self.window_start_us
            && record.timestamp_us <= self.window_end_us
    }
}

fn parse_wild<T>(field: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>, String> {
    if field == "*" {
        return Ok(None);
    }
    parse(field)
        .map(Some)
        .ok_or_else(|| format!("invalid field '{field}'"))
}

/// Parse label rules from CSV text.
///
/// Columns: `src_ip,dst_ip,src_port,dst_port,protocol,start_us,end_us,label`
/// with `*` as a wildcard in any of the first five columns. Lines starting
/// with `#` are comments.
pub fn parse_label_rules(text: &str) -> Result<Vec<LabelRule>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rules = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 1;
        let err = |msg: String| IngestError::RuleParse { line, msg };
        let row = row.map_err(|e| err(e.to_string()))?;
        if row.len() != 8 {
            return Err(err(format!("expected 8 columns, got {}", row.len())));
        }
        let pattern = TuplePattern {
            src_ip: parse_wild(&row[0], |s| s.parse().ok()).map_err(&err)?,
            dst_ip: parse_wild(&row[1], |s| s.parse().ok()).map_err(&err)?,
            src_port: parse_wild(&row[2], |s| s.parse().ok()).map_err(&err)?,
            dst_port: parse_wild(&row[3], |s| s.parse().ok()).map_err(&err)?,
            protocol: parse_wild(&row[4], |s| match s.to_ascii_uppercase().as_str() {
                "TCP" => Some(Protocol::Tcp),
                "UDP" => Some(Protocol::Udp),
                _ => None,
            })
            .map_err(&err)?,
        };
        let start: u64 = row[5]
            .parse()
            .map_err(|_| err(format!("bad start_us '{}'", &row[5])))?;
        let end: u64 = row[6]
            .parse()
            .map_err(|_| err(format!("bad end_us '{}'", &row[6])))?;
        if row[7].is_empty() {
            return Err(err("empty label".into()));
        }
        let rule = LabelRule::new(pattern, start, end, row[7].to_string())
            .map_err(|_| err(format!("window start {start} after end {end}")))?;
        rules.push(rule);
    }
    Ok(rules)
}

/// Load label rules from a CSV file.
pub fn load_label_rules(path: impl AsRef<Path>) -> Result<Vec<LabelRule>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_label_rules(&text)
}

/// Assign each record the label of the first rule whose pattern and time
/// window match it; records matched by no rule take `default_label`.
pub fn apply_labels(records: &mut [PayloadRecord], rules: &[LabelRule], default_label: &str) {
    for record in records.iter_mut() {
        let label = rules
            .iter()
            .find(|r| r.matches(record))
            .map(|r| r.label.clone())
            .unwrap_or_else(|| default_label.to_string());
        record.label = Some(label);
    }
}

/// Collapse records with byte-identical payloads to the first occurrence,
/// preserving order. The key is the payload alone, not the five-tuple.
pub fn deduplicate(records: Vec<PayloadRecord>) -> Vec<PayloadRecord> {
    let mut seen: HashSet<Vec<u8>> = HashSet::with_capacity(records.len());
    records
        .into_iter()
        .filter(|r| seen.insert(r.bytes.clone()))
        .collect()
}

/// Downsample every class to the size of the smallest class, uniformly at
/// random under `seed`, and shuffle the result deterministically.
///
/// When `expected_classes` is given, each listed class must be present;
/// a missing class is an error naming it.
pub fn balance_classes(
    records: Vec<PayloadRecord>,
    expected_classes: Option<&[String]>,
    seed: u64,
) -> Result<Vec<PayloadRecord>, IngestError> {
    let mut by_class: BTreeMap<String, Vec<PayloadRecord>> = BTreeMap::new();
    for (i, r) in records.into_iter().enumerate() {
        let label = r.label.clone().ok_or(IngestError::Unlabeled(i))?;
        by_class.entry(label).or_default().push(r);
    }
    if let Some(expected) = expected_classes {
        for class in expected {
            if !by_class.contains_key(class) {
                return Err(IngestError::EmptyClass(class.clone()));
            }
        }
    }
    if by_class.is_empty() {
        return Ok(Vec::new());
    }
    let target = by_class.values().map(Vec::len).min().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(target * by_class.len());
    // BTreeMap iteration keeps class order stable across runs.
    for (_, mut class_records) in by_class {
        class_records.shuffle(&mut rng);
        class_records.truncate(target);
        out.extend(class_records);
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Padded integer sequences ready for the byte encoder.
///
/// Rows are stored flat with stride `row_len`; tokens are byte values
/// `0..=255` with [`PAD_TOKEN`] filling positions at or past each row's
/// true length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDataset {
    pub row_len: usize,
    pub tokens: Vec<u16>,
    pub lengths: Vec<u32>,
    pub labels: Vec<u32>,
    pub class_names: Vec<String>,
}

impl TokenizedDataset {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u16] {
        &self.tokens[i * self.row_len..(i + 1) * self.row_len]
    }

    /// Token ids of row `i` up to its true (unpadded) length.
    pub fn row_trimmed(&self, i: usize) -> &[u16] {
        &self.row(i)[..self.lengths[i] as usize]
    }

    pub fn class_index(&self, name: &str) -> Option<u32> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .map(|i| i as u32)
    }

    /// Record indices belonging to the given class index.
    pub fn indices_of_class(&self, class: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Subset with only the given classes, labels re-indexed against the
    /// (sorted) retained class list.
    pub fn restrict_to_classes(&self, keep: &[String]) -> Result<TokenizedDataset, IngestError> {
        let mut keep_sorted = keep.to_vec();
        keep_sorted.sort();
        keep_sorted.dedup();
        let mut old_to_new: BTreeMap<u32, u32> = BTreeMap::new();
        for name in &keep_sorted {
            match self.class_index(name) {
                Some(old) => {
                    old_to_new.insert(old, old_to_new.len() as u32);
                }
                None => return Err(IngestError::EmptyClass(name.clone())),
            }
        }
        let mut tokens = Vec::new();
        let mut lengths = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            if let Some(&new) = old_to_new.get(&self.labels[i]) {
                tokens.extend_from_slice(self.row(i));
                lengths.push(self.lengths[i]);
                labels.push(new);
            }
        }
        Ok(TokenizedDataset {
            row_len: self.row_len,
            tokens,
            lengths,
            labels,
            class_names: keep_sorted,
        })
    }
}

/// Convert labeled payload records into a padded token matrix.
///
/// Payload bytes become tokens `0..=255`, truncated at `max_len` and
/// right-padded with [`PAD_TOKEN`]. Class names are sorted
/// lexicographically and mapped to indices in that order.
pub fn tokenize(
    records: &[PayloadRecord],
    max_len: usize,
) -> Result<TokenizedDataset, IngestError> {
    if max_len == 0 {
        return Err(IngestError::BadMaxLen);
    }
    let mut class_names: Vec<String> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let label = r.label.as_ref().ok_or(IngestError::Unlabeled(i))?;
        if !class_names.contains(label) {
            class_names.push(label.clone());
        }
    }
    class_names.sort();
    let mut tokens = Vec::with_capacity(records.len() * max_len);
    let mut lengths = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let n = r.bytes.len().min(max_len);
        tokens.extend(r.bytes[..n].iter().map(|&b| b as u16));
        tokens.extend(std::iter::repeat(PAD_TOKEN).take(max_len - n));
        lengths.push(n as u32);
        let label = r.label.as_ref().unwrap();
        labels.push(class_names.iter().position(|c| c == label).unwrap() as u32);
    }
    Ok(TokenizedDataset {
        row_len: max_len,
        tokens,
        lengths,
        labels,
        class_names,
    })
}
