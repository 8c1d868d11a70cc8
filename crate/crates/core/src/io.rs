//! File formats.
//!
//! Datasets are JSON lines, one observation per line:
//!
//! ```text
//! {"offer":[0,1,2,3],"blocks":[[2,3],[1],[0]]}
//! ```
//!
//! with blocks listed least preferred first and ids ascending inside each
//! block. Writing is canonical, so write → read → write is byte-identical.
//! Sidecars hold the ground truth (`{"theta":[...],"b":2.0}`), the label map
//! (`{"labels":["a","b",...]}`, indexed by id) and optionally the hidden
//! within-block orderings (one `{"orderings":[[...],...]}` line per
//! observation, aligned with its blocks).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::TopOrderings;
use crate::likelihood::{Dataset, LikelihoodError};
use crate::poset::{Observation, OrderedPartition, PosetError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Stream(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    offer: Vec<usize>,
    blocks: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OrderingsRecord {
    orderings: Vec<Vec<usize>>,
}

/// Ground-truth sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub theta: Vec<f64>,
    pub b: f64,
}

/// Label sidecar: `labels[id]` is the original item name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub labels: Vec<String>,
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::File { path: path.display().to_string(), source })
}

fn invalid(line: usize, e: impl std::fmt::Display) -> IoError {
    IoError::Invalid { line, message: e.to_string() }
}

pub fn write_observations<W: Write>(mut out: W, observations: &[Observation]) -> Result<(), IoError> {
    for obs in observations {
        let record =
            ObservationRecord { offer: obs.offer_set().to_vec(), blocks: obs.partition().blocks().to_vec() };
        serde_json::to_writer(&mut out, &record).map_err(|e| IoError::Stream(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses dataset lines. Blank lines are skipped; line numbers are 1-based.
pub fn read_observations<R: Read>(input: R) -> Result<Vec<Observation>, IoError> {
    let mut observations = Vec::new();
    for (k, line) in BufReader::new(input).lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ObservationRecord =
            serde_json::from_str(&line).map_err(|source| IoError::Json { line: line_no, source })?;
        let partition = OrderedPartition::new(record.blocks).map_err(|e| invalid(line_no, e))?;
        let mut offer = record.offer;
        offer.sort_unstable();
        if offer != partition.offer_set() {
            return Err(invalid(line_no, "offer set differs from the union of the blocks"));
        }
        if partition.kappa() < 2 {
            return Err(invalid(line_no, "observation offers fewer than 2 items"));
        }
        observations.push(Observation::from_partition(partition));
    }
    Ok(observations)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), IoError> {
    write_observations(create(path)?, dataset.observations())
}

/// Reads a dataset with every edge retained. `d` defaults to the largest
/// item id plus one.
pub fn read_dataset(path: &Path, d: Option<usize>) -> Result<Dataset, IoError> {
    let observations = read_observations(open(path)?)?;
    let inferred = observations.iter().flat_map(|o| o.offer_set().last()).max().map_or(0, |m| m + 1);
    Ok(Dataset::all_edges(d.unwrap_or(inferred), observations)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut out = create(path)?;
    serde_json::to_writer(&mut out, value).map_err(|e| IoError::Stream(e.into()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    serde_json::from_reader(BufReader::new(open(path)?)).map_err(|source| IoError::Json { line: 1, source })
}

pub fn write_truth(path: &Path, truth: &TruthFile) -> Result<(), IoError> {
    write_json(path, truth)
}

pub fn read_truth(path: &Path) -> Result<TruthFile, IoError> {
    read_json(path)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<(), IoError> {
    write_json(path, labels)
}

pub fn read_labels(path: &Path) -> Result<LabelMap, IoError> {
    read_json(path)
}

pub fn write_orderings(path: &Path, orderings: &TopOrderings) -> Result<(), IoError> {
    let mut out = create(path)?;
    for per_obs in &orderings.per_observation {
        serde_json::to_writer(&mut out, &OrderingsRecord { orderings: per_obs.clone() })
            .map_err(|e| IoError::Stream(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_orderings(path: &Path) -> Result<TopOrderings, IoError> {
    let mut per_observation = Vec::new();
    for (k, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: OrderingsRecord =
            serde_json::from_str(&line).map_err(|source| IoError::Json { line: k + 1, source })?;
        per_observation.push(record.orderings);
    }
    Ok(TopOrderings { per_observation })
}

/// How a full ranking is coarsened into an ordered partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Unordered top `m` above the unordered rest.
    Split,
    /// `⌊κ/m⌋` blocks of size `m` from the top; the remainder joins the
    /// bottom block.
    Blocks,
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "split" => Ok(Protocol::Split),
            "blocks" => Ok(Protocol::Blocks),
            other => Err(format!("unknown protocol '{other}' (expected split or blocks)")),
        }
    }
}

/// Splits a best-first ranking into blocks (least preferred first) and the
/// matching hidden orderings.
pub fn coarsen_ranking(
    ranking: &[usize],
    m: usize,
    protocol: Protocol,
) -> Result<(OrderedPartition, Vec<Vec<usize>>), String> {
    let kappa = ranking.len();
    if m == 0 {
        return Err("block size must be positive".into());
    }
    if kappa < 2 {
        return Err(format!("ranking has {kappa} item(s); at least 2 are needed"));
    }
    let mut top_first: Vec<&[usize]> = match protocol {
        Protocol::Split => {
            if m >= kappa {
                return Err(format!("split size {m} must be below the ranking length {kappa}"));
            }
            vec![&ranking[..m], &ranking[m..]]
        }
        Protocol::Blocks => {
            let full = kappa / m;
            let mut v: Vec<&[usize]> = ranking.chunks(m).take(full).collect();
            let rest = &ranking[full * m..];
            if !rest.is_empty() {
                v.push(rest);
            }
            v
        }
    };
    if top_first.len() < 2 {
        return Err(format!("block size {m} leaves a single block for a ranking of {kappa} items"));
    }
    top_first.reverse();
    let hidden: Vec<Vec<usize>> =
        top_first.iter().enumerate().map(|(k, b)| if k == 0 { Vec::new() } else { b.to_vec() }).collect();
    let partition =
        OrderedPartition::new(top_first.iter().map(|b| b.to_vec()).collect()).map_err(|e: PosetError| e.to_string())?;
    Ok((partition, hidden))
}

/// Result of ingesting a full-ranking CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub labels: LabelMap,
    pub hidden: TopOrderings,
}

/// Reads header-less CSV rows, each a complete best-first ranking of that
/// row's offered items by label. Labels get dense ids in order of first
/// appearance.
pub fn ingest_rankings<R: Read>(input: R, m: usize, protocol: Protocol) -> Result<Ingested, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut observations = Vec::new();
    let mut hidden = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| IoError::Csv { row, message: e.to_string() })?;
        let mut ranking = Vec::with_capacity(record.len());
        let mut seen = std::collections::HashSet::new();
        for field in record.iter().filter(|f| !f.is_empty()) {
            if !seen.insert(field) {
                return Err(IoError::Csv { row, message: format!("label '{field}' appears twice") });
            }
            let id = *ids.entry(field.to_string()).or_insert_with(|| {
                labels.push(field.to_string());
                labels.len() - 1
            });
            ranking.push(id);
        }
        if ranking.is_empty() {
            continue;
        }
        let (partition, orderings) =
            coarsen_ranking(&ranking, m, protocol).map_err(|message| IoError::Csv { row, message })?;
        observations.push(Observation::from_partition(partition));
        hidden.push(orderings);
    }
    let dataset = Dataset::all_edges(labels.len(), observations)?;
    Ok(Ingested { dataset, labels: LabelMap { labels }, hidden: TopOrderings { per_observation: hidden } })
}
