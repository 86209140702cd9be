//! Tabular and document encodings of every artifact.
//!
//! Tables are comma-separated with a header row. Documents are pretty JSON
//! carrying a `format_version`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::{GmadPair, Role, ScoreEntry, ScoreTable};
use crate::objectives::{LabelSource, NoisyPair, PairLabel};
use crate::pool::{ImageRecord, Pool};
use crate::subjective::{Case, Histogram, MosRecord, MosTable, RatingRecord};
use crate::trainer::LossTrace;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    format_err(path, e.to_string())
}

/// Writes `contents` through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    serde_json::from_str(&s).map_err(|e| format_err(path, e.to_string()))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_err(path, e))
}

// Pool metadata ------------------------------------------------------------

const POOL_FIXED: [&str; 5] = [
    "image_id",
    "content_id",
    "distortion_type",
    "distortion_level",
    "reference_id",
];

pub fn write_pool(path: &Path, pool: &Pool) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = POOL_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend((0..pool.feature_dim()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for r in pool.records() {
        let mut row = vec![
            r.image_id.clone(),
            r.content_id.clone(),
            r.distortion_type.clone(),
            r.distortion_level.to_string(),
            r.reference_id.clone().unwrap_or_default(),
        ];
        row.extend(r.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_pool(path: &Path) -> Result<Pool> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < POOL_FIXED.len() || header.iter().zip(POOL_FIXED).any(|(a, b)| a != b) {
        return Err(format_err(path, format!("expected leading columns {POOL_FIXED:?}")));
    }
    let mut records = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| format_err(path, format!("row {}: bad {what}", line + 1));
        let level: u8 = row[3].parse().map_err(|_| bad("distortion_level"))?;
        let features = row
            .iter()
            .skip(POOL_FIXED.len())
            .map(|v| v.parse::<f64>().map_err(|_| bad("feature")))
            .collect::<Result<Vec<f64>>>()?;
        records.push(ImageRecord {
            image_id: row[0].to_string(),
            content_id: row[1].to_string(),
            distortion_type: row[2].to_string(),
            distortion_level: level,
            reference_id: (!row[4].is_empty()).then(|| row[4].to_string()),
            features,
        });
    }
    Pool::new(records).map_err(|e| format_err(path, e.to_string()))
}

// Scores ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    image_id: String,
    model_id: String,
    raw: f64,
    mapped: Option<f64>,
}

pub fn write_scores(path: &Path, table: &ScoreTable) -> Result<()> {
    write_rows(
        path,
        table.entries.iter().map(|(id, e)| ScoreRow {
            image_id: id.clone(),
            model_id: table.model_id.clone(),
            raw: e.raw,
            mapped: e.mapped,
        }),
    )
}

pub fn read_scores(path: &Path) -> Result<ScoreTable> {
    let rows: Vec<ScoreRow> = read_rows(path)?;
    let model_id = rows
        .first()
        .map(|r| r.model_id.clone())
        .ok_or_else(|| format_err(path, "empty score table"))?;
    let mut entries = BTreeMap::new();
    for row in rows {
        if row.model_id != model_id {
            return Err(format_err(path, "mixed model ids in one score table"));
        }
        let entry = ScoreEntry {
            raw: row.raw,
            mapped: row.mapped,
        };
        if entries.insert(row.image_id.clone(), entry).is_some() {
            return Err(format_err(path, format!("duplicate image `{}`", row.image_id)));
        }
    }
    Ok(ScoreTable { model_id, entries })
}

// Ratings and MOS --------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RatingRow {
    subject_id: String,
    session_id: String,
    image_id: String,
    score: f64,
    timestamp: u64,
    #[serde(default)]
    training: bool,
}

pub fn write_ratings(path: &Path, ratings: &[RatingRecord]) -> Result<()> {
    write_rows(path, ratings.iter().map(rating_row))
}

fn rating_row(r: &RatingRecord) -> RatingRow {
    RatingRow {
        subject_id: r.subject_id.clone(),
        session_id: r.session_id.clone(),
        image_id: r.image_id.clone(),
        score: r.score,
        timestamp: r.timestamp,
        training: r.training,
    }
}

/// Header line of the ratings table.
pub const RATINGS_HEADER: &str = "subject_id,session_id,image_id,score,timestamp,training";

/// One ratings-table line, without the trailing newline.
pub fn rating_line(r: &RatingRecord) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.serialize(rating_row(r))?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let s = String::from_utf8(bytes).expect("csv output is utf-8");
    Ok(s.trim_end().to_string())
}

pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let rows: Vec<RatingRow> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| RatingRecord {
            subject_id: r.subject_id,
            image_id: r.image_id,
            score: r.score,
            session_id: r.session_id,
            timestamp: r.timestamp,
            training: r.training,
        })
        .collect())
}

pub fn write_mos(path: &Path, table: &MosTable) -> Result<()> {
    write_rows(path, table.records.values())
}

pub fn read_mos(path: &Path) -> Result<MosTable> {
    let rows: Vec<MosRecord> = read_rows(path)?;
    Ok(MosTable {
        records: rows.into_iter().map(|r| (r.image_id.clone(), r)).collect(),
        exclusions: Vec::new(),
    })
}

// Labels ---------------------------------------------------------------------

/// A probability label with optional gMAD context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub pair_id: String,
    pub x: String,
    pub y: String,
    pub p: f64,
    pub source: LabelSource,
    pub case_tag: Option<Case>,
    pub role: Option<Role>,
}

impl LabelRow {
    pub fn label(&self) -> Result<PairLabel> {
        PairLabel::new(self.x.clone(), self.y.clone(), self.p, self.source)
    }
}

/// Rows for plain labels, numbered `{prefix}{index}`.
pub fn plain_rows(labels: &[PairLabel], prefix: &str) -> Vec<LabelRow> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| LabelRow {
            pair_id: format!("{prefix}{i:06}"),
            x: l.x.clone(),
            y: l.y.clone(),
            p: l.p,
            source: l.source,
            case_tag: None,
            role: None,
        })
        .collect()
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let rows: Vec<LabelRow> = read_rows(path)?;
    for r in &rows {
        r.label().map_err(|e| format_err(path, format!("{}: {e}", r.pair_id)))?;
    }
    Ok(rows)
}

pub fn read_plain_labels(path: &Path) -> Result<Vec<PairLabel>> {
    read_labels(path)?.iter().map(LabelRow::label).collect()
}

// Noisy pairs ------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NoisyRow {
    x: String,
    y: String,
    /// One `0`/`1` character per annotator.
    votes: String,
}

pub fn write_noisy_pairs(path: &Path, pairs: &[NoisyPair]) -> Result<()> {
    write_rows(
        path,
        pairs.iter().map(|p| NoisyRow {
            x: p.x.clone(),
            y: p.y.clone(),
            votes: p.votes.iter().map(|&v| if v { '1' } else { '0' }).collect(),
        }),
    )
}

pub fn read_noisy_pairs(path: &Path) -> Result<Vec<NoisyPair>> {
    let rows: Vec<NoisyRow> = read_rows(path)?;
    rows.into_iter()
        .map(|r| {
            let votes = r
                .votes
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    _ => Err(format_err(path, format!("bad vote string `{}`", r.votes))),
                })
                .collect::<Result<Vec<bool>>>()?;
            Ok(NoisyPair { x: r.x, y: r.y, votes })
        })
        .collect()
}

// Manifest ---------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub round: u32,
    pub pair_id: String,
    pub defender: String,
    pub attacker: String,
    pub role: Role,
    pub level: usize,
    pub image_x: String,
    pub image_y: String,
    pub attacker_diff: f64,
}

/// The pairs of one round sent out for rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub manifest_id: String,
    pub round: u32,
    pub pairs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_pairs(round: u32, pairs: &[GmadPair]) -> Self {
        Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            manifest_id: format!("round-{round}"),
            round,
            pairs: pairs
                .iter()
                .map(|p| ManifestEntry {
                    round,
                    pair_id: p.pair_id.clone(),
                    defender: p.defender_id.clone(),
                    attacker: p.attacker_id.clone(),
                    role: p.role,
                    level: p.level,
                    image_x: p.x.clone(),
                    image_y: p.y.clone(),
                    attacker_diff: p.objective,
                })
                .collect(),
        }
    }

    /// Distinct image ids in first-appearance order.
    pub fn image_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.pairs
            .iter()
            .flat_map(|p| [&p.image_x, &p.image_y])
            .filter(|id| seen.insert(id.as_str()))
            .cloned()
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = read_json(path)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Version {
                found: m.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        Ok(m)
    }
}

/// Mined pairs as a table with the manifest columns.
pub fn write_pairs(path: &Path, round: u32, pairs: &[GmadPair]) -> Result<()> {
    write_rows(path, Manifest::from_pairs(round, pairs).pairs)
}

pub fn read_pairs(path: &Path) -> Result<Vec<GmadPair>> {
    let rows: Vec<ManifestEntry> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|e| GmadPair {
            pair_id: e.pair_id,
            defender_id: e.defender,
            attacker_id: e.attacker,
            level: e.level,
            x: e.image_x,
            y: e.image_y,
            role: e.role,
            objective: e.attacker_diff,
        })
        .collect())
}

// Traces and histograms -------------------------------------------------------

pub fn write_loss_trace(path: &Path, trace: &LossTrace) -> Result<()> {
    write_rows(path, &trace.steps)
}

#[derive(Serialize)]
struct HistRow {
    lo: f64,
    hi: f64,
    count: usize,
}

pub fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    let width = 1.0 / h.counts.len() as f64;
    write_rows(
        path,
        h.edges.iter().zip(&h.counts).map(|(&lo, &count)| HistRow {
            lo,
            hi: lo + width,
            count,
        }),
    )
}
