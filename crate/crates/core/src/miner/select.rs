use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use super::{build_level_bins, BinConfig, DiversityBudget, DiversityCaps, LevelBins, ScoreTable};
use crate::error::{Error, Result};
use crate::pool::{ImageRecord, Pool};

/// Which side of the comparison the model being fine-tuned plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Defender,
    Attacker,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Defender => "defender",
            Role::Attacker => "attacker",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "defender" => Ok(Role::Defender),
            "attacker" => Ok(Role::Attacker),
            other => Err(Error::InvalidArgument(format!("unknown role `{other}`"))),
        }
    }
}

/// A selected image pair. `x` is the image the attacker scores higher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmadPair {
    pub pair_id: String,
    pub defender_id: String,
    pub attacker_id: String,
    /// Zero-based bin index.
    pub level: usize,
    pub x: String,
    pub y: String,
    pub role: Role,
    pub objective: f64,
}

/// Unordered image pair key.
pub type PairKey = (String, String);

pub fn pair_key(a: &str, b: &str) -> PairKey {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// The two tables of one comparison and the fine-tuned model's role in it.
#[derive(Clone, Copy, Debug)]
pub struct Comparison<'a> {
    pub defender: &'a ScoreTable,
    pub attacker: &'a ScoreTable,
    pub role: Role,
}

/// A bin member resolved to its attacker score and metadata.
pub(crate) struct Candidate<'a> {
    pub id: &'a str,
    pub score: f64,
    pub record: &'a ImageRecord,
}

pub(crate) fn resolve<'a>(
    members: &'a [String],
    attacker: &ScoreTable,
    pool: &'a Pool,
) -> Result<Vec<Candidate<'a>>> {
    members
        .iter()
        .map(|id| {
            let unknown = || Error::UnknownImage(id.clone());
            let score = attacker.mapped(id).ok_or_else(unknown)?;
            let record = pool.get(id).ok_or_else(unknown)?;
            Ok(Candidate { id, score, record })
        })
        .collect()
}

/// Heap entry for the best remaining partner of row `row`.
struct Head<'a> {
    diff: f64,
    x: &'a str,
    y: &'a str,
    row: usize,
    cursor: usize,
}

impl PartialEq for Head<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Head<'_> {}

impl PartialOrd for Head<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Head<'_> {
    // Max-heap: larger diff first, then smaller ids.
    fn cmp(&self, other: &Self) -> Ordering {
        self.diff
            .total_cmp(&other.diff)
            .then_with(|| other.x.cmp(self.x))
            .then_with(|| other.y.cmp(self.y))
    }
}

/// Lazily yields candidate index pairs `(x, y)` in descending attacker
/// difference, ties by `x` id then `y` id. `x` precedes `y` when candidates
/// are ordered by score descending, id ascending.
struct PairStream<'a> {
    cands: &'a [Candidate<'a>],
    by_desc: Vec<usize>,
    by_asc: Vec<usize>,
    rank_desc: Vec<usize>,
    heap: BinaryHeap<Head<'a>>,
}

impl<'a> PairStream<'a> {
    fn new(cands: &'a [Candidate<'a>]) -> Self {
        let n = cands.len();
        let mut by_desc: Vec<usize> = (0..n).collect();
        by_desc.sort_by(|&a, &b| {
            cands[b]
                .score
                .total_cmp(&cands[a].score)
                .then_with(|| cands[a].id.cmp(cands[b].id))
        });
        let mut by_asc: Vec<usize> = (0..n).collect();
        by_asc.sort_by(|&a, &b| {
            cands[a]
                .score
                .total_cmp(&cands[b].score)
                .then_with(|| cands[a].id.cmp(cands[b].id))
        });
        let mut rank_desc = vec![0; n];
        for (r, &i) in by_desc.iter().enumerate() {
            rank_desc[i] = r;
        }
        let mut stream = Self {
            cands,
            by_desc,
            by_asc,
            rank_desc,
            heap: BinaryHeap::with_capacity(n),
        };
        for row in 0..n {
            stream.push_from(row, 0);
        }
        stream
    }

    /// Pushes row `row`'s first valid partner at or after `cursor` in
    /// ascending order.
    fn push_from(&mut self, row: usize, mut cursor: usize) {
        let xi = self.by_desc[row];
        let x = &self.cands[xi];
        while let Some(&yi) = self.by_asc.get(cursor) {
            let y = &self.cands[yi];
            if y.score.total_cmp(&x.score) == Ordering::Greater {
                return;
            }
            if self.rank_desc[yi] > row {
                self.heap.push(Head {
                    diff: x.score - y.score,
                    x: x.id,
                    y: y.id,
                    row,
                    cursor,
                });
                return;
            }
            cursor += 1;
        }
    }
}

impl<'a> Iterator for PairStream<'a> {
    type Item = (&'a Candidate<'a>, &'a Candidate<'a>, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let head = self.heap.pop()?;
        self.push_from(head.row, head.cursor + 1);
        let x = &self.cands[self.by_desc[head.row]];
        let y = &self.cands[self.by_asc[head.cursor]];
        Some((x, y, head.diff))
    }
}

/// Greedy top-`k` selection per level within one comparison. Pairs already
/// in `taken` are skipped; accepted pairs are added to it and charged to
/// `budget`. Output is sorted by level, then objective descending.
pub fn mine_pairs(
    cmp: &Comparison<'_>,
    bins: &LevelBins,
    pool: &Pool,
    k: usize,
    budget: &mut DiversityBudget,
    taken: &mut HashSet<PairKey>,
) -> Result<Vec<GmadPair>> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut out = Vec::new();
    for (level, members) in bins.members.iter().enumerate() {
        let cands = resolve(members, cmp.attacker, pool)?;
        let mut accepted = 0;
        for (x, y, diff) in PairStream::new(&cands) {
            if accepted == k {
                break;
            }
            let key = pair_key(x.id, y.id);
            if taken.contains(&key) || !budget.admits(x.record, y.record) {
                continue;
            }
            budget.charge(x.record, y.record);
            taken.insert(key);
            out.push(GmadPair {
                pair_id: format!(
                    "{}:{}:{}:{}",
                    cmp.defender.model_id, cmp.attacker.model_id, level, accepted
                ),
                defender_id: cmp.defender.model_id.clone(),
                attacker_id: cmp.attacker.model_id.clone(),
                level,
                x: x.id.to_string(),
                y: y.id.to_string(),
                role: cmp.role,
                objective: diff,
            });
            accepted += 1;
        }
    }
    Ok(out)
}

/// Mines every reference against `ours` in both roles, with a fresh budget
/// per comparison and no unordered image pair repeated across the round.
pub fn run_competition(
    ours: &ScoreTable,
    references: &[ScoreTable],
    bins: BinConfig,
    pool: &Pool,
    k: usize,
    caps: DiversityCaps,
) -> Result<Vec<GmadPair>> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("no reference models".into()));
    }
    let mut taken = HashSet::new();
    let mut out = Vec::new();
    let our_bins = build_level_bins(ours, pool.ids(), bins)?;
    for reference in references {
        if reference.model_id == ours.model_id {
            return Err(Error::InvalidArgument(format!(
                "reference `{}` shares the fine-tuned model's id",
                reference.model_id
            )));
        }
        let their_bins = build_level_bins(reference, pool.ids(), bins)?;
        for (role, defender, attacker, level_bins) in [
            (Role::Defender, ours, reference, &our_bins),
            (Role::Attacker, reference, ours, &their_bins),
        ] {
            let cmp = Comparison {
                defender,
                attacker,
                role,
            };
            let mut budget = DiversityBudget::new(caps);
            out.extend(mine_pairs(&cmp, level_bins, pool, k, &mut budget, &mut taken)?);
        }
    }
    Ok(out)
}
