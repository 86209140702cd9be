//! Exhaustive reference implementation of the constrained pair selection.
//!
//! Enumerates every unordered pair in a bin, sorts them once, and scans in
//! that order while recounting the diversity caps from the accepted list. It
//! shares no code with the lazy selector beyond input resolution.

use std::collections::HashSet;

use super::select::resolve;
use super::{pair_key, DiversityCaps, LevelBins, PairKey, ScoreTable};
use crate::error::Result;
use crate::pool::{ImageRecord, Pool};

fn within_caps(accepted: &[(&ImageRecord, &ImageRecord)], caps: &DiversityCaps) -> bool {
    let count = |f: &dyn Fn(&ImageRecord) -> bool| {
        accepted
            .iter()
            .map(|(a, b)| usize::from(f(a)) + usize::from(f(b)))
            .sum::<usize>()
    };
    for (a, b) in accepted {
        for r in [a, b] {
            if caps
                .per_content
                .is_some_and(|cap| count(&|q| q.content_id == r.content_id) > cap)
            {
                return false;
            }
            if caps
                .per_distortion
                .is_some_and(|cap| count(&|q| q.distortion_type == r.distortion_type) > cap)
            {
                return false;
            }
        }
        if let Some(cap) = caps.per_distortion_pair {
            let mut key = [a.distortion_type.as_str(), b.distortion_type.as_str()];
            key.sort();
            let n = accepted
                .iter()
                .filter(|(c, d)| {
                    let mut k2 = [c.distortion_type.as_str(), d.distortion_type.as_str()];
                    k2.sort();
                    k2 == key
                })
                .count();
            if n > cap {
                return false;
            }
        }
    }
    true
}

/// Oracle selection for one comparison: returns `(level, x, y, objective)`.
pub fn oracle_mine(
    attacker: &ScoreTable,
    bins: &LevelBins,
    pool: &Pool,
    k: usize,
    caps: &DiversityCaps,
    taken: &mut HashSet<PairKey>,
) -> Result<Vec<(usize, String, String, f64)>> {
    let mut accepted: Vec<(&ImageRecord, &ImageRecord)> = Vec::new();
    let mut out = Vec::new();
    for (level, members) in bins.members.iter().enumerate() {
        let cands = resolve(members, attacker, pool)?;
        let mut all = Vec::new();
        for i in 0..cands.len() {
            for j in (i + 1)..cands.len() {
                let (a, b) = (&cands[i], &cands[j]);
                let a_first = a.score > b.score || (a.score == b.score && a.id < b.id);
                let (x, y) = if a_first { (a, b) } else { (b, a) };
                all.push((x.score - y.score, x, y));
            }
        }
        all.sort_by(|p, q| {
            q.0.total_cmp(&p.0)
                .then_with(|| p.1.id.cmp(q.1.id))
                .then_with(|| p.2.id.cmp(q.2.id))
        });
        let mut here = 0;
        for (diff, x, y) in all {
            if here == k {
                break;
            }
            let key = pair_key(x.id, y.id);
            if taken.contains(&key) {
                continue;
            }
            accepted.push((x.record, y.record));
            if within_caps(&accepted, caps) {
                taken.insert(key);
                out.push((level, x.id.to_string(), y.id.to_string(), diff));
                here += 1;
            } else {
                accepted.pop();
            }
        }
    }
    Ok(out)
}

/// True when no diversity cap is exceeded by `pairs`.
pub fn caps_respected(pairs: &[(&ImageRecord, &ImageRecord)], caps: &DiversityCaps) -> bool {
    within_caps(pairs, caps)
}
