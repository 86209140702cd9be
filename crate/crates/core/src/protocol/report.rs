use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{EvalReport, MeanSe, RoleFidelity};
use crate::miner::Role;
use crate::subjective::Histogram;

pub const REPORT_FORMAT_VERSION: u32 = 1;
/// Largest tolerated rise of the held-out fidelity loss after a round.
pub const HELD_OUT_TOLERANCE: f64 = 0.02;
/// Lower edge of the band where a defender-role mode signals Case I.
pub const CASE_I_BAND: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSummary {
    pub ratings: usize,
    pub outlier_fraction: f64,
    pub rejected_fraction: f64,
    pub rejected_subjects: Vec<String>,
    pub excluded_images: Vec<String>,
    /// Mined pairs without a label because an image lost every rating.
    pub unlabeled_pairs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleHistograms {
    pub defender: Option<Histogram>,
    pub attacker: Option<Histogram>,
}

/// Everything measured in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub format_version: u32,
    pub round: u32,
    pub model_id: String,
    pub updated_model_id: Option<String>,
    pub pool_before: usize,
    pub pool_after: usize,
    pub pairs: usize,
    pub images: usize,
    pub labeled_pairs: usize,
    pub augmented_pairs: Option<usize>,
    pub screening: ScreeningSummary,
    pub cases: BTreeMap<String, usize>,
    pub histograms: RoleHistograms,
    /// Competing model on this round's labels.
    pub gmad_before: RoleFidelity,
    /// Fine-tuned model on the same labels.
    pub gmad_after: Option<RoleFidelity>,
    pub held_out_before: EvalReport,
    pub held_out_after: Option<EvalReport>,
    /// Competing model and references against this round's MOS.
    pub correlations: Vec<EvalReport>,
}

/// Model version `stage` measured on the next round's labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressRow {
    pub stage: u32,
    pub model_id: String,
    pub labels_round: u32,
    pub defender: Option<MeanSe>,
    pub attacker: Option<MeanSe>,
    pub held_out: Option<MeanSe>,
    pub held_out_srcc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub format_version: u32,
    pub seed: u64,
    pub total_rounds: u32,
    pub rounds: Vec<RoundReport>,
    pub progress: Vec<ProgressRow>,
    pub checks: Vec<Check>,
}

fn mean(m: Option<MeanSe>) -> Option<f64> {
    m.map(|m| m.mean)
}

fn decreased(before: Option<MeanSe>, after: Option<MeanSe>) -> (bool, String) {
    match (before, after) {
        (Some(b), Some(a)) => (a.mean < b.mean, format!("{:.4} -> {:.4}", b.mean, a.mean)),
        _ => (false, "missing role bucket".into()),
    }
}

impl ProtocolReport {
    pub fn assemble(seed: u64, total_rounds: u32, rounds: Vec<RoundReport>) -> Result<Self> {
        let progress: Vec<ProgressRow> = rounds
            .iter()
            .map(|r| ProgressRow {
                stage: r.round - 1,
                model_id: r.model_id.clone(),
                labels_round: r.round,
                defender: r.gmad_before.defender,
                attacker: r.gmad_before.attacker,
                held_out: r.held_out_before.mean_fidelity,
                held_out_srcc: r.held_out_before.srcc,
            })
            .collect();
        let mut checks = Vec::new();
        if progress.len() >= 2 {
            for role in [Role::Defender, Role::Attacker] {
                let pick = |p: &ProgressRow| match role {
                    Role::Defender => p.defender,
                    Role::Attacker => p.attacker,
                };
                let (passed, detail) = decreased(pick(&progress[0]), pick(&progress[1]));
                checks.push(Check {
                    name: format!("{} fidelity on gMAD labels falls after round 1", role.as_str()),
                    passed,
                    detail,
                });
            }
        }
        if let Some(r1) = rounds.first() {
            if let Some(after) = &r1.gmad_after {
                for role in [Role::Defender, Role::Attacker] {
                    let (passed, detail) = decreased(r1.gmad_before.get(role), after.get(role));
                    checks.push(Check {
                        name: format!("{} fidelity on round-1 labels falls after fine-tuning", role.as_str()),
                        passed,
                        detail,
                    });
                }
            }
            if let Some(after) = &r1.held_out_after {
                let (b, a) = (mean(r1.held_out_before.mean_fidelity), mean(after.mean_fidelity));
                let (passed, detail) = match (b, a) {
                    (Some(b), Some(a)) => (
                        a - b <= HELD_OUT_TOLERANCE,
                        format!("{b:.4} -> {a:.4} (change {:+.4})", a - b),
                    ),
                    _ => (false, "no held-out pairs".into()),
                };
                checks.push(Check {
                    name: format!("held-out fidelity rises by at most {HELD_OUT_TOLERANCE}"),
                    passed,
                    detail,
                });
            }
            if let Some(h) = &r1.histograms.defender {
                let mode = h.mode();
                checks.push(Check {
                    name: format!("round-1 defender histogram mode above p = {CASE_I_BAND}"),
                    passed: h.edges[mode] >= CASE_I_BAND - 1e-12,
                    detail: format!("mode bin [{:.1}, {:.1}) counts {:?}", h.edges[mode], h.edges[mode] + 0.1, h.counts),
                });
            }
        }
        Ok(Self {
            format_version: REPORT_FORMAT_VERSION,
            seed,
            total_rounds,
            rounds,
            progress,
            checks,
        })
    }

    /// Plain-text tables.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let f = |m: Option<MeanSe>| m.map_or("-".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.se));
        let _ = writeln!(s, "Fidelity of model version s on the gMAD labels of round s+1");
        let _ = writeln!(s, "{:<6} {:<10} {:<20} {:<20} {:<20} {:<8}", "stage", "model", "defender", "attacker", "held-out", "srcc");
        for p in &self.progress {
            let _ = writeln!(
                s,
                "{:<6} {:<10} {:<20} {:<20} {:<20} {:<8}",
                p.stage,
                p.model_id,
                f(p.defender),
                f(p.attacker),
                f(p.held_out),
                p.held_out_srcc.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Rounds");
        let _ = writeln!(s, "{:<6} {:<6} {:<7} {:<8} {:<9} {:<9} {:<22} {:<22}", "round", "pairs", "images", "pool", "outliers", "rejected", "defender hist", "attacker hist");
        for r in &self.rounds {
            let h = |h: &Option<Histogram>| h.as_ref().map_or("-".into(), |h| format!("{:?}", h.counts));
            let _ = writeln!(
                s,
                "{:<6} {:<6} {:<7} {:<8} {:<9} {:<9} {:<22} {:<22}",
                r.round,
                r.pairs,
                r.images,
                format!("{}>{}", r.pool_before, r.pool_after),
                format!("{:.2}%", 100.0 * r.screening.outlier_fraction),
                format!("{:.2}%", 100.0 * r.screening.rejected_fraction),
                h(&r.histograms.defender),
                h(&r.histograms.attacker),
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Correlation with MOS per round");
        for r in &self.rounds {
            for e in &r.correlations {
                let v = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.4}"));
                let _ = writeln!(s, "round {:<3} {:<10} srcc {:<8} plcc {:<8}{}", r.round, e.model_id, v(e.srcc), v(e.plcc), if e.plcc_fallback { " (raw)" } else { "" });
            }
        }
        if !self.checks.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Checks");
            for c in &self.checks {
                let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
        }
        s
    }
}
