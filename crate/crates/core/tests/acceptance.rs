mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use gmad_core::protocol::{init_sim_workspace, prepare_baseline, Protocol, ProtocolConfig, RatingSource, Workspace};
use gmad_core::sim::SimConfig;

const SEED: u64 = 20240;

struct Line {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn gradients() -> Line {
    let start = Instant::now();
    let probes = gradient_probes(SEED, MIN_PROBES);
    let elapsed = start.elapsed();
    let worst = probes.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    let passed = probes.len() >= 5
        && probes.iter().all(|p| p.probes >= MIN_PROBES && p.max_rel_err < GRAD_TOLERANCE)
        && elapsed < Duration::from_secs(60);
    let per: Vec<String> = probes.iter().map(|p| format!("{} {:.1e}", p.name, p.max_rel_err)).collect();
    Line { name: "gradient correctness", passed, detail: format!("worst {worst:.2e} in {elapsed:.1?}; {}", per.join(", ")) }
}

fn constants() -> Line {
    let errs = analytic_constant_errors();
    let passed = errs.iter().all(|(_, e)| *e <= 1e-9);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Line { name: "analytic constants", passed, detail }
}

fn mle() -> Line {
    let out = mle_recovery(SEED);
    let passed = out.alpha_err <= 0.05 && out.beta_err <= 0.05 && out.srcc >= 0.95 && out.elapsed < Duration::from_secs(300);
    Line {
        name: "noisy-annotator MLE recovery",
        passed,
        detail: format!("max |alpha err| {:.4}, max |beta err| {:.4}, srcc {:.4} in {:.1?}", out.alpha_err, out.beta_err, out.srcc, out.elapsed),
    }
}

fn oracle() -> Line {
    let start = Instant::now();
    let sweep = miner_oracle_sweep(SEED, 50, 500);
    let elapsed = start.elapsed();
    let passed = sweep.pools == 50
        && sweep.largest_pool <= 500
        && sweep.mismatches.is_empty()
        && sweep.cap_violations == 0
        && elapsed < Duration::from_secs(120);
    Line {
        name: "miner oracle equivalence",
        passed,
        detail: format!(
            "{} pools (largest {}), {} comparisons, {} pairs, {} mismatches, {} cap violations in {elapsed:.1?}",
            sweep.pools, sweep.largest_pool, sweep.comparisons, sweep.pairs, sweep.mismatches.len(), sweep.cap_violations
        ),
    }
}

fn budget() -> Line {
    let pairs = pair_budget_round(9, 5, 12, SEED);
    Line { name: "pair budget", passed: pairs == 1080, detail: format!("{pairs} pairs, expected 2*12*5*9 = 1080") }
}

fn run_protocol(dir: &Path) -> gmad_core::protocol::ProtocolReport {
    let ws = Workspace::new(dir);
    let config = ProtocolConfig { seed: SEED, ..ProtocolConfig::default() };
    init_sim_workspace(&ws, &SimConfig { seed: SEED, ..SimConfig::default() }, &config).unwrap();
    prepare_baseline(&ws).unwrap();
    Protocol::open(dir).unwrap().run_all(&RatingSource::Simulated { seed: None }).unwrap()
}

fn protocol() -> Vec<Line> {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = run_protocol(a.path());
    let elapsed = start.elapsed();
    run_protocol(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let identical = ta == tb;

    let r1 = &report.rounds[0];
    let before = &r1.gmad_before;
    let after = r1.gmad_after.clone().unwrap_or_default();
    let mean = |m: Option<gmad_core::metrics::MeanSe>| m.map(|m| m.mean);
    let fell = |b: Option<f64>, a: Option<f64>| matches!((b, a), (Some(b), Some(a)) if a < b);
    let (d0, d1) = (mean(before.defender), mean(after.defender));
    let (a0, a1) = (mean(before.attacker), mean(after.attacker));
    let h0 = mean(r1.held_out_before.mean_fidelity);
    let h1 = r1.held_out_after.as_ref().and_then(|e| mean(e.mean_fidelity));
    let held = matches!((h0, h1), (Some(b), Some(a)) if a - b <= 0.02);
    let trend = Line {
        name: "active fine-tuning trend",
        passed: fell(d0, d1) && fell(a0, a1) && held && elapsed < Duration::from_secs(900) && identical,
        detail: format!(
            "defender {d0:.4?} -> {d1:.4?}, attacker {a0:.4?} -> {a1:.4?}, held-out {h0:.4?} -> {h1:.4?}; {} rounds in {elapsed:.1?}; second run {} ({} files)",
            report.rounds.len(),
            if identical { "byte-identical" } else { "differs" },
            ta.len()
        ),
    };

    let hist = r1.histograms.defender.as_ref();
    let mode = hist.map(|h| h.mode());
    let case_i = Line {
        name: "defender histogram mode in p > 0.8",
        passed: mode.is_some_and(|m| m >= 8),
        detail: match hist {
            Some(h) => format!("mode bin [{:.1}, {:.1}), counts {:?}", h.edges[h.mode()], h.edges[h.mode()] + 0.1, h.counts),
            None => "no defender labels".into(),
        },
    };
    vec![trend, case_i]
}

fn subjective() -> Line {
    let out = subjective_checks(SEED);
    let flagged = out.planted_counts == (4, 4, 12) && out.planted_rejected;
    let clean = out.clean_rejected_fraction < 0.01;
    let aug = out.augmented.iter().all(|&(m, n)| n == m * (2 * m - 1));
    let corr = correlation_vectors();
    let vectors = corr.iter().all(|&(_, s, p, want)| (s - want).abs() <= 1e-12 && (p - want).abs() <= 1e-12)
        && (corr[0].1, corr[0].2, corr[1].1, corr[1].2) == (1.0, 1.0, -1.0, -1.0);
    Line {
        name: "subjective pipeline",
        passed: flagged && clean && aug && vectors,
        detail: format!(
            "planted P/Q/n {:?} rejected {}, clean rejected {:.4}, augmented {:?}, correlation vectors {}",
            out.planted_counts,
            out.planted_rejected,
            out.clean_rejected_fraction,
            out.augmented,
            if vectors { "exact" } else { "off" }
        ),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut lines = vec![gradients(), constants(), mle(), oracle(), budget()];
    lines.extend(protocol());
    lines.push(subjective());
    let mut failed = 0;
    for l in &lines {
        println!("{} {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
        failed += usize::from(!l.passed);
    }
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
