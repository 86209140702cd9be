#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use gmad_core::metrics::{plcc, srcc};
use gmad_core::miner::oracle::{caps_respected, oracle_mine};
use gmad_core::miner::{
    build_level_bins, mine_pairs, run_competition, BinConfig, Comparison,
    DiversityBudget, DiversityCaps, Role, ScoreTable,
};
use gmad_core::model::{init_params, Layer, ModelParams};
use gmad_core::objectives::{
    annotator_nll, annotator_nll_backward, fidelity_grad, fidelity_loss, mean_fidelity_backward,
    mean_fidelity_objective, thurstone_prob, AnnotatorReliability, LabelSource, NoisyPair,
    PairLabel,
};
use gmad_core::pool::{ImageRecord, Pool};
use gmad_core::sim::{build_sim_world, simulate_ratings, SimConfig};
use gmad_core::subjective::{augment_d3, screen_outliers, MosRecord, RatingRecord};
use gmad_core::trainer::{pretrain, TrainConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const MIN_PROBES: usize = 100;

/// Fourth-order central difference of `f` at 0.
pub fn central_diff(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

/// Relative error with a floor for near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub struct GradProbe {
    pub name: &'static str,
    pub probes: usize,
    pub max_rel_err: f64,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// A scorer with every parameter moved away from its initialization, GDN
/// parameters kept in the valid region.
pub fn random_params(rng: &mut ChaCha8Rng, dims: &[usize]) -> ModelParams {
    let mut p = init_params(rng.random(), dims).unwrap();
    for layer in &mut p.layers {
        match layer {
            Layer::Affine(a) => {
                a.bias.iter_mut().for_each(|b| *b = 0.3 * gauss(rng));
            }
            Layer::Gdn(g) => {
                g.omega.iter_mut().for_each(|o| *o = rng.random_range(0.5..1.5));
                g.gamma.iter_mut().for_each(|v| *v = rng.random_range(0.02..0.3));
            }
        }
    }
    p.project();
    p
}

/// Flat index of the mirrored entry when `k` is an off-diagonal GDN gamma
/// coefficient. Gamma is a symmetric parameter, so probes move both halves.
fn gamma_mirror(params: &ModelParams, k: usize) -> Option<usize> {
    let mut offset = 0;
    for layer in &params.layers {
        let n = match layer {
            Layer::Affine(a) => a.inputs * a.outputs + a.outputs,
            Layer::Gdn(g) => g.channels + g.channels * g.channels,
        };
        if k < offset + n {
            if let Layer::Gdn(g) = layer {
                let c = g.channels;
                let local = k - offset;
                if local >= c {
                    let (i, j) = ((local - c) / c, (local - c) % c);
                    return (i != j).then_some(offset + c + j * c + i);
                }
            }
            return None;
        }
        offset += n;
    }
    None
}

/// `params` with flat coordinate `k` (and its gamma mirror) moved by `d`.
fn nudged(params: &ModelParams, flat: &[f64], k: usize, d: f64) -> ModelParams {
    let mut f = flat.to_vec();
    f[k] += d;
    if let Some(m) = gamma_mirror(params, k) {
        f[m] += d;
    }
    let mut q = params.clone();
    q.assign_flat(&f).unwrap();
    q
}

fn features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> HashMap<String, Vec<f64>> {
    (0..n)
        .map(|i| (format!("i{i}"), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

/// Central differences against every analytic gradient.
pub fn gradient_probes(seed: u64, probes: usize) -> Vec<GradProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let dims = [6, 5, 4, 1];
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..probes {
        let p = rng.random_range(0.0..=1.0);
        let pw = rng.random_range(0.02..0.98);
        let fd = central_diff(|d| fidelity_loss(p, pw + d).unwrap(), h);
        worst = worst.max(rel_err(fd, fidelity_grad(p, pw)));
    }
    out.push(GradProbe { name: "fidelity loss wrt model probability", probes, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..probes {
        let params = random_params(&mut rng, &dims);
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g = params.score_backward(&x, 1.0).unwrap().values;
        let flat = params.flatten();
        let k = rng.random_range(0..flat.len());
        let eval = |d: f64| nudged(&params, &flat, k, d).score(&x).unwrap();
        worst = worst.max(rel_err(central_diff(eval, h), g[k]));
    }
    out.push(GradProbe { name: "scorer backprop (affine + GDN)", probes, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..probes {
        let params = random_params(&mut rng, &dims);
        let feats = features(&mut rng, 12, dims[0]);
        let batch: Vec<PairLabel> = (0..6)
            .map(|_| {
                let a = rng.random_range(0..12);
                let b = (a + rng.random_range(1..12)) % 12;
                PairLabel::new(format!("i{a}"), format!("i{b}"), rng.random_range(0.0..=1.0), LabelSource::Database).unwrap()
            })
            .collect();
        let (_, g) = mean_fidelity_backward(&params, &batch, &feats).unwrap();
        let flat = params.flatten();
        let k = rng.random_range(0..flat.len());
        let eval = |d: f64| mean_fidelity_objective(&nudged(&params, &flat, k, d), &batch, &feats).unwrap();
        worst = worst.max(rel_err(central_diff(eval, h), g.values[k]));
    }
    out.push(GradProbe { name: "mean fidelity wrt scorer parameters", probes, max_rel_err: worst });

    let mut worst_w = 0.0f64;
    let mut worst_r = 0.0f64;
    for _ in 0..probes {
        let params = random_params(&mut rng, &dims);
        let feats = features(&mut rng, 12, dims[0]);
        let n_ann = rng.random_range(1..7);
        let alpha: Vec<f64> = (0..n_ann).map(|_| rng.random_range(0.55..0.97)).collect();
        let beta: Vec<f64> = (0..n_ann).map(|_| rng.random_range(0.55..0.97)).collect();
        let rel = AnnotatorReliability::new(&alpha, &beta).unwrap();
        let mut batch = Vec::new();
        for _ in 0..6 {
            let a = rng.random_range(0..12);
            let b = (a + rng.random_range(1..12)) % 12;
            let votes = (0..n_ann).map(|_| rng.random_bool(0.6)).collect();
            batch.push(NoisyPair { x: format!("i{a}"), y: format!("i{b}"), votes });
        }
        let (_, gw, gr) = annotator_nll_backward(&params, &rel, &batch, &feats).unwrap();
        let flat = params.flatten();
        let k = rng.random_range(0..flat.len());
        let eval_w = |d: f64| annotator_nll(&nudged(&params, &flat, k, d), &rel, &batch, &feats).unwrap();
        worst_w = worst_w.max(rel_err(central_diff(eval_w, h), gw.values[k]));
        let rflat = rel.flatten();
        let j = rng.random_range(0..rflat.len());
        let eval_r = |d: f64| {
            let mut r = rel.clone();
            let mut f = rflat.clone();
            f[j] += d;
            r.assign_flat(&f).unwrap();
            annotator_nll(&params, &r, &batch, &feats).unwrap()
        };
        worst_r = worst_r.max(rel_err(central_diff(eval_r, h), gr.flatten()[j]));
    }
    out.push(GradProbe { name: "annotator NLL wrt scorer parameters", probes, max_rel_err: worst_w });
    out.push(GradProbe { name: "annotator NLL wrt reliability logits", probes, max_rel_err: worst_r });
    out
}

pub const PHI_1: f64 = 0.841_344_746_068_542_948_6;
pub const ONE_MINUS_SQRT_HALF: f64 = 0.292_893_218_813_452_475_6;

/// Errors of `fidelity_loss(1, 0.5)` and the unit-difference probabilities.
pub fn analytic_constant_errors() -> Vec<(&'static str, f64)> {
    let mos = |id: &str, mos: f64, std: f64| MosRecord { image_id: id.into(), mos, std, n_valid: 15, n_rejected: 0 };
    vec![
        ("fidelity_loss(1, 0.5)", (fidelity_loss(1.0, 0.5).unwrap() - ONE_MINUS_SQRT_HALF).abs()),
        (
            "thurstone probability at unit normalized difference",
            (thurstone_prob(std::f64::consts::SQRT_2, 0.0).unwrap() - PHI_1).abs(),
        ),
        (
            "label probability at unit normalized difference",
            (gmad_core::subjective::mos_preference(&mos("a", 60.0, 3.0), &mos("b", 55.0, 4.0)) - PHI_1).abs(),
        ),
    ]
}

pub struct MleOutcome {
    pub alpha_err: f64,
    pub beta_err: f64,
    pub srcc: f64,
    pub elapsed: Duration,
}

/// Six annotators, 10,000 pairs over images with linear true quality; latent
/// order drawn from `Phi(q_x - q_y)`.
pub fn mle_recovery(seed: u64) -> MleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 16;
    let n_img = 400;
    let w: Vec<f64> = (0..dim).map(|_| gauss(&mut rng)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let feats = features(&mut rng, n_img, dim);
    // Uniform features on [-1, 1] have variance 1/3; scale q to std 2.
    let scale = 2.0 * 3f64.sqrt() / norm;
    let q: HashMap<&str, f64> = feats
        .iter()
        .map(|(id, x)| (id.as_str(), scale * x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()))
        .collect();
    let alpha: Vec<f64> = (0..6).map(|_| rng.random_range(0.7..0.95)).collect();
    let beta: Vec<f64> = (0..6).map(|_| rng.random_range(0.7..0.95)).collect();
    let ids: Vec<String> = (0..n_img).map(|i| format!("i{i}")).collect();
    let mut pairs = Vec::with_capacity(10_000);
    while pairs.len() < 10_000 {
        let x = ids.choose(&mut rng).unwrap();
        let y = ids.choose(&mut rng).unwrap();
        if x == y {
            continue;
        }
        let p = gmad_core::normal::cdf(q[x.as_str()] - q[y.as_str()]);
        let x_better = rng.random_bool(p);
        let votes = alpha
            .iter()
            .zip(&beta)
            .map(|(&a, &b)| if x_better { rng.random_bool(a) } else { !rng.random_bool(b) })
            .collect();
        pairs.push(NoisyPair { x: x.clone(), y: y.clone(), votes });
    }
    let start = Instant::now();
    let params = init_params(seed ^ 7, &[dim, 8, 8, 1]).unwrap();
    let rel0 = AnnotatorReliability::uniform(6, 0.8).unwrap();
    let config = TrainConfig { lr_deep: 1e-2, lr_shallow: 1e-2, max_epochs: 8, seed, ..TrainConfig::default() };
    let out = pretrain(&params, &rel0, &pairs, &feats, &config).unwrap();
    let elapsed = start.elapsed();
    let err = |fit: Vec<f64>, truth: &[f64]| fit.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pred: Vec<f64> = ids.iter().map(|id| out.params.score(&feats[id]).unwrap()).collect();
    let truth: Vec<f64> = ids.iter().map(|id| q[id.as_str()]).collect();
    MleOutcome {
        alpha_err: err(out.reliability.alpha(), &alpha),
        beta_err: err(out.reliability.beta(), &beta),
        srcc: srcc(&pred, &truth).unwrap().unwrap(),
        elapsed,
    }
}

pub struct OracleSweep {
    pub pools: usize,
    pub largest_pool: usize,
    pub comparisons: usize,
    pub mismatches: Vec<String>,
    pub cap_violations: usize,
    pub pairs: usize,
}

fn random_pool(rng: &mut ChaCha8Rng, n: usize) -> Pool {
    let contents = rng.random_range(2..40);
    let types = ["jpeg", "jp2k", "blur", "noise", "color", "contrast", "quant", "gamma"];
    let n_types = rng.random_range(2..=types.len());
    let records = (0..n)
        .map(|i| ImageRecord {
            image_id: format!("img{i:03}"),
            content_id: format!("c{}", rng.random_range(0..contents)),
            distortion_type: types[rng.random_range(0..n_types)].to_string(),
            distortion_level: rng.random_range(1..=5),
            reference_id: None,
            features: vec![0.0],
        })
        .collect();
    Pool::new(records).unwrap()
}

fn random_table(rng: &mut ChaCha8Rng, model: &str, pool: &Pool, ties: bool) -> ScoreTable {
    let raw = pool.ids().map(|id| {
        let v: f64 = rng.random_range(0.0..100.0);
        (id.to_string(), if ties { v.round() } else { v })
    });
    let mut t = ScoreTable::from_raw(model, raw).unwrap();
    for e in t.entries.values_mut() {
        e.mapped = Some(e.raw);
    }
    t
}

/// Greedy miner against the exhaustive oracle on random pools.
pub fn miner_oracle_sweep(seed: u64, pools: usize, max_pool: usize) -> OracleSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sweep = OracleSweep { pools, largest_pool: 0, comparisons: 0, mismatches: Vec::new(), cap_violations: 0, pairs: 0 };
    for case in 0..pools {
        let n = if case == 0 { max_pool } else { rng.random_range(10..=max_pool) };
        sweep.largest_pool = sweep.largest_pool.max(n);
        let pool = random_pool(&mut rng, n);
        let levels = rng.random_range(1..=6);
        let width = rng.random_range(1.0..=100.0 / levels as f64);
        let k = rng.random_range(1..=15);
        let caps = match case % 4 {
            0 => DiversityCaps::unconstrained(),
            1 => DiversityCaps { per_content: Some(rng.random_range(1..4)), per_distortion: Some(rng.random_range(1..6)), per_distortion_pair: Some(rng.random_range(1..3)) },
            _ => DiversityCaps::default(),
        };
        let ties = case % 3 == 0;
        let defender = random_table(&mut rng, "def", &pool, ties);
        let attackers: Vec<ScoreTable> = (0..3).map(|j| random_table(&mut rng, &format!("att{j}"), &pool, ties)).collect();
        let bins = build_level_bins(&defender, pool.ids(), BinConfig { levels, width }).unwrap();
        let mut taken_fast = HashSet::new();
        let mut taken_oracle = HashSet::new();
        for attacker in &attackers {
            sweep.comparisons += 1;
            let cmp = Comparison { defender: &defender, attacker, role: Role::Defender };
            let mut budget = DiversityBudget::new(caps);
            let fast = mine_pairs(&cmp, &bins, &pool, k, &mut budget, &mut taken_fast).unwrap();
            let slow = oracle_mine(attacker, &bins, &pool, k, &caps, &mut taken_oracle).unwrap();
            let fast_rows: Vec<(usize, String, String, f64)> = fast.iter().map(|p| (p.level, p.x.clone(), p.y.clone(), p.objective)).collect();
            if fast_rows != slow {
                sweep.mismatches.push(format!("pool {case} ({n} images) vs {}", attacker.model_id));
            }
            let recs: Vec<(&ImageRecord, &ImageRecord)> = fast.iter().map(|p| (pool.get(&p.x).unwrap(), pool.get(&p.y).unwrap())).collect();
            let mut per_level = BTreeMap::new();
            for p in &fast {
                *per_level.entry(p.level).or_insert(0usize) += 1;
            }
            if !caps_respected(&recs, &caps) || per_level.values().any(|&c| c > k) {
                sweep.cap_violations += 1;
            }
            sweep.pairs += fast.len();
        }
        if taken_fast != taken_oracle {
            sweep.mismatches.push(format!("pool {case}: taken sets differ"));
        }
    }
    sweep
}

/// Pairs in one unconstrained round with `n` references, `l` levels, top `k`.
/// A pool whose quality covers the whole scale evenly, scored by `n + 1`
/// noisy models already on the common scale.
pub fn pair_budget_round(n: usize, l: usize, k: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 3000;
    let quality: Vec<f64> = (0..size).map(|_| rng.random_range(0.0..100.0)).collect();
    let records: Vec<ImageRecord> = (0..size)
        .map(|i| ImageRecord {
            image_id: format!("img{i:05}"),
            content_id: format!("c{:04}", i / 5),
            distortion_type: format!("t{}", i % 5),
            distortion_level: (i % 5 + 1) as u8,
            reference_id: None,
            features: vec![quality[i]],
        })
        .collect();
    let pool = Pool::new(records).unwrap();
    let mut model = |id: String| {
        let mut t = ScoreTable::from_raw(
            id,
            pool.ids().zip(&quality).map(|(img, q)| (img.to_string(), q + 8.0 * gauss(&mut rng))).collect::<Vec<_>>(),
        )
        .unwrap();
        for e in t.entries.values_mut() {
            e.mapped = Some(e.raw.clamp(0.0, 100.0));
        }
        t
    };
    let ours = model("ours".into());
    let refs: Vec<ScoreTable> = (0..n).map(|j| model(format!("ref{j}"))).collect();
    let bins = BinConfig { levels: l, width: 2.5 };
    run_competition(&ours, &refs, bins, &pool, k, DiversityCaps::unconstrained()).unwrap().len()
}

pub struct SubjectiveOutcome {
    pub planted_counts: (usize, usize, usize),
    pub planted_rejected: bool,
    pub clean_rejected_fraction: f64,
    pub clean_outlier_fraction: f64,
    pub augmented: Vec<(usize, usize)>,
}

fn rating(subject: &str, image: &str, score: f64) -> RatingRecord {
    RatingRecord { subject_id: subject.into(), image_id: image.into(), score, session_id: "s".into(), timestamp: 0, training: false }
}

/// Planted constant rater, clean simulated ratings, augmentation sizes.
pub fn subjective_checks(seed: u64) -> SubjectiveOutcome {
    // Fourteen clean subjects at mu +- 10 and one who always answers 50,
    // over four images each at 10, 90 and 50. On a 10-image: mean 12.67,
    // s = 14.38, beta2 = 3.84 so the 2s band (28.75) applies, and 50 sits
    // 37.33 above the mean. Mirrored on the 90s; the 50s are on the mean.
    // P = 4, Q = 4, (P+Q)/12 > 0.05 and |P-Q|/(P+Q) = 0 < 0.3: rejected.
    let mut planted = Vec::new();
    for (mu, tag) in [(10.0, "lo"), (90.0, "hi"), (50.0, "mid")] {
        for i in 0..4 {
            let image = format!("{tag}{i}");
            for s in 0..14 {
                planted.push(rating(&format!("c{s:02}"), &image, if s % 2 == 0 { mu + 10.0 } else { mu - 10.0 }));
            }
            planted.push(rating("planted", &image, 50.0));
        }
    }
    let s = screen_outliers(&planted).unwrap();
    let v = s.verdicts.iter().find(|v| v.subject_id == "planted").unwrap();

    let data = build_sim_world(&SimConfig { seed, d1_pairs: 10, d2_pairs: 10, held_out_pairs: 10, ..SimConfig::default() }).unwrap();
    let ids: Vec<String> = data.pool.ids().take(600).map(str::to_string).collect();
    let clean = simulate_ratings(&data.world, &data.pool, &ids, seed, "clean").unwrap();
    let cs = screen_outliers(&clean).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let augmented = [1usize, 2, 5, 36, 90]
        .iter()
        .map(|&m| {
            let images: Vec<String> = (0..2 * m).map(|i| format!("g{i}")).collect();
            let mos: BTreeMap<String, MosRecord> = images
                .iter()
                .map(|id| (id.clone(), MosRecord { image_id: id.clone(), mos: rng.random_range(0.0..100.0), std: rng.random_range(0.0..8.0), n_valid: 15, n_rejected: 0 }))
                .collect();
            (m, augment_d3(&images, &mos, LabelSource::Gmad { round: 1 }).unwrap().len())
        })
        .collect();
    SubjectiveOutcome {
        planted_counts: (v.above, v.below, v.ratings),
        planted_rejected: v.rejected,
        clean_rejected_fraction: cs.rejected_fraction,
        clean_outlier_fraction: cs.outlier_fraction,
        augmented,
    }
}

/// `(name, srcc, plcc, expected)` for the unit correlation vectors.
pub fn correlation_vectors() -> Vec<(&'static str, f64, f64, f64)> {
    let a = [1.0, 2.0, 3.0, 4.0];
    let run = |b: &[f64]| (srcc(&a, b).unwrap().unwrap(), plcc(&a, b, false).unwrap().value.unwrap());
    let (s1, p1) = run(&[1.0, 2.0, 3.0, 4.0]);
    let (s2, p2) = run(&[4.0, 3.0, 2.0, 1.0]);
    let (s3, _) = run(&[1.0, 3.0, 2.0, 4.0]);
    vec![
        ("identical", s1, p1, 1.0),
        ("reversed", s2, p2, -1.0),
        ("one adjacent swap", s3, 0.8, 0.8),
    ]
}
