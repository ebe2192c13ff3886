//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use mlet_core::compress::{low_rank_approx, naive_scale, quantize_int8, quantize_with_scale};
use mlet_core::ctrmodel::{write_checkpoint, CtrModel, ModelMode, TrainConfig, Trainer};
use mlet_core::experiment::{
    run_experiment, threads_from_env, ExperimentConfig, ModeKind, RunRecord, TrainedRun,
};
use mlet_core::gradflow::verify::{classification_table, random_matrix, random_sparse_gradient};
use mlet_core::gradflow::{
    kronecker_basis, mlet_effective_update, reweighted_update, spectral_view, two_layer_sgd_step,
    SparseGradient,
};
use mlet_core::metrics::{pr_auc, roc_auc};
use mlet_core::synthdata::Sample;
use mlet_core::{InitSpec, Matrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

fn dense(g: &SparseGradient) -> DMatrix<f64> {
    na(&g.densify())
}

fn diff_norm(a: &DMatrix<f64>, b: &Matrix) -> f64 {
    (a - na(b)).norm()
}

struct Instance {
    w1: Matrix,
    w2: Matrix,
    g: SparseGradient,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let d = rng.random_range(2..=6);
    let n = rng.random_range(5..=20);
    let k = rng.random_range(1..=2 * d);
    let b = rng.random_range(1..=4);
    Instance {
        w1: random_matrix(d, k, rng),
        w2: random_matrix(k, n, rng),
        g: random_sparse_gradient(d, n, b, rng),
    }
}

fn c1_update_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let eta = 0.05;
    let mut worst = 0.0f64;
    let trials = 200;
    for _ in 0..trials {
        let t = instance(&mut rng);
        let (w1, w2, g) = (na(&t.w1), na(&t.w2), dense(&t.g));
        let w = &w1 * &w2;
        let effective = &w - eta * (&w1 * w1.transpose() * &g + &g * w2.transpose() * &w2);
        let view = spectral_view(&t.w1, &t.w2, &t.g).unwrap();
        let reweighted = reweighted_update(&view, &t.w1.matmul(&t.w2).unwrap(), eta).unwrap();
        let library = mlet_effective_update(&t.w1, &t.w2, &t.g, eta).unwrap();
        let step = (&effective - &w).norm();
        worst = worst
            .max(diff_norm(&effective, &reweighted) / step)
            .max(diff_norm(&effective, &library) / step);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 10.0,
        format!(
            "{trials} instances, max relative gap {worst:.2e} (tol 1e-8), {secs:.2}s (limit 10s)"
        ),
    )
}

/// Double-double value `hi + lo`, enough to make the reference for the
/// second-order check exact at the scale of f64 rounding.
#[derive(Clone, Copy, Default)]
struct Dd(f64, f64);

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl Dd {
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.0, o.0);
        let (hi, lo) = two_sum(s, e + self.1 + o.1);
        Dd(hi, lo)
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p) + self.0 * o.1 + self.1 * o.0;
        let (hi, lo) = two_sum(p, e);
        Dd(hi, lo)
    }
}

type DdMat = Vec<Vec<Dd>>;

fn dd(m: &Matrix) -> DdMat {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| Dd(m[(i, j)], 0.0)).collect())
        .collect()
}

fn dd_mul(a: &DdMat, b: &DdMat) -> DdMat {
    (0..a.len())
        .map(|i| {
            (0..b[0].len())
                .map(|j| (0..b.len()).fold(Dd::default(), |s, l| s.add(a[i][l].mul(b[l][j]))))
                .collect()
        })
        .collect()
}

fn dd_t(a: &DdMat) -> DdMat {
    (0..a[0].len())
        .map(|j| (0..a.len()).map(|i| a[i][j]).collect())
        .collect()
}

/// `a + s * b`.
fn dd_axpy(a: &DdMat, b: &DdMat, s: f64) -> DdMat {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| p.add(q.mul(Dd(s, 0.0))))
                .collect()
        })
        .collect()
}

fn c2_second_order() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let etas = [1e-2, 1e-3, 1e-4];
    let (mut worst_abs, mut worst_spread) = (0.0f64, 0.0f64);
    let trials = 100;
    for _ in 0..trials {
        let t = instance(&mut rng);
        let (w1, w2, g) = (dd(&t.w1), dd(&t.w2), dd(&t.g.densify()));
        let w = dd_mul(&w1, &w2);
        let first = dd_axpy(
            &dd_mul(&dd_mul(&w1, &dd_t(&w1)), &g),
            &dd_mul(&dd_mul(&g, &dd_t(&w2)), &w2),
            1.0,
        );
        let second = dd_mul(&dd_mul(&g, &dd_t(&w2)), &dd_mul(&dd_t(&w1), &g));
        let mut ratios = Vec::new();
        for &eta in &etas {
            let collapsed = two_layer_sgd_step(&t.w1, &t.w2, &t.g, eta)
                .unwrap()
                .collapsed;
            let eq2 = dd_axpy(&w, &first, -eta);
            let mut sq = 0.0;
            for (i, row) in eq2.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    let r = Dd(collapsed[(i, j)], 0.0).add(e.mul(Dd(-1.0, 0.0)));
                    let expected = second[i][j].mul(Dd(eta * eta, 0.0));
                    worst_abs = worst_abs.max(r.add(expected.mul(Dd(-1.0, 0.0))).0.abs());
                    sq += r.0 * r.0;
                }
            }
            ratios.push(sq.sqrt() / (eta * eta));
        }
        if ratios[0] > 0.0 {
            for r in &ratios {
                worst_spread = worst_spread.max((r - ratios[0]).abs() / ratios[0]);
            }
        }
    }
    outcome(
        worst_abs <= 1e-12 && worst_spread <= 1e-6,
        format!(
            "{trials} instances x 3 rates, max |residual - eta^2 term| {worst_abs:.2e} (tol 1e-12), \
             residual/eta^2 spread {worst_spread:.2e} (tol 1e-6)"
        ),
    )
}

fn c3_kronecker_gram() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst, mut cases) = (0.0f64, 0);
    for d in 1..=64 {
        for n in 1..=64 / d {
            for k in [1, d, 2 * d + 1] {
                let w1 = random_matrix(d, k, &mut rng);
                let w2 = random_matrix(k, n, &mut rng);
                let g = random_sparse_gradient(d, n, 2, &mut rng);
                let basis = kronecker_basis(&spectral_view(&w1, &w2, &g).unwrap());
                for (a, x) in basis.iter().enumerate() {
                    for (b, y) in basis.iter().enumerate() {
                        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                        let target = if a == b { 1.0 } else { 0.0 };
                        worst = worst.max((dot - target).abs());
                    }
                }
                cases += 1;
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("{cases} cases with d*n <= 64, max |gram - I| {worst:.2e} (tol 1e-10)"),
    )
}

fn c4_census() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = Vec::new();
    let mut combos = 0;
    for n in 1..=12 {
        for d in 1..=6 {
            for k in 1..=12 {
                let w1 = random_matrix(d, k, &mut rng);
                let w2 = random_matrix(k, n, &mut rng);
                let g = random_sparse_gradient(d, n, 1, &mut rng);
                let view = spectral_view(&w1, &w2, &g).unwrap();
                let top = view.weights.max_abs();
                let counted = view
                    .weights
                    .as_slice()
                    .iter()
                    .filter(|&&x| x > 1e-9 * top)
                    .count();
                let expected = if k < d {
                    k * n + (d - k) * k.min(n)
                } else {
                    d * n
                };
                if counted != expected {
                    mismatches.push((n, d, k, counted, expected));
                }
                combos += 1;
            }
        }
    }
    let mut identity_failures = 0;
    for n in 1..=100i64 {
        for d in 1..=n {
            for k in 1..d {
                if d * n - (n + d - k) * k != (n - k) * (d - k) {
                    identity_failures += 1;
                }
            }
        }
    }
    let table = classification_table(2, 5, &[1, 2, 4], 404).unwrap();
    let mut grid_ok = table[0].1.iter().all(|c| c.symbol() == "1");
    for (row, k) in table[1..].iter().zip([1usize, 2, 4]) {
        for (idx, c) in row.1.iter().enumerate() {
            let (i, j) = (idx / 5, idx % 5);
            let expected = match (i < k.min(2), j < k.min(5)) {
                (true, true) => "**",
                (true, false) => "*",
                (false, _) => "0",
            };
            grid_ok &= c.symbol() == expected;
        }
    }
    let pass = mismatches.is_empty() && identity_failures == 0 && grid_ok && table.len() == 4;
    outcome(
        pass,
        format!(
            "{combos} (n,d,k) combos, {} count mismatches {:?}; identity failures {identity_failures}; \
             d=2,n=5 grid {}",
            mismatches.len(),
            mismatches.first(),
            if grid_ok { "matches" } else { "differs" }
        ),
    )
}

struct Owned {
    sparse: Vec<u32>,
    dense: Vec<f32>,
    label: u8,
}

impl Owned {
    fn view(&self) -> Sample<'_> {
        Sample {
            sparse: &self.sparse,
            dense: &self.dense,
            label: self.label,
        }
    }
}

fn c5_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let cards = [7usize, 7];
    let batch: Vec<Owned> = (0..14)
        .map(|i| Owned {
            sparse: vec![(i % 7) as u32, rng.random_range(0..7)],
            dense: (0..2).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            label: rng.random_range(0..2),
        })
        .collect();
    let samples: Vec<Sample> = batch.iter().map(Owned::view).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut params = 0;
    for mode in [ModelMode::SingleLayer, ModelMode::Mlet { k: 4 }] {
        let mut model = CtrModel::new(mode, 3, &cards, 2, &InitSpec::new(0.5, 5)).unwrap();
        let analytic = model.flat_gradient(&model.backward(&samples).unwrap());
        let base = model.flat_params();
        for p in 0..base.len() {
            let mut x = base.clone();
            x[p] = base[p] + h;
            model.set_flat_params(&x).unwrap();
            let plus = model.loss(&samples).unwrap();
            x[p] = base[p] - h;
            model.set_flat_params(&x).unwrap();
            let minus = model.loss(&samples).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[p];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
        params += base.len();
    }
    outcome(
        worst <= 1e-4,
        format!("{params} parameters over both modes, max relative error {worst:.2e} (tol 1e-4)"),
    )
}

fn changed_columns(before: &Matrix, after: &Matrix) -> (usize, f64) {
    let mut changed = 0;
    let mut min_norm = f64::INFINITY;
    for c in 0..before.cols() {
        let norm = (0..before.rows())
            .map(|r| (after[(r, c)] - before[(r, c)]).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            changed += 1;
        }
        min_norm = min_norm.min(norm);
    }
    (changed, min_norm)
}

fn c6_sparsity_contrast() -> Outcome {
    let n = 1000;
    let batch: Vec<Owned> = [3u32, 250, 500, 999]
        .iter()
        .zip([1u8, 0, 1, 0])
        .map(|(&c, y)| Owned {
            sparse: vec![c],
            dense: vec![0.5, -0.25],
            label: y,
        })
        .collect();
    let samples: Vec<Sample> = batch.iter().map(Owned::view).collect();
    let mut results = Vec::new();
    for mode in [ModelMode::SingleLayer, ModelMode::Mlet { k: 32 }] {
        let init = InitSpec::new(0.25, 6);
        let mut model = CtrModel::new(mode, 8, &[n], 2, &init).unwrap();
        let before = model.collapse().unwrap().bundles()[0].table().unwrap();
        let mut trainer = Trainer::new(&model, TrainConfig::new(6, init)).unwrap();
        trainer.step(&mut model, &samples).unwrap();
        let after = model.collapse().unwrap().bundles()[0].table().unwrap();
        results.push(changed_columns(&before, &after));
    }
    let (single, _) = results[0];
    let (mlet, min_norm) = results[1];
    outcome(
        single <= 4 && mlet == n && min_norm > 0.0,
        format!("b=4, n={n}: single-layer changed {single} columns, MLET changed {mlet} (min column delta {min_norm:.2e})"),
    )
}

struct Grid {
    single: RunRecord,
    mlet: Vec<RunRecord>,
    small_init: RunRecord,
    trained: Vec<TrainedRun>,
    secs: f64,
}

fn find<'a>(records: &'a [RunRecord], label: &str) -> &'a RunRecord {
    records
        .iter()
        .find(|r| r.label == label)
        .unwrap_or_else(|| panic!("missing {label}"))
}

fn run_grid() -> Grid {
    let start = Instant::now();
    let threads = threads_from_env();
    let base = ExperimentConfig {
        d: vec![8],
        seeds: vec![1, 2, 3, 4, 5],
        ..Default::default()
    };
    let mut base = base;
    base.compress.int8 = true;
    let single_cfg = ExperimentConfig {
        mode: ModeKind::Single,
        ..base.clone()
    };
    let mlet_cfg = ExperimentConfig {
        k: vec![8, 16, 32],
        init_std: vec![0.25],
        ..base.clone()
    };
    let small_cfg = ExperimentConfig {
        k: vec![32],
        init_std: vec![0.01],
        ..base
    };
    let (single, mut trained) = run_experiment(&single_cfg, threads).unwrap();
    let (mlet, t2) = run_experiment(&mlet_cfg, threads).unwrap();
    let (small, t3) = run_experiment(&small_cfg, threads).unwrap();
    trained.extend(t2);
    trained.extend(t3);
    Grid {
        single: find(&single, "single-d8").clone(),
        mlet: [
            "mlet-d8-k8-std0.25",
            "mlet-d8-k16-std0.25",
            "mlet-d8-k32-std0.25",
        ]
        .iter()
        .map(|l| find(&mlet, l).clone())
        .collect(),
        small_init: find(&small, "mlet-d8-k32-std0.01").clone(),
        trained,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn seed_mean(r: &RunRecord, f: impl Fn(&mlet_core::experiment::SeedResult) -> f64) -> f64 {
    r.seeds.iter().map(&f).sum::<f64>() / r.seeds.len() as f64
}

fn c7_directional(g: &Grid) -> Outcome {
    let k32 = &g.mlet[2];
    let ll_single = seed_mean(&g.single, |s| s.eval.full.logloss);
    let ll_k32 = seed_mean(k32, |s| s.eval.full.logloss);
    let aucs: Vec<f64> = std::iter::once(&g.single)
        .chain(&g.mlet)
        .map(|r| seed_mean(r, |s| s.eval.full.auc))
        .collect();
    let monotone = aucs.windows(2).all(|w| w[1] >= w[0]);
    let wins = g
        .single
        .seeds
        .iter()
        .zip(&k32.seeds)
        .filter(|(b, m)| m.eval.full.logloss < b.eval.full.logloss)
        .count();
    let auc_wins = g
        .single
        .seeds
        .iter()
        .zip(&k32.seeds)
        .filter(|(b, m)| m.eval.full.auc > b.eval.full.auc)
        .count();
    let pass = ll_k32 < ll_single && monotone && wins >= 4 && g.secs < 900.0;
    outcome(
        pass,
        format!(
            "logloss single {ll_single:.5} vs k32 {ll_k32:.5}; AUC single {:.5} <= k8 {:.5} <= k16 {:.5} <= k32 {:.5}: {monotone}; \
             k32 lower logloss on {wins}/5 seeds (higher AUC on {auc_wins}/5); grid {:.1}s (limit 900s)",
            aucs[0], aucs[1], aucs[2], aucs[3], g.secs
        ),
    )
}

fn c8_rare_slice(g: &Grid) -> Outcome {
    let k32 = &g.mlet[2];
    let rare_b = seed_mean(&g.single, |s| s.eval.least_frequent.pr_auc);
    let rare_m = seed_mean(k32, |s| s.eval.least_frequent.pr_auc);
    let freq_b = seed_mean(&g.single, |s| s.eval.most_frequent.pr_auc);
    let freq_m = seed_mean(k32, |s| s.eval.most_frequent.pr_auc);
    let rare_rel = (rare_m - rare_b) / rare_b;
    let freq_rel = (freq_m - freq_b) / freq_b;
    outcome(
        rare_rel >= freq_rel,
        format!(
            "PR-AUC gain over single-d8: least frequent 10% {:+.2}% ({rare_b:.4} -> {rare_m:.4}), \
             most frequent 10% {:+.2}% ({freq_b:.4} -> {freq_m:.4}); absolute {:+.4} vs {:+.4}",
            100.0 * rare_rel,
            100.0 * freq_rel,
            rare_m - rare_b,
            freq_m - freq_b
        ),
    )
}

fn c9_init(g: &Grid) -> Outcome {
    let big = seed_mean(&g.mlet[2], |s| s.eval.full.auc);
    let small = seed_mean(&g.small_init, |s| s.eval.full.auc);
    outcome(
        small < big,
        format!("mean AUC std 0.01 {small:.5} vs std 0.25 {big:.5}"),
    )
}

fn c10_compression(g: &Grid) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut svd_gap = 0.0f64;
    let mut tables: Vec<Matrix> = (0..20)
        .map(|_| {
            let d = rng.random_range(2..=12);
            let n = rng.random_range(d..=60);
            random_matrix(d, n, &mut rng)
        })
        .collect();
    for run in &g.trained {
        for b in run.model.bundles() {
            tables.push(b.table().unwrap());
        }
    }
    for w in &tables {
        let sigma = na(w).singular_values();
        let mut sigma: Vec<f64> = sigma.iter().copied().collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        for r in 1..=w.rows().min(w.cols()) {
            let lr = low_rank_approx(w, r).unwrap();
            let tail = sigma[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
            let err = diff_norm(&na(w), &lr.reconstructed);
            svd_gap = svd_gap
                .max((err - tail).abs())
                .max((lr.tail_norm - tail).abs());
        }
    }

    let mut quant_worst = 0.0f64;
    for w in &tables {
        let q = quantize_int8(w).unwrap();
        let s = q.scale();
        let deq = q.dequantize();
        for (i, (&x, &c)) in w.as_slice().iter().zip(q.codes()).enumerate() {
            if c.unsigned_abs() < 127 || (x / s).abs() <= 127.0 {
                quant_worst = quant_worst.max((x - deq.as_slice()[i]).abs() / s);
            }
        }
        let naive = quantize_with_scale(w, naive_scale(w)).unwrap();
        let nd = naive.dequantize();
        for (x, y) in w.as_slice().iter().zip(nd.as_slice()) {
            quant_worst = quant_worst.max((x - y).abs() / naive.scale());
        }
    }

    let k32 = &g.mlet[2];
    let run = g
        .trained
        .iter()
        .find(|t| t.meta.label == k32.label && t.result.seed == 1)
        .unwrap();
    let meta = serde_json::to_value(&run.meta).unwrap();
    let mut full = Vec::new();
    write_checkpoint(&mut full, &run.model, &meta, None).unwrap();
    let quantized: Vec<_> = run
        .model
        .bundles()
        .iter()
        .map(|b| quantize_int8(&b.table().unwrap()).unwrap())
        .collect();
    let mut small = Vec::new();
    write_checkpoint(&mut small, &run.model, &meta, Some(&quantized)).unwrap();
    let ratio = full.len() as f64 / small.len() as f64;
    let reported = k32.seeds[0].compressed.unwrap();
    let reported_ratio = reported.bytes_before as f64 / reported.bytes_after as f64;

    let q_single = seed_mean(&g.single, |s| s.compressed.unwrap().eval.full.auc);
    let q_mlet = seed_mean(k32, |s| s.compressed.unwrap().eval.full.auc);

    let pass = svd_gap <= 1e-9
        && quant_worst <= 0.5
        && (7.5..=8.5).contains(&ratio)
        && (reported_ratio - ratio).abs() < 1e-12
        && q_mlet >= q_single;
    outcome(
        pass,
        format!(
            "{} tables: max |svd error - tail norm| {svd_gap:.2e} (tol 1e-9); max int8 error {quant_worst:.4} scale (tol 0.5); \
             checkpoint {} -> {} bytes = {ratio:.2}x; int8 mean AUC mlet-k32 {q_mlet:.5} vs single {q_single:.5}",
            tables.len(),
            full.len(),
            small.len()
        ),
    )
}

fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

fn ap_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (&s, &y) in scores.iter().zip(labels) {
            if s >= t {
                if y == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / pos;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    ap
}

fn c11_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let (mut worst_auc, mut worst_ap) = (0.0f64, 0.0f64);
    let cases = 1000;
    for c in 0..cases {
        let len = rng.random_range(2..=80);
        let levels = if c % 2 == 0 {
            1_000_000
        } else {
            rng.random_range(2..=6)
        };
        let scores: Vec<f64> = (0..len)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        worst_auc = worst_auc
            .max((roc_auc(&scores, &labels).unwrap() - auc_oracle(&scores, &labels)).abs());
        worst_ap =
            worst_ap.max((pr_auc(&scores, &labels).unwrap() - ap_oracle(&scores, &labels)).abs());
    }
    outcome(
        worst_auc <= 1e-12 && worst_ap <= 1e-12,
        format!("{cases} cases (half with heavy ties), max gap roc_auc {worst_auc:.2e}, pr_auc {worst_ap:.2e} (tol 1e-12)"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("C1 update identity", c1_update_identity()),
        ("C2 second-order residual", c2_second_order()),
        ("C3 kronecker basis", c3_kronecker_gram()),
        ("C4 factor census", c4_census()),
        ("C5 gradient check", c5_gradient_check()),
        ("C6 sparsity contrast", c6_sparsity_contrast()),
    ];
    let grid = run_grid();
    results.push(("C7 directional gain", c7_directional(&grid)));
    results.push(("C8 rare slice", c8_rare_slice(&grid)));
    results.push(("C9 init sensitivity", c9_init(&grid)));
    results.push(("C10 compression", c10_compression(&grid)));
    results.push(("C11 metric oracles", c11_metrics()));

    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{}/{} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
