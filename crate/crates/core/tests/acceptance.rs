//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Instant;

use amlp::clustering::{assign, kmeans_fit_restarts};
use amlp::diagnostics::{h1, h2, monte_carlo_expectation, JointDist};
use amlp::losses::{
    attention_weights, category_consistency, label_case, total_loss, update_labels, AggregationMode, LabelCase,
    LossConfig,
};
use amlp::masking::{masking_ratio, MaskSchedule, MaskStrategy};
use amlp::metrics::{biou, dsc, hd95, sen, BinaryMask, MetricConfig};
use amlp::model::{grad_check, Checkpoint};
use amlp::numerics::{Rng, Tensor};
use amlp::synthdata::{make_dataset, SynthConfig};
use amlp::trainer::{ablate_masking, initial_model, run_pipeline, ExperimentConfig, ModelOptions, Pretrainer};

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, id: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("[{}] {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn criterion_1(s: &mut Suite) {
    let t = Instant::now();
    let sched = MaskSchedule::default();
    let first = masking_ratio(1, &sched).unwrap();
    let at800 = masking_ratio(800, &sched).unwrap();
    let expect = 0.25 + 800f64.ln() / 20.0;
    let series: Vec<f64> = (1..=800).map(|e| masking_ratio(e, &sched).unwrap()).collect();
    let monotone = series.windows(2).all(|w| w[0] <= w[1]);
    let dt = secs(t);
    s.check(
        "1a masking_ratio",
        first == 0.25 && (at800 - expect).abs() <= 1e-12 && monotone && dt < 1.0,
        format!("sigma(1)={first}, |sigma(800)-{expect:.12}|={:.1e}, monotone={monotone}, {dt:.3}s", (at800 - expect).abs()),
    );

    let t = Instant::now();
    let mut rng = Rng::new(101);
    let (mut worst_mean, mut worst_scale) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m = 1 + rng.below(64).unwrap();
        let v: Vec<f64> = (0..m).map(|_| rng.uniform(0.0, 10.0).unwrap()).collect();
        let w = attention_weights(&v).unwrap();
        worst_mean = worst_mean.max((w.iter().sum::<f64>() / m as f64 - 1.0).abs());
        let c = rng.uniform(0.01, 100.0).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let ws = attention_weights(&scaled).unwrap();
        worst_scale = worst_scale.max(w.iter().zip(&ws).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let dt = secs(t);
    s.check(
        "1b attention_weights",
        worst_mean <= 1e-9 && worst_scale <= 1e-12 && dt < 1.0,
        format!("max |mean-1|={worst_mean:.1e}, max scale deviation={worst_scale:.1e}, {dt:.3}s"),
    );

    let t = Instant::now();
    let l_pred: [f64; 4] = [0.1, 0.1, 0.1, 0.5];
    let w = attention_weights(&l_pred).unwrap();
    let literal = LossConfig { aggregation_mode: AggregationMode::Literal, ..LossConfig::default() };
    let tl = total_loss(&l_pred, &w, 0.0, &literal).unwrap();
    let dt = secs(t);
    s.check(
        "1c total_loss literal",
        (tl.report - 1.2).abs() <= 1e-12 && (tl.grad - 1.2).abs() <= 1e-12 && dt < 1.0,
        format!("l_all={:.15} (expected 1.2), {dt:.3}s", tl.report),
    );

    let t = Instant::now();
    let v = category_consistency(&[1u8], &[1.0f64], &[0u8], true, 1e-10).unwrap();
    let expect = -(1e-10f64).ln();
    let dt = secs(t);
    s.check(
        "1d category_consistency saturation",
        (v - expect).abs() <= 1e-9 && (v - 23.0259).abs() < 1e-4 && dt < 1.0,
        format!("L_lcl={v:.10} vs -ln(1e-10)={expect:.10}, {dt:.3}s"),
    );
}

fn criterion_2(s: &mut Suite) {
    let mut rng = Rng::new(202);
    let mut violations = 0;
    let mut checked = 0;
    while checked < 10_000 {
        let ori = rng.below(2).unwrap() as u8;
        let w = if ori == 1 { rng.uniform(1.0, 10.0).unwrap() } else { rng.uniform(0.0, 1.0).unwrap() };
        let case = label_case(ori, w);
        if !matches!(case, LabelCase::ConsistentForeground | LabelCase::ConsistentBackground) {
            violations += 1;
        }
        let new = update_labels(&[ori], &[w], &mut rng).unwrap()[0];
        if new != ori {
            violations += 1;
        }
        checked += 1;
    }
    s.check("2a label update cases 1/2", violations == 0, format!("{violations} violations in {checked} fixtures"));

    let mut freqs = Vec::new();
    for (ori, w, tag) in [(1u8, 0.5, "case3"), (0u8, 2.5, "case4")] {
        let mut draw = Rng::new(203).split(tag);
        let ones: usize = (0..10_000).map(|_| update_labels(&[ori], &[w], &mut draw).unwrap()[0] as usize).sum();
        freqs.push(ones as f64 / 10_000.0);
    }
    let ok = freqs.iter().all(|f| (0.45..=0.55).contains(f));
    s.check("2b label update cases 3/4", ok, format!("P(new=1): case3={:.4}, case4={:.4}", freqs[0], freqs[1]));
}

fn criterion_3(s: &mut Suite) {
    let t = Instant::now();
    let r = grad_check(303, 20).unwrap();
    let dt = secs(t);
    s.check(
        "3 gradient check",
        r.max_rel_error < 1e-5 && dt < 10.0 && r.worst_parameter != "",
        format!(
            "max rel error {:.2e} over {} entries of {} models (worst {}), {dt:.2}s",
            r.max_rel_error, r.entries_checked, r.models, r.worst_parameter
        ),
    );
}

fn brute_force_objective(v: &Tensor) -> f64 {
    let (n, d) = v.dims2().unwrap();
    let mut best = f64::INFINITY;
    // element 0 always in side A; every non-trivial split once
    for mask in 0u32..(1 << (n - 1)) {
        let side = |i: usize| i > 0 && (mask >> (i - 1)) & 1 == 1;
        if (0..n).all(side) || !(0..n).any(side) {
            continue;
        }
        let mut total = 0.0;
        for which in [false, true] {
            let members: Vec<usize> = (0..n).filter(|&i| side(i) == which).collect();
            let mut mean = vec![0.0; d];
            for &i in &members {
                for k in 0..d {
                    mean[k] += v.at(i, k) / members.len() as f64;
                }
            }
            for &i in &members {
                total += (0..d).map(|k| (v.at(i, k) - mean[k]).powi(2)).sum::<f64>();
            }
        }
        best = best.min(total);
    }
    best
}

fn criterion_4(s: &mut Suite) {
    let mut rng = Rng::new(404);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let n = 3 + rng.below(10).unwrap();
        let d = 1 + rng.below(3).unwrap();
        let data: Vec<f64> = (0..n * d).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
        let v = Tensor::matrix(n, d, data).unwrap();
        let fit = kmeans_fit_restarts(&v, &Rng::new(inst), 10, 100, 0.0).unwrap();
        worst = worst.max(fit.objective - brute_force_objective(&v));
    }
    s.check("4a k-means optimality", worst <= 1e-9, format!("max objective gap {worst:.2e} over 100 instances (n<=12)"));

    let mut wrong = 0;
    for inst in 0..100u64 {
        let mut r = Rng::new(4040).split_with("separable", &[inst]);
        let n = 8 + r.below(57).unwrap();
        let k = 1 + r.below((n - 1) / 2).unwrap();
        let d = 4;
        let fg: HashSet<usize> = r.sample_indices(n, k).unwrap().into_iter().collect();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let base = if fg.contains(&i) { 0.9 } else { 0.3 };
            for _ in 0..d {
                data.push(base + r.uniform(-0.05, 0.05).unwrap());
            }
        }
        let v = Tensor::matrix(n, d, data).unwrap();
        let fit = kmeans_fit_restarts(&v, &r, 10, 100, 0.0).unwrap();
        let a = assign(&fit, &v, 0.1).unwrap();
        if (0..n).any(|i| (a.hard_label[i] == 1) != fg.contains(&i)) {
            wrong += 1;
        }
    }
    s.check("4b smaller cluster is foreground", wrong == 0, format!("{wrong} of 100 separable fixtures mislabeled"));
}

fn random_dist(rng: &mut Rng, n: usize) -> JointDist {
    let raw: Vec<f64> = (0..n).map(|_| rng.uniform(1e-6, 1.0).unwrap()).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let rest: f64 = p[1..].iter().sum();
    p[0] = 1.0 - rest;
    JointDist::from_probs(p).unwrap()
}

fn criterion_5(s: &mut Suite) {
    let mut rng = Rng::new(505);
    let (mut violations, mut worst_eq) = (0, 0.0f64);
    for _ in 0..1000 {
        let n = 2 + rng.below(7).unwrap();
        let p = random_dist(&mut rng, n);
        let q = random_dist(&mut rng, n);
        if h2(&p, &q).unwrap() > h1(&p) {
            violations += 1;
        }
        worst_eq = worst_eq.max((h2(&p, &p).unwrap() - h1(&p)).abs());
    }
    s.check(
        "5a Gibbs inequality",
        violations == 0 && worst_eq <= 1e-12,
        format!("{violations} violations in 1000 pairs, max |h2(p,p)-h1(p)|={worst_eq:.1e}"),
    );

    let p = JointDist::from_probs(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let f = |i: usize| [2.0, -1.0, 0.5, 3.0][i];
    let exact: f64 = p.probs().iter().enumerate().map(|(i, w)| w * f(i)).sum();
    let within = (0..100u64)
        .filter(|&seed| {
            let (est, se) = monte_carlo_expectation(f, &p, &mut Rng::new(seed), 100_000).unwrap();
            (est - exact).abs() <= 3.0 * se
        })
        .count();
    s.check("5b Monte Carlo estimator", within >= 95, format!("{within}/100 seeds within 3 standard errors"));
}

fn oracle_boundary(m: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let on = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m[y as usize * w + x as usize];
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if on(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !on(y + dy, x + dx)) {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

fn oracle_band(m: &[bool], h: usize, w: usize, reach: usize) -> HashSet<(usize, usize)> {
    let b = oracle_boundary(m, h, w);
    (0..h * w)
        .map(|i| (i / w, i % w))
        .filter(|&(y, x)| m[y * w + x] && b.iter().any(|&(by, bx)| by.abs_diff(y).max(bx.abs_diff(x)) <= reach))
        .collect()
}

fn oracle_percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn oracle_hd(p: &[bool], g: &[bool], h: usize, w: usize, q: f64) -> (f64, f64) {
    let pb = oracle_boundary(p, h, w);
    let gb = oracle_boundary(g, h, w);
    let directed = |a: &[(usize, usize)], b: &[(usize, usize)]| -> Vec<f64> {
        a.iter()
            .map(|&(y, x)| {
                b.iter()
                    .map(|&(v, u)| ((y as f64 - v as f64).powi(2) + (x as f64 - u as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let (dp, dg) = (directed(&pb, &gb), directed(&gb, &pb));
    let full = dp.iter().chain(&dg).cloned().fold(0.0, f64::max);
    (oracle_percentile(dp, q).max(oracle_percentile(dg, q)), full)
}

fn criterion_6(s: &mut Suite) {
    let cfg = MetricConfig::default();
    let (h, w) = (16, 16);
    let mut rng = Rng::new(606);
    let (mut exact_miss, mut hd_worst, mut hd_over) = (0, 0.0f64, 0);
    let mut fixtures = 0;
    for _ in 0..300 {
        let density = rng.uniform(0.05, 0.7).unwrap();
        let mut draw = || (0..h * w).map(|_| rng.uniform(0.0, 1.0).unwrap() < density).collect::<Vec<bool>>();
        let (pb, gb) = (draw(), draw());
        let (p, g) = (BinaryMask::from_bits(h, w, pb.clone()).unwrap(), BinaryMask::from_bits(h, w, gb.clone()).unwrap());
        let tp = pb.iter().zip(&gb).filter(|(a, b)| **a && **b).count() as f64;
        let (np, ng) = (pb.iter().filter(|&&b| b).count() as f64, gb.iter().filter(|&&b| b).count() as f64);
        let e = cfg.epsilon;
        let d_oracle = (2.0 * tp + e) / (np + ng + e);
        let s_oracle = (tp + e) / (ng + e);
        let (bp, bg) = (oracle_band(&pb, h, w, cfg.boundary_width), oracle_band(&gb, h, w, cfg.boundary_width));
        let union = bp.union(&bg).count();
        let b_oracle = if union == 0 { 1.0 } else { bp.intersection(&bg).count() as f64 / union as f64 };
        if dsc(&p, &g, &cfg).unwrap() != d_oracle
            || sen(&p, &g, &cfg).unwrap() != s_oracle
            || biou(&p, &g, &cfg).unwrap() != b_oracle
        {
            exact_miss += 1;
        }
        if np > 0.0 && ng > 0.0 {
            let (hd_oracle, hausdorff) = oracle_hd(&pb, &gb, h, w, cfg.hd_percentile);
            let got = hd95(&p, &g, &cfg).unwrap();
            hd_worst = hd_worst.max((got - hd_oracle).abs());
            if got > hausdorff + 1e-12 {
                hd_over += 1;
            }
        }
        fixtures += 1;
    }
    let same = BinaryMask::from_bits(h, w, (0..h * w).map(|i| (i / w + i % w) % 3 == 0).collect()).unwrap();
    let ident = (
        dsc(&same, &same, &cfg).unwrap(),
        sen(&same, &same, &cfg).unwrap(),
        biou(&same, &same, &cfg).unwrap(),
        hd95(&same, &same, &cfg).unwrap(),
    );
    s.check(
        "6 metrics vs oracles",
        exact_miss == 0 && hd_worst <= 1e-9 && hd_over == 0 && ident == (1.0, 1.0, 1.0, 0.0),
        format!(
            "{exact_miss} exact mismatches of {fixtures} 16x16 fixtures, max |hd95 error|={hd_worst:.1e}, \
             {hd_over} above Hausdorff, identical masks -> {ident:?}"
        ),
    );
}

fn desk_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.pretrain.epochs = 60;
    cfg.pretrain.lr = 1e-3;
    cfg.finetune.epochs = 30;
    cfg.finetune.lr = 3e-3;
    cfg
}

fn criterion_7(s: &mut Suite) {
    let synth = SynthConfig { image_side: 32, ..SynthConfig::default() };
    let ds = make_dataset(&Rng::new(707), 24, 0.25, &synth).unwrap();
    let mut cfg = desk_config();
    cfg.model = ModelOptions { hidden_dim: 32, embed_dim: 16, neighbor_context: true };
    cfg.pretrain.epochs = 5;
    cfg.finetune.epochs = 5;
    let a = run_pipeline::<f64>(&ds, &cfg, true, None).unwrap();
    let b = run_pipeline::<f64>(&ds, &cfg, true, None).unwrap();
    let same = a.report.to_json() == b.report.to_json();
    s.check("7a end-to-end determinism", same, format!("reports byte-identical: {same} ({} bytes)", a.report.to_json().len()));

    let fresh = || Pretrainer::new(&ds, initial_model::<f64>(&ds, &cfg.model, 0).unwrap(), cfg.pretrain).unwrap();
    let mut full = fresh();
    full.run().unwrap();
    let mut first = fresh();
    first.run_epoch().unwrap();
    first.run_epoch().unwrap();
    let ck = Checkpoint::from_bytes(&first.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap();
    let mut resumed = Pretrainer::<f64>::from_checkpoint(&ck, &ds).unwrap();
    let mut worst = 0.0f64;
    for epoch in 3..=5 {
        let r = resumed.run_epoch().unwrap();
        let f = &full.traces()[epoch - 1];
        for (x, y) in [(r.l_all_report, f.l_all_report), (r.l_all_grad, f.l_all_grad), (r.l_pred, f.l_pred)] {
            worst = worst.max((x - y).abs());
        }
    }
    s.check("7b checkpoint resume", worst <= 1e-12, format!("max loss deviation over 3 post-resume epochs {worst:.1e}"));
}

fn criterion_8(s: &mut Suite) {
    let t = Instant::now();
    let ds = make_dataset(&Rng::new(2024), 200, 0.05, &SynthConfig::default()).unwrap();
    let cfg = desk_config();
    let seeds: Vec<u64> = (0..5).collect();
    let (mut decreased, mut amlp, mut base) = (Vec::new(), Vec::new(), Vec::new());
    for &seed in &seeds {
        let c = cfg.with_seed(seed);
        let run = run_pipeline::<f64>(&ds, &c, true, None).unwrap();
        let tr = &run.report.pretrain;
        decreased.push((tr[0].l_pred_masked, tr[tr.len() - 1].l_pred_masked));
        amlp.push(run.report.metrics.unwrap().means.dsc);
        base.push(run_pipeline::<f64>(&ds, &c, false, None).unwrap().report.metrics.unwrap().means.dsc);
    }
    let all_down = decreased.iter().all(|(a, b)| b < a);
    let trace: Vec<String> = decreased.iter().map(|(a, b)| format!("{a:.4}->{b:.4}")).collect();
    s.check("8a masked L_pred decreases", all_down, format!("epoch 1 -> 60 per seed: {}", trace.join(", ")));

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&amlp), mean(&base));
    s.check(
        "8b pretraining beats baseline",
        ma >= mb + 0.02,
        format!("mean test DSC {ma:.4} (AMLP) vs {mb:.4} (no pretraining), margin {:+.4}", ma - mb),
    );

    let table = ablate_masking::<f64>(&ds, &cfg, &seeds, None).unwrap();
    let complete = table.rows.len() == 3 && table.rows.iter().all(|r| r.dsc.len() == 5 && r.dsc_std.is_finite());
    let consistent = table.row(MaskStrategy::EasyToHard).map(|r| r.dsc == amlp).unwrap_or(false);
    let cells: Vec<String> =
        table.rows.iter().map(|r| format!("{} {:.4}±{:.4}", r.strategy.name(), r.dsc_mean, r.dsc_std)).collect();
    s.check(
        "8c masking-strategy ablation table",
        complete && consistent,
        format!("{} (easy_to_hard matches 8b runs: {consistent})", cells.join(" | ")),
    );
    let random = table.row(MaskStrategy::Random).unwrap().dsc_mean;
    let ordered: Vec<String> = [MaskStrategy::EasyToHard, MaskStrategy::HardToEasy]
        .iter()
        .map(|&st| {
            let m = table.row(st).unwrap().dsc_mean;
            format!("{} {}", st.name(), if m >= random - 0.01 { "holds" } else { "does not hold" })
        })
        .collect();
    println!("[INFO] 8c directional (ordered >= random - 0.01): {}", ordered.join(", "));
    let dt = secs(t);
    s.check("8 runtime", dt < 600.0, format!("{dt:.0}s for the desk-scale experiment (target < 600s)"));
}

fn main() -> ExitCode {
    let mut s = Suite { failures: 0 };
    criterion_1(&mut s);
    criterion_2(&mut s);
    criterion_3(&mut s);
    criterion_4(&mut s);
    criterion_5(&mut s);
    criterion_6(&mut s);
    criterion_7(&mut s);
    criterion_8(&mut s);
    println!("acceptance: {} failure(s)", s.failures);
    if s.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
