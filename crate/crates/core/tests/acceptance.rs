//! Acceptance checks. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::process::Command;
use std::time::Instant;

use medexplore::bench::{toy2d, toy_optima, EvaluationRecord, ProblemSpec, Source};
use medexplore::campaign::{
    best_region_points, compare_designs, initialize, run_cycle, timing_profile, CampaignConfig, ClassifierConfig,
    CompareConfig, InitialDesignConfig,
};
use medexplore::classify::{confusion_metrics, ConfusionMetrics, LogisticObjective};
use medexplore::design::{maximin_lhd, min_pairwise_distance_rows, DesignKind};
use medexplore::gp_ei::{ei_optimize, expected_improvement_from, fit_gp, EiConfig, GpConfig};
use medexplore::med::{charge, impute_records, rank_candidates, total_energy, CandidateScoring, ImputeMode, MedConfig};
use medexplore::rng;
use medexplore::stats;
use medexplore::surrogate::{
    expand_features, fit_lasso, fit_surrogate, lambda_max, lasso_at, select_responses, LassoConfig, SieMatrix,
    SurrogateConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn toy_campaign(seed: u64) -> CampaignConfig {
    CampaignConfig {
        seed,
        initial: InitialDesignConfig { kind: DesignKind::Maximin, n: 20 },
        med: MedConfig { n: 20, iterations: 4, ..Default::default() },
        ..CampaignConfig::new(ProblemSpec::Toy2d { weights: None })
    }
}

const TOY_SEEDS: std::ops::Range<u64> = 0..10;

fn c1_toy_loss() -> Outcome {
    let l = toy2d().evaluate(&[0.5, 0.5]).unwrap().loss.unwrap();
    outcome((l - 4.081e-4).abs() <= 1e-5, format!("loss(0.5,0.5) = {l:.6e}"))
}

fn near(records: &[EvaluationRecord], o: &[f64]) -> bool {
    records.iter().any(|r| r.x.iter().zip(o).all(|(a, b)| (a - b).abs() <= 0.05))
}

fn c2_toy_optima() -> Outcome {
    let mut found = 0;
    let mut slowest: f64 = 0.0;
    for seed in TOY_SEEDS {
        let cfg = toy_campaign(seed);
        let problem = cfg.problem.build().unwrap();
        let start = Instant::now();
        let mut state = initialize(&cfg, &problem).unwrap();
        run_cycle(&cfg, &problem, &mut state).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        if toy_optima().iter().all(|o| near(&state.table.records, o)) {
            found += 1;
        }
    }
    outcome(found >= 8 && slowest < 10.0, format!("both optima found in {found}/10 seeds, slowest seed {slowest:.2}s"))
}

fn c3_budget() -> Outcome {
    let cfg = toy_campaign(0);
    let problem = cfg.problem.build().unwrap();
    let mut state = initialize(&cfg, &problem).unwrap();
    let before = problem.evaluations();
    run_cycle(&cfg, &problem, &mut state).unwrap();
    let spent = problem.evaluations() - before;
    let med_rows = state.table.records.iter().filter(|r| r.source == Source::Med).count();
    outcome(spent == 80 && med_rows == 80, format!("{spent} true evaluations, {med_rows} MED rows"))
}

fn c4_spread_vs_ei() -> Outcome {
    let start = Instant::now();
    let mut ratios = Vec::new();
    for seed in TOY_SEEDS {
        let cfg = toy_campaign(seed);
        let problem = cfg.problem.build().unwrap();
        let mut state = initialize(&cfg, &problem).unwrap();
        let initial = state.table.records.clone();
        run_cycle(&cfg, &problem, &mut state).unwrap();
        let last = &state.table.records[state.table.len() - cfg.med.n..];
        let med = best_region_points(last, 1e-2).min_distance;
        let ei = ei_optimize(&problem, &initial, 20, &EiConfig::default(), seed).unwrap();
        let ei = best_region_points(&ei, 1e-2).min_distance;
        ratios.push(match (med, ei) {
            (Some(m), Some(e)) => m / e,
            _ => f64::NAN,
        });
    }
    let median = stats::median(&ratios);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        median >= 5.0 && secs < 120.0,
        format!("median MED/EI min-distance ratio {median:.2} (per seed {ratios:.1?}), {secs:.1}s"),
    )
}

fn c5_dtlz_comparison() -> Outcome {
    let start = Instant::now();
    let cfg = CompareConfig {
        problem: ProblemSpec::Dtlz2Mod { p: 4 },
        seed_base: 0,
        reps: 50,
        initial: InitialDesignConfig { kind: DesignKind::Maximin, n: 100 },
        med: MedConfig { n: 100, iterations: 1, ..Default::default() },
        uniform_n: Some(200),
        impute: ImputeMode::MaxObserved,
    };
    let s = compare_designs(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        s.median_win_rate >= 0.95 && s.min_win_rate >= 0.55 && s.sd_win_rate >= 0.85 && secs < 900.0,
        format!(
            "median wins {:.2}, min wins {:.2}, sd ratio > 1 in {:.2}, {secs:.1}s",
            s.median_win_rate, s.min_win_rate, s.sd_win_rate
        ),
    )
}

fn c6_med_mechanics() -> Outcome {
    let mut r = rng::stream(6, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = r.random_range(2..=50);
        let p = r.random_range(1..=5);
        let pts: Vec<Vec<f64>> = (0..m).map(|_| (0..p).map(|_| r.random()).collect()).collect();
        let lq: Vec<f64> = (0..m).map(|_| r.random_range(-3.0..3.0)).collect();
        let e = total_energy(&pts, &lq).unwrap();
        let mut brute = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i < j {
                    let d = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    brute += lq[i].exp() * lq[j].exp() / d;
                }
            }
        }
        worst = worst.max((e - brute).abs() / brute);
    }
    let q = charge(16f64.ln(), 2).exp();

    let mut invariant = true;
    for _ in 0..50 {
        let p = r.random_range(1..=4);
        let placed: Vec<Vec<f64>> = (0..r.random_range(0..10)).map(|_| (0..p).map(|_| r.random()).collect()).collect();
        let cands: Vec<Vec<f64>> = (0..30).map(|_| (0..p).map(|_| r.random()).collect()).collect();
        let plr: Vec<f64> = placed.iter().map(|_| r.random_range(-5.0..5.0)).collect();
        let clr: Vec<f64> = cands.iter().map(|_| r.random_range(-5.0..5.0)).collect();
        let shift = r.random_range(-4.0..4.0);
        let shifted = |v: &[f64]| v.iter().map(|l| l + shift).collect::<Vec<_>>();
        let power = p as f64;
        let a = rank_candidates(&placed, &plr, &cands, &clr, p, power, 10);
        let b = rank_candidates(&placed, &shifted(&plr), &cands, &shifted(&clr), p, power, 10);
        invariant &= a == b;
    }
    outcome(
        worst <= 1e-12 && (q - 0.5).abs() < 1e-15 && invariant,
        format!("energy max rel err {worst:.1e}, q(p=2, r=16) = {q}, ranking scale-invariant: {invariant}"),
    )
}

fn c7_invariants() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(7, 0);
    let mut imputed_ok = true;
    let mut gate_ok = true;
    let mut domain_ok = true;
    let mut campaigns = 0;
    for trial in 0..12 {
        let surrogate = trial % 2 == 1;
        let problem = if trial % 3 == 2 { ProblemSpec::Dtlz2Mod { p: 4 } } else { ProblemSpec::Toy2d { weights: None } };
        let cfg = CampaignConfig {
            seed: r.random(),
            cycles: 2,
            initial: InitialDesignConfig { kind: DesignKind::Maximin, n: r.random_range(25..40) },
            med: MedConfig {
                n: r.random_range(5..12),
                iterations: r.random_range(1..4),
                scoring: if surrogate { CandidateScoring::Exact } else { CandidateScoring::Proxy },
                ..Default::default()
            },
            surrogate: surrogate.then(SurrogateConfig::default),
            threshold: r.random_range(0.3..0.7),
            impute: if r.random::<bool>() { ImputeMode::MaxObserved } else { ImputeMode::Fixed(50.0) },
            classifier: ClassifierConfig::default(),
            ..CampaignConfig::new(problem)
        };
        let problem = cfg.problem.build().unwrap();
        let mut state = initialize(&cfg, &problem).unwrap();
        for _ in 0..cfg.cycles {
            let before = problem.evaluations();
            let rows_before = state.table.len();
            run_cycle(&cfg, &problem, &mut state).unwrap();
            let c = state.cycles.last().unwrap();
            let new = &state.table.records[rows_before..];
            domain_ok &= new.iter().all(|rec| rec.x.iter().all(|v| (0.0..=1.0).contains(v)));
            domain_ok &= c.rejected.iter().flatten().all(|v| (0.0..=1.0).contains(v));
            if surrogate {
                let spent = problem.evaluations() - before;
                let gate = state.classifier.as_ref();
                let prob = |x: &[f64]| gate.map_or(1.0, |g| g.predict_proba(x).unwrap());
                gate_ok &= spent == new.len();
                gate_ok &= new.iter().all(|rec| rec.source == Source::Validation && prob(&rec.x) >= cfg.threshold);
                gate_ok &= c.rejected.iter().all(|x| prob(x) < cfg.threshold);
            }
        }
        let losses = impute_records(&state.table.records, cfg.impute).unwrap();
        let max_feasible = stats::max(&state.table.feasible_losses());
        imputed_ok &= state.table.records.iter().zip(&losses).all(|(rec, l)| rec.z || *l >= max_feasible);
        campaigns += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        imputed_ok && gate_ok && domain_ok && secs < 60.0,
        format!("{campaigns} campaigns: imputation {imputed_ok}, gate {gate_ok}, domain {domain_ok}, {secs:.1}s"),
    )
}

fn least_squares(f: &[Vec<f64>], u: &[f64]) -> Vec<f64> {
    let a = DMatrix::from_fn(f.len(), f[0].len() + 1, |i, j| if j == 0 { 1.0 } else { f[i][j - 1] });
    let ata = a.transpose() * &a;
    let atb = a.transpose() * DVector::from_column_slice(u);
    ata.cholesky().unwrap().solve(&atb).iter().copied().collect()
}

fn c8_surrogate() -> Outcome {
    let mut r = rng::stream(8, 0);

    let mut subset_ok = true;
    for _ in 0..200 {
        let q = r.random_range(1..=10);
        let rows: Vec<Vec<f64>> =
            (0..r.random_range(1..6)).map(|_| (0..q).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
        let e = SieMatrix::from_values(rows).unwrap();
        let delta = r.random_range(0.05..0.99);
        let got = select_responses(&e, delta).unwrap();
        let ss = e.column_sum_squares();
        let total: f64 = ss.iter().sum();
        let best = (1u32..1 << q)
            .filter(|m| (0..q).filter(|j| m >> j & 1 == 1).map(|j| ss[j]).sum::<f64>() / total >= delta)
            .map(u32::count_ones)
            .min()
            .unwrap();
        subset_ok &= got.indices.len() == best as usize && got.proportion >= delta;
    }

    let features = expand_features(&[vec![0.5; 45]])[0].len();

    let f: Vec<Vec<f64>> = (0..80).map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let u: Vec<f64> = f.iter().map(|row| 1.0 + 2.0 * row[0] - row[3] + 0.3 * r.random::<f64>()).collect();
    let ls = least_squares(&f, &u);
    let at0 = lasso_at(&f, &u, 0.0, &LassoConfig { tol: 1e-13, ..Default::default() }).unwrap();
    let ls_err = std::iter::once((at0.intercept - ls[0]).abs())
        .chain(at0.coefficients.iter().zip(&ls[1..]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let lmax = lambda_max(&f, &u).unwrap();
    let zeroed = [1.0, 1.5, 10.0]
        .iter()
        .all(|k| lasso_at(&f, &u, k * lmax, &LassoConfig::default()).unwrap().coefficients.iter().all(|b| *b == 0.0));
    let sparse: Vec<f64> = f.iter().map(|row| 3.0 * row[0]).collect();
    let recovered = fit_lasso(&f, &sparse, &LassoConfig::default(), 1).unwrap();
    let support: Vec<usize> =
        (0..5).filter(|&j| recovered.coefficients[j].abs() > 1e-3 * recovered.coefficients[0].abs()).collect();

    // Three correlated transformed responses, each exactly quadratic in x,
    // the later ones built from the first.
    let targets = [1.0, -2.0, 0.5];
    let weights = [0.5, 2.0, 1.0];
    let system = |x: &[f64]| {
        let u1 = 0.2 + x[0] - 0.8 * x[1] * x[1];
        let u2 = 0.5 * u1 + x[2] * x[0] - 0.3;
        let u3 = -u1 + 0.4 * x[1];
        let y: Vec<f64> = [u1, u2, u3]
            .iter()
            .enumerate()
            .map(|(j, u)| targets[j] + if j == 1 { -1.0 } else { 1.0 } * weights[j] * u.exp())
            .collect();
        let loss = medexplore::bench::loss(&y, &targets, &weights).unwrap();
        EvaluationRecord::feasible(x.to_vec(), y, loss)
    };
    let train: Vec<EvaluationRecord> =
        (0..150).map(|_| (0..3).map(|_| r.random::<f64>()).collect::<Vec<f64>>()).map(|x| system(&x)).collect();
    let cfg = SurrogateConfig { delta: 0.999, ..Default::default() };
    let (s, _) = fit_surrogate(&train, &targets, &weights, None, 0.5, &cfg, 3).unwrap();
    let rel: Vec<f64> = (0..200)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| r.random()).collect();
            let truth = system(&x).loss.unwrap();
            (s.predict_loss(&x).unwrap() - truth).abs() / truth
        })
        .collect();
    let med_rel = stats::median(&rel);
    let acyclic = s.models.is_acyclic();

    outcome(
        subset_ok
            && features == 1080
            && ls_err <= 1e-6
            && zeroed
            && support == vec![0]
            && med_rel <= 0.05
            && acyclic,
        format!(
            "greedy subset = exhaustive: {subset_ok}; p=45 -> {features} features; λ=0 vs LS max err {ls_err:.1e}; \
             λ>=λmax zero: {zeroed}; sparse support {support:?}; chained-TR median rel err {med_rel:.2e}"
        ),
    )
}

fn c9_classifier() -> Outcome {
    let mut r = rng::stream(9, 0);
    let mut worst_grad: f64 = 0.0;
    for _ in 0..20 {
        let p = r.random_range(1..5);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..p).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let z: Vec<bool> = (0..40).map(|_| r.random()).collect();
        let obj = LogisticObjective::new(rows, &z, r.random_range(0.0..1.0));
        let params: Vec<f64> = (0..=p).map(|_| r.random_range(-1.0..1.0)).collect();
        let g = obj.gradient(&params);
        for j in 0..=p {
            let h = 1e-5;
            let mut a = params.clone();
            let mut b = params.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (obj.value(&a) - obj.value(&b)) / (2.0 * h);
            worst_grad = worst_grad.max((fd - g[j]).abs() / g[j].abs().max(1e-3));
        }
    }

    let probs = [0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.1];
    let z = [true, true, false, true, false, true, false, false];
    let m = confusion_metrics(&probs, &z, 0.5).unwrap();
    let hand = ConfusionMetrics::from_counts(3, 3, 1, 1);
    let m2 = confusion_metrics(&probs, &z, 0.75).unwrap();
    let counts_ok = m == hand
        && m.sensitivity == Some(0.75)
        && m.specificity == Some(0.75)
        && (m2.tp, m2.fp, m2.tn, m2.fn_) == (2, 0, 4, 2);

    let mut monotone = true;
    for _ in 0..100 {
        let n = r.random_range(2..60);
        let probs: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let z: Vec<bool> = (0..n).map(|_| r.random()).collect();
        let mut last: Option<ConfusionMetrics> = None;
        for k in 0..=20 {
            let m = confusion_metrics(&probs, &z, k as f64 / 20.0).unwrap();
            if let Some(prev) = last {
                monotone &= m.sensitivity.unwrap_or(0.0) <= prev.sensitivity.unwrap_or(0.0)
                    && m.specificity.unwrap_or(1.0) >= prev.specificity.unwrap_or(1.0);
            }
            last = Some(m);
        }
    }
    outcome(
        worst_grad <= 1e-6 && counts_ok && monotone,
        format!("gradient max rel err {worst_grad:.1e}; hand counts {counts_ok}; threshold monotone {monotone}"),
    )
}

fn c10_ei() -> Outcome {
    let mut r = rng::stream(10, 0);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst_z: f64 = 0.0;
    for _ in 0..20 {
        let mu: f64 = r.random_range(-2.0..2.0);
        let sigma: f64 = r.random_range(0.05..2.0);
        let f_min: f64 = mu + sigma * r.random_range(-2.0..2.0);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let draw: f64 = std_normal.sample(&mut r);
            let v = (f_min - (mu + sigma * draw)).max(0.0);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let closed = expected_improvement_from(mu, sigma, f_min);
        worst_z = worst_z.max((closed - mean).abs() / se.max(1e-300));
    }

    let x: Vec<Vec<f64>> = maximin_lhd(15, 2, 50, 3).unwrap().to_rows();
    let y: Vec<f64> = x.iter().map(|v| (3.0 * v[0]).sin() + v[1] * v[1]).collect();
    let gp = fit_gp(&x, &y, &GpConfig::default(), 1).unwrap();
    let interp = x.iter().zip(&y).map(|(v, t)| (gp.predict_mean(v) - t).abs()).fold(0.0, f64::max);
    let interp_tol = 1e-3 * (stats::max(&y) - stats::min(&y)) + 1e3 * gp.nugget.sqrt();

    let problem = toy2d();
    let init = problem.evaluate_batch(&maximin_lhd(20, 2, 100, 0).unwrap().to_rows()).unwrap();
    let ei = ei_optimize(&problem, &init, 20, &EiConfig::default(), 0).unwrap();
    let best = ei.iter().chain(&init).filter_map(|r| r.loss).fold(f64::INFINITY, f64::min);
    let ei_min_distance = min_pairwise_distance_rows(&ei.iter().map(|r| r.x.clone()).collect::<Vec<_>>()).unwrap();

    outcome(
        worst_z <= 3.0 && interp <= interp_tol && best < 1e-3,
        format!(
            "EI vs MC worst |z| {worst_z:.2}; GP interpolation err {interp:.1e} (tol {interp_tol:.1e}); \
             toy EI best loss {best:.2e} (min spacing {ei_min_distance:.1e})"
        ),
    )
}

fn c11_performance() -> Outcome {
    let rows = timing_profile(&[20], &[200], 0, 1).unwrap();
    let secs = rows[0].seconds;
    outcome(secs <= 600.0, format!("MED on dtlz2_mod(20), 200 + 200 points: {secs:.1}s"))
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_medexplore")).args(args).status().map(|s| s.success()).unwrap_or(false)
}

fn c12_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let explore = root.join("explore.toml");
    std::fs::write(
        &explore,
        "schema_version = 1\n[campaign]\nseed = 5\ncycles = 2\n[campaign.problem]\nkind = \"toy2d\"\n\
         [campaign.med]\nn = 10\nk = 2\n[campaign.surrogate]\n",
    )
    .unwrap();
    let compare = root.join("compare.toml");
    std::fs::write(
        &compare,
        "schema_version = 1\n[compare]\nreps = 4\n[compare.problem]\nkind = \"dtlz2_mod\"\np = 4\n\
         [compare.initial]\nn = 30\n[compare.med]\nn = 30\nk = 1\n",
    )
    .unwrap();
    let runs: [(&str, Vec<String>, &[&str]); 4] = [
        ("design", vec!["design".into(), "--type".into(), "omlhd".into(), "--n".into(), "12".into(), "--p".into(), "3".into(), "--seed".into(), "4".into()], &["design.csv"]),
        ("explore", vec!["explore".into(), explore.display().to_string()], &["evaluations.csv", "checkpoint.json", "report.json"]),
        ("compare", vec!["compare".into(), compare.display().to_string()], &["comparison.csv", "summary.json"]),
        ("direct", vec!["explore".into(), "../../configs/toy2d_explore.toml".into()], &["evaluations.csv", "checkpoint.json", "report.json"]),
    ];
    let mut identical = 0;
    let mut checked = 0;
    for (name, args, files) in runs.iter() {
        let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
        for threads in ["1", "2", "8", "0"] {
            let out = root.join(format!("{name}-{threads}"));
            let mut a: Vec<&str> = vec!["--threads", threads];
            a.extend(args.iter().map(String::as_str));
            let out_s = out.display().to_string();
            a.extend(["--out", out_s.as_str()]);
            if !run_cli(&a) {
                return outcome(false, format!("{name} run with --threads {threads} failed"));
            }
            outputs.push(files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect());
        }
        for o in &outputs[1..] {
            checked += files.len();
            identical += o.iter().zip(&outputs[0]).filter(|(a, b)| a == b).count();
        }
    }
    outcome(identical == checked, format!("{identical}/{checked} output files byte-identical across --threads 1/2/8/0"))
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 12] = [
        ("toy loss oracle", c1_toy_loss),
        ("toy optima recovery", c2_toy_optima),
        ("evaluation budget", c3_budget),
        ("spread vs EI", c4_spread_vs_ei),
        ("DTLZ2 comparison", c5_dtlz_comparison),
        ("MED mechanics", c6_med_mechanics),
        ("imputation and gating", c7_invariants),
        ("surrogate pipeline", c8_surrogate),
        ("classifier correctness", c9_classifier),
        ("EI correctness", c10_ei),
        ("performance sanity", c11_performance),
        ("reproducibility", c12_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("criterion {:>2} {:<24} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
