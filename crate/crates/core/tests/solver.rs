//! Cross-checks the branch-and-bound against a backend that reads only the
//! exported LP text and brute-forces it.

use std::collections::BTreeMap;

use pccc::assign_solver::{
    solve, AssignmentBackend, BackendError, BackendSolution, Solver, SolverOptions, SolverStatus,
};
use pccc::geometry::CenterSet;
use pccc::instance_io::{ConstraintKind, ConstraintSetBuilder, Dataset, PenaltyMode, QSetting};
use pccc::model::build_model;
use pccc::preprocess::preprocess;
use proptest::prelude::*;

#[derive(Debug)]
struct Row {
    terms: Vec<(f64, String)>,
    rhs: f64,
    equality: bool,
}

#[derive(Debug, Default)]
struct Lp {
    objective: Vec<(f64, String)>,
    rows: Vec<Row>,
    binaries: Vec<String>,
}

fn parse_terms(expr: &str) -> Vec<(f64, String)> {
    let mut out = Vec::new();
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for tok in expr.split_whitespace() {
        match tok {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            _ => match tok.parse::<f64>() {
                Ok(v) => coef = Some(v),
                Err(_) => {
                    out.push((sign * coef.take().unwrap_or(1.0), tok.to_string()));
                    sign = 1.0;
                }
            },
        }
    }
    out
}

fn parse_lp(text: &str) -> Lp {
    let mut lp = Lp::default();
    let mut section = "";
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line {
            "Minimize" | "Subject To" | "Bounds" | "Binary" | "End" => {
                section = match line {
                    "Minimize" => "obj",
                    "Subject To" => "st",
                    "Binary" => "bin",
                    _ => "skip",
                };
                continue;
            }
            _ => {}
        }
        let body = line.split_once(':').map_or(line, |(_, b)| b);
        match section {
            "obj" => lp.objective = parse_terms(body),
            "st" => {
                let (lhs, rhs, equality) = if let Some((l, r)) = body.split_once("<=") {
                    (l, r, false)
                } else {
                    let (l, r) = body.split_once('=').unwrap();
                    (l, r, true)
                };
                lp.rows.push(Row {
                    terms: parse_terms(lhs),
                    rhs: rhs.trim().parse().unwrap(),
                    equality,
                });
            }
            "bin" => lp.binaries.push(body.to_string()),
            _ => {}
        }
    }
    lp
}

/// Enumerates the binaries; each continuous variable takes the smallest
/// non-negative value its rows allow (all appear with coefficient -1).
fn brute_force(lp: &Lp) -> Option<(f64, BTreeMap<String, f64>)> {
    let nb = lp.binaries.len();
    assert!(nb <= 22, "too many binaries for enumeration");
    let mut best: Option<(f64, BTreeMap<String, f64>)> = None;
    for mask in 0u64..(1 << nb) {
        let mut values: BTreeMap<String, f64> = lp
            .binaries
            .iter()
            .enumerate()
            .map(|(b, name)| (name.clone(), ((mask >> b) & 1) as f64))
            .collect();
        let mut ok = true;
        let mut aux: BTreeMap<String, f64> = BTreeMap::new();
        for row in &lp.rows {
            let mut fixed = 0.0;
            let mut free = None;
            for (c, name) in &row.terms {
                match values.get(name) {
                    Some(v) => fixed += c * v,
                    None => free = Some(name.clone()),
                }
            }
            match free {
                None if row.equality => ok &= (fixed - row.rhs).abs() < 1e-9,
                None => ok &= fixed <= row.rhs + 1e-9,
                Some(name) => {
                    let e = aux.entry(name).or_insert(0.0);
                    *e = e.max(fixed - row.rhs);
                }
            }
            if !ok {
                break;
            }
        }
        if !ok {
            continue;
        }
        values.extend(aux);
        let value: f64 = lp
            .objective
            .iter()
            .map(|(c, n)| c * values.get(n).copied().unwrap_or(0.0))
            .sum();
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, values));
        }
    }
    best
}

struct BruteForceBackend;

impl AssignmentBackend for BruteForceBackend {
    fn solve_lp(
        &self,
        lp: &str,
        _options: &SolverOptions,
    ) -> Result<BackendSolution, BackendError> {
        match brute_force(&parse_lp(lp)) {
            Some((_, values)) => Ok(BackendSolution {
                values: values.into_iter().collect(),
                status: SolverStatus::Optimal,
            }),
            None => Ok(BackendSolution {
                values: Vec::new(),
                status: SolverStatus::Infeasible,
            }),
        }
    }
}

fn lp_constant(lp: &str) -> f64 {
    lp.lines()
        .find_map(|l| l.strip_prefix("\\ constant: "))
        .map_or(0.0, |v| v.trim().parse().unwrap())
}

fn instance_strategy() -> impl Strategy<
    Value = (
        Vec<Vec<f64>>,
        Vec<Vec<f64>>,
        Vec<(usize, usize, u8, f64)>,
        f64,
        usize,
    ),
> {
    (2usize..=6, 1usize..=3).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), n),
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), k),
            prop::collection::vec((0..n, 0..n, 0u8..5, 0.05f64..1.0), 0..8),
            0.1f64..10.0,
            1usize..=k,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn builtin_matches_lp_brute_force((rows, centers, cons, p, q) in instance_strategy()) {
        let dataset = Dataset::from_rows(&rows, None).unwrap();
        let centers = CenterSet::from_rows(&centers).unwrap();
        let mut b = ConstraintSetBuilder::new();
        for (i, j, kind, w) in cons {
            if i == j {
                continue;
            }
            let kind = match kind {
                0 => ConstraintKind::MustLink,
                1 => ConstraintKind::CannotLink,
                2 | 3 => ConstraintKind::SoftCannotLink,
                _ => ConstraintKind::SoftMustLink,
            };
            b.add(i, j, kind, w);
        }
        let cs = b.build();
        let Ok(graph) = preprocess(&dataset, &cs) else {
            return Ok(());
        };
        let q = if q == centers.k() { QSetting::Full } else { QSetting::Nearest(q) };
        let Ok(model) = build_model(&graph, &centers, q, PenaltyMode::Fixed(p)) else {
            return Ok(());
        };
        let builtin = solve(&model, &SolverOptions::default());
        let lp = model.to_lp();
        let oracle = brute_force(&parse_lp(&lp));
        match oracle {
            None => prop_assert_eq!(builtin.status, SolverStatus::Infeasible),
            Some((value, _)) => {
                prop_assert_eq!(builtin.status, SolverStatus::Optimal);
                let expect = value + lp_constant(&lp);
                prop_assert!((builtin.objective - expect).abs() <= 1e-6 * expect.abs().max(1.0),
                    "builtin {} vs lp {}", builtin.objective, expect);
            }
        }

        let mut routed = Solver::builtin();
        routed.attach_backend("brute-force", Box::new(BruteForceBackend)).unwrap();
        let external = routed.solve(&model, &SolverOptions::default()).unwrap();
        prop_assert_eq!(external.status, builtin.status);
        if external.has_solution() {
            prop_assert!((external.objective - builtin.objective).abs() <= 1e-6 * builtin.objective.abs().max(1.0));
        }
    }
}

#[test]
fn lp_export_of_illustrative_model_is_parseable() {
    let dataset = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![5.0]], None).unwrap();
    let centers = CenterSet::from_rows(&[vec![0.0], vec![5.0]]).unwrap();
    let mut b = ConstraintSetBuilder::new();
    b.add(0, 1, ConstraintKind::SoftCannotLink, 0.5);
    b.add(1, 2, ConstraintKind::SoftMustLink, 0.25);
    let graph = preprocess(&dataset, &b.build()).unwrap();
    let model = build_model(&graph, &centers, QSetting::Full, PenaltyMode::Fixed(4.0)).unwrap();
    let lp = parse_lp(&model.to_lp());
    assert_eq!(lp.binaries.len(), 6);
    assert_eq!(lp.objective.len(), 8);
    let (value, _) = brute_force(&lp).unwrap();
    // the two sensible labelings; the rest put a point on the far center
    let by_hand = [
        // (0, 0, 1): distances 0 + 1 + 0, soft CL 4 * 0.5, soft ML 4 * 0.25
        4.0, // (0, 1, 1): distances 0 + 16 + 0, nothing violated
        16.0,
    ];
    assert_eq!(value, by_hand.iter().copied().fold(f64::INFINITY, f64::min));
}
