//! Shared fixtures and independent oracles for the integration suites.
//!
//! The distortion oracle here evaluates generators directly through the
//! formula evaluator and enumerates correlations by bitmask, staying
//! independent of both the discrepancy-table engine and the
//! branch-and-bound search it is used to check.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::Rng;

use apxiso::distsys::DistortionSystem;
use apxiso::formula::{evaluate, Binding, Formula, VarIdx};
use apxiso::structure::{Correlation, MetricStructure, Predicate, Sort, SortRelation, Table};

pub fn metric_space(name: &str, metric: Vec<Vec<f64>>) -> MetricStructure {
    let n = metric.len();
    let diameter = metric
        .iter()
        .flat_map(|r| r.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1.0);
    MetricStructure {
        sorts: vec![Sort {
            name: "S".into(),
            points: (0..n).map(|i| format!("{name}{i}")).collect(),
            metric,
            diameter_bound: diameter,
        }],
        predicates: vec![],
        constants: BTreeMap::new(),
    }
}

pub fn two_point(name: &str, d: f64) -> MetricStructure {
    metric_space(name, vec![vec![0.0, d], vec![d, 0.0]])
}

/// Random structure: distinct points in the plane with the Euclidean
/// metric (triangle inequality by construction) and a 1-Lipschitz
/// [0,1]-valued unary predicate U read off the x-coordinate.
pub fn random_structure(rng: &mut StdRng, name: &str, n: usize, with_u: bool) -> MetricStructure {
    let mut coords: Vec<(f64, f64)> = Vec::with_capacity(n);
    while coords.len() < n {
        let p = (
            f64::from(rng.gen_range(0..20u32)) * 0.1,
            f64::from(rng.gen_range(0..20u32)) * 0.1,
        );
        if coords.iter().all(|q| *q != p) {
            coords.push(p);
        }
    }
    let metric: Vec<Vec<f64>> = coords
        .iter()
        .map(|a| {
            coords
                .iter()
                .map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                .collect()
        })
        .collect();
    let mut s = metric_space(name, metric);
    if with_u {
        let values: Vec<f64> = coords.iter().map(|c| (c.0 * 0.5).clamp(0.0, 1.0)).collect();
        s.predicates.push(Predicate {
            name: "U".into(),
            arity: 1,
            arg_sorts: vec!["S".into()],
            values: Table::new(vec![n], values).unwrap(),
            range: (0.0, 1.0),
            lipschitz: vec![1.0],
        });
    }
    s
}

/// A random total and surjective 0/1 matrix.
pub fn random_correlation_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; cols]; rows];
    for row in m.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.gen_bool(0.4);
        }
    }
    for (i, row) in m.iter_mut().enumerate() {
        if !row.iter().any(|&b| b) {
            let j = rng.gen_range(0..cols);
            row[j] = true;
            let _ = i;
        }
    }
    for j in 0..cols {
        if !m.iter().any(|row| row[j]) {
            let i = rng.gen_range(0..rows);
            m[i][j] = true;
        }
    }
    m
}

pub fn correlation_from(matrix: Vec<Vec<bool>>) -> Correlation {
    Correlation {
        left: "left".into(),
        right: "right".into(),
        relation: vec![SortRelation { sort: "S".into(), matrix }],
        anchors: vec![],
    }
}

/// Independent distortion: direct nested-loop evaluation of every generator
/// over every componentwise-related tuple, through the formula evaluator.
pub fn oracle_distortion(
    sys: &DistortionSystem,
    left: &MetricStructure,
    right: &MetricStructure,
    matrix: &[Vec<bool>],
) -> f64 {
    assert_eq!(left.sorts.len(), 1, "oracle supports single-sorted structures");
    let sig = left.signature();
    let pairs: Vec<(usize, usize)> = matrix
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter().enumerate().filter(|(_, &b)| b).map(move |(j, _)| (i, j))
        })
        .collect();
    let mut worst = 0.0f64;
    for g in &sys.generators {
        let free = g.free_vars(&sig).unwrap();
        let vars: Vec<VarIdx> = free.keys().copied().collect();
        if vars.is_empty() {
            let lv = evaluate(g, left, &Binding::new()).unwrap();
            let rv = evaluate(g, right, &Binding::new()).unwrap();
            worst = worst.max((lv - rv).abs());
            continue;
        }
        if pairs.is_empty() {
            continue;
        }
        let mut choice = vec![0usize; vars.len()];
        loop {
            let mut bl = Binding::new();
            let mut br = Binding::new();
            for (v, &c) in vars.iter().zip(&choice) {
                bl.set(*v, 0, pairs[c].0);
                br.set(*v, 0, pairs[c].1);
            }
            let lv = evaluate(g, left, &bl).unwrap();
            let rv = evaluate(g, right, &br).unwrap();
            worst = worst.max((lv - rv).abs());
            let mut done = true;
            for pos in (0..choice.len()).rev() {
                choice[pos] += 1;
                if choice[pos] < pairs.len() {
                    done = false;
                    break;
                }
                choice[pos] = 0;
            }
            if done {
                break;
            }
        }
    }
    worst
}

/// Exhaustive minimum of the oracle distortion over every total surjective
/// relation between two single-sorted structures.
pub fn exhaustive_rho(
    sys: &DistortionSystem,
    left: &MetricStructure,
    right: &MetricStructure,
) -> f64 {
    let rows = left.sorts[0].len();
    let cols = right.sorts[0].len();
    let cells = rows * cols;
    assert!(cells <= 20, "exhaustive oracle is for tiny instances");
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << cells) {
        let matrix: Vec<Vec<bool>> = (0..rows)
            .map(|i| (0..cols).map(|j| mask >> (i * cols + j) & 1 == 1).collect())
            .collect();
        let total = matrix.iter().all(|r| r.iter().any(|&b| b));
        let surjective = (0..cols).all(|j| matrix.iter().any(|r| r[j]));
        if !total || !surjective {
            continue;
        }
        best = best.min(oracle_distortion(sys, left, right, &matrix));
    }
    best
}

/// Random formula over a single-sorted signature with a unary predicate U,
/// driven by a seeded RNG.
pub fn random_formula(rng: &mut StdRng, depth: u32) -> Formula {
    let var = |rng: &mut StdRng| rng.gen_range(0..4u32);
    if depth == 0 {
        return match rng.gen_range(0..3u32) {
            0 => Formula::Const(f64::from(rng.gen_range(-8..=8i32)) * 0.25),
            1 => Formula::Dist { sort: "S".into(), left: var(rng), right: var(rng) },
            _ => Formula::Pred { name: "U".into(), args: vec![var(rng)] },
        };
    }
    let sub = |rng: &mut StdRng| Box::new(random_formula(rng, depth - 1));
    match rng.gen_range(0..10u32) {
        0 => Formula::Neg(sub(rng)),
        1 => Formula::Scale(f64::from(rng.gen_range(-4..=4i32)) * 0.25, sub(rng)),
        2 => Formula::Add(sub(rng), sub(rng)),
        3 => Formula::Max(sub(rng), sub(rng)),
        4 => Formula::Min(sub(rng), sub(rng)),
        5 => Formula::AbsDiff(sub(rng), sub(rng)),
        6 => Formula::Clamp(sub(rng), -0.5, 0.75),
        7 => Formula::ClipLog(sub(rng), -1.5, 1.5),
        8 => Formula::Sup { var: var(rng), sort: "S".into(), body: sub(rng) },
        _ => Formula::Inf { var: var(rng), sort: "S".into(), body: sub(rng) },
    }
}
