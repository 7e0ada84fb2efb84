//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Run with `cargo test -p apxiso --test acceptance -- --nocapture` to see
//! the per-criterion lines.

mod common;

use std::time::Instant;

use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use apxiso::backforth::{r_finite, r_infty_capped};
use apxiso::distsys::{
    builtin, check_atomic_completeness, distortion, Builtin, DistortionEvaluator,
    DistortionSystem, Truncation,
};
use apxiso::embound::{
    bm_generators, embound, image_space, linear_map_correlation, radial_grid, EmbPoint, Norm,
};
use apxiso::formula::{evaluate, infer_modulus, Binding, Formula, WeakModulus};
use apxiso::pathology::{disjoint_union_demo, make_j};
use apxiso::search::{rho_exact, SearchOptions};
use apxiso::structure::{Correlation, MetricStructure, SortRelation};

use common::*;

const TOL: f64 = 1e-9;

fn gh_for(s: &MetricStructure) -> DistortionSystem {
    builtin(Builtin::Gh, &s.signature(), Truncation::default()).unwrap()
}

/// Every builtin applicable to the structure's signature (IU needs U).
fn builtin_suite(s: &MetricStructure) -> Vec<DistortionSystem> {
    let sig = s.signature();
    let mut out = vec![
        builtin(Builtin::Gh, &sig, Truncation::default()).unwrap(),
        builtin(Builtin::Lip, &sig, Truncation::default()).unwrap(),
        builtin(Builtin::Fghk, &sig, Truncation::default()).unwrap(),
        builtin(Builtin::Eghk, &sig, Truncation::default()).unwrap(),
    ];
    if s.predicate("U").is_some() {
        out.push(
            builtin(
                Builtin::Iu,
                &sig,
                Truncation { n_max: Some(16), ..Truncation::default() },
            )
            .unwrap(),
        );
    }
    out
}

#[test]
fn criterion_01_gh_closed_forms() {
    let start = Instant::now();
    let opts = SearchOptions { heuristic_budget: 60, ..SearchOptions::default() };
    // Two-point spaces over the distance grid: rho = |a - b| / 2, checked
    // against the search and against the exhaustive enumeration oracle.
    for ai in 1..=8u32 {
        for bi in 1..=8u32 {
            let a = f64::from(ai) * 0.25;
            let b = f64::from(bi) * 0.25;
            let m = two_point("m", a);
            let n = two_point("n", b);
            let sys = gh_for(&m);
            let res = rho_exact(&sys, &m, &n, &[], &opts).unwrap();
            let expect = 0.5 * (a - b).abs();
            assert!(
                (res.value - expect).abs() <= TOL,
                "two-point {a} vs {b}: got {}, want {expect}",
                res.value
            );
            let oracle = exhaustive_rho(&sys, &m, &n);
            assert!((res.value - oracle).abs() <= TOL, "oracle disagrees at {a},{b}");
        }
    }
    // Point versus space: rho = diameter / 2 on instances up to 5 points.
    let point = metric_space("p", vec![vec![0.0]]);
    let spaces = [
        metric_space("s", vec![vec![0.0, 2.0], vec![2.0, 0.0]]),
        metric_space(
            "s",
            vec![vec![0.0, 0.4, 1.0], vec![0.4, 0.0, 0.8], vec![1.0, 0.8, 0.0]],
        ),
        metric_space(
            "s",
            vec![
                vec![0.0, 0.5, 1.1, 0.7],
                vec![0.5, 0.0, 0.8, 0.4],
                vec![1.1, 0.8, 0.0, 0.6],
                vec![0.7, 0.4, 0.6, 0.0],
            ],
        ),
        metric_space(
            "s",
            vec![
                vec![0.0, 0.3, 0.6, 0.9, 1.2],
                vec![0.3, 0.0, 0.3, 0.6, 0.9],
                vec![0.6, 0.3, 0.0, 0.3, 0.6],
                vec![0.9, 0.6, 0.3, 0.0, 0.3],
                vec![1.2, 0.9, 0.6, 0.3, 0.0],
            ],
        ),
    ];
    for space in &spaces {
        let sys = gh_for(&point);
        let res = rho_exact(&sys, &point, space, &[], &opts).unwrap();
        let diameter = space.sorts[0]
            .metric
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(0.0f64, f64::max);
        assert!((res.value - diameter / 2.0).abs() <= TOL);
        let oracle = exhaustive_rho(&sys, &point, space);
        assert!((res.value - oracle).abs() <= TOL);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "criterion 1 took {elapsed:?}");
    println!("criterion 01 gh-closed-forms: PASS ({elapsed:?})");
}

#[test]
fn criterion_02_pseudo_metric_suite() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xA11CE);
    let opts = SearchOptions { heuristic_budget: 80, ..SearchOptions::default() };
    for trial in 0..50 {
        let nm = rng.gen_range(2..=4);
        let nn = rng.gen_range(2..=4);
        let no = rng.gen_range(2..=4);
        let m = random_structure(&mut rng, "m", nm, true);
        let n = random_structure(&mut rng, "n", nn, true);
        let o = random_structure(&mut rng, "o", no, true);
        for sys in builtin_suite(&m) {
            let mn = rho_exact(&sys, &m, &n, &[], &opts).unwrap().value;
            let nm_v = rho_exact(&sys, &n, &m, &[], &opts).unwrap().value;
            assert_eq!(mn, nm_v, "symmetry broke: trial {trial} system {}", sys.name);
            let no_v = rho_exact(&sys, &n, &o, &[], &opts).unwrap().value;
            let mo_v = rho_exact(&sys, &m, &o, &[], &opts).unwrap().value;
            assert!(
                mo_v <= mn + no_v + TOL,
                "triangle broke: trial {trial} system {}: {mo_v} > {mn} + {no_v}",
                sys.name
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "criterion 2 took {elapsed:?}");
    println!("criterion 02 pseudo-metric-suite: PASS ({elapsed:?})");
}

/// Quantified and max/min-combined copies of generators leave the
/// distortion of a correlation unchanged.
#[test]
fn criterion_03_quantifier_safety() {
    let mut rng = StdRng::seed_from_u64(0xBEEF);
    for trial in 0..100 {
        let nl = rng.gen_range(2..=3);
        let nr = rng.gen_range(2..=3);
        let left = random_structure(&mut rng, "l", nl, true);
        let right = random_structure(&mut rng, "r", nr, true);
        let suite = builtin_suite(&left);
        let sys = &suite[(trial % suite.len() as u64) as usize];
        let corr = correlation_from(random_correlation_matrix(&mut rng, nl, nr));
        let base = distortion(sys, &left, &right, &corr).unwrap().value;

        let sig = left.signature();
        let mut augmented = sys.generators.clone();
        for g in &sys.generators {
            let free = g.free_vars(&sig).unwrap();
            if let Some((&last, sort)) = free.iter().next_back() {
                augmented.push(Formula::Inf {
                    var: last,
                    sort: sort.clone(),
                    body: Box::new(g.clone()),
                });
                augmented.push(Formula::Sup {
                    var: last,
                    sort: sort.clone(),
                    body: Box::new(g.clone()),
                });
            }
        }
        if sys.generators.len() >= 2 {
            augmented.push(Formula::Max(
                Box::new(sys.generators[0].clone()),
                Box::new(sys.generators[1].clone()),
            ));
            augmented.push(Formula::Min(
                Box::new(sys.generators[0].clone()),
                Box::new(sys.generators[1].clone()),
            ));
        }
        let enlarged = DistortionSystem::new("aug", augmented, sys.truncation.clone());
        let after = distortion(&enlarged, &left, &right, &corr).unwrap().value;
        assert!(
            (after - base).abs() <= TOL,
            "trial {trial} ({}): {base} -> {after}",
            sys.name
        );
    }
    println!("criterion 03 quantifier-safety: PASS");
}

#[test]
fn criterion_04_back_and_forth() {
    let omega = WeakModulus::uniform(1.0);
    let opts = SearchOptions { heuristic_budget: 80, ..SearchOptions::default() };
    let mut rng = StdRng::seed_from_u64(0xF00D);

    // The one-point versus two-point pair: r1 = 0, r2 = 1 exactly.
    let point = metric_space("p", vec![vec![0.0]]);
    let pair = metric_space("q", vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
    let gh = gh_for(&point);
    assert_eq!(r_finite(&gh, &omega, &point, &pair, 1).unwrap(), 0.0);
    assert_eq!(r_finite(&gh, &omega, &point, &pair, 2).unwrap(), 1.0);

    // Monotone rounds and domination by rho on every instance where both run.
    let mut instances = vec![(point, pair)];
    for t in 0..4 {
        let sizes = (rng.gen_range(2..=3), rng.gen_range(2..=3));
        let m = random_structure(&mut rng, "m", sizes.0, true);
        let n = random_structure(&mut rng, "n", sizes.1, true);
        let _ = t;
        instances.push((m, n));
    }
    for (m, n) in &instances {
        for sys in builtin_suite(m) {
            let mut prev = 0.0;
            for rounds in 0..=3 {
                let v = r_finite(&sys, &omega, m, n, rounds).unwrap();
                assert!(v >= prev - TOL, "rounds {rounds} not monotone: {v} < {prev}");
                prev = v;
            }
            let table = r_infty_capped(&sys, &omega, m, n, 3).unwrap();
            let rho = rho_exact(&sys, m, n, &[], &opts).unwrap();
            assert!(
                table.empty_value() <= rho.value + TOL,
                "system {}: r_infty {} > rho {}",
                sys.name,
                table.empty_value(),
                rho.value
            );
        }
    }
    println!("criterion 04 back-and-forth: PASS");
}

#[test]
fn criterion_05_banach_mazur_sufficiency() {
    let start = Instant::now();
    let scalars = [Complex64::new(0.5, 0.0)];
    for (norm, label) in [(Norm::L1, "l1"), (Norm::L2, "l2"), (Norm::Linf, "linf")] {
        let base = radial_grid(norm.clone(), -1, 1);
        for eps in [0.1, 0.2, 0.4] {
            let scale = (eps / 2.0f64).exp();
            let matrix = vec![vec![scale, 0.0], vec![0.0, scale]];
            // Matched image grid: the snapping is exact.
            let image = image_space(&base, &matrix).unwrap();
            let mut left = embound(&base, &scalars).unwrap();
            let mut right = embound(&image, &scalars).unwrap();
            let sys = bm_generators(&mut left, &[1, 2, 3, 4], &scalars).unwrap();
            bm_generators(&mut right, &[1, 2, 3, 4], &scalars).unwrap();
            let (corr, residual) = linear_map_correlation(&left, &right, &matrix).unwrap();
            let modulus = worst_generator_modulus(&sys, &left.structure);
            let dis = distortion(&sys, &left.structure, &right.structure, &corr)
                .unwrap()
                .value;
            assert!(
                dis <= eps + modulus * residual + TOL,
                "{label} eps {eps}: dis {dis}, residual {residual}, L {modulus}"
            );

            // Nudged image grid: nonzero residual folded in through the
            // inferred modulus.
            let nudged = nudge(&image, 0.01);
            let mut right2 = embound(&nudged, &scalars).unwrap();
            bm_generators(&mut right2, &[1, 2, 3, 4], &scalars).unwrap();
            let (corr2, residual2) = linear_map_correlation(&left, &right2, &matrix).unwrap();
            assert!(residual2 > 0.0);
            let dis2 = distortion(&sys, &left.structure, &right2.structure, &corr2)
                .unwrap()
                .value;
            assert!(
                dis2 <= eps + modulus * residual2 + TOL,
                "{label} eps {eps} nudged: dis {dis2}, slack {}",
                eps + modulus * residual2
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "criterion 5 took {elapsed:?}");
    println!("criterion 05 banach-mazur-sufficiency: PASS ({elapsed:?})");
}

/// Largest inferred modulus (sum of per-variable constants) over the
/// system's generators.
fn worst_generator_modulus(sys: &DistortionSystem, s: &MetricStructure) -> f64 {
    let sig = s.signature();
    sys.generators
        .iter()
        .map(|g| infer_modulus(g, &sig).unwrap().total())
        .fold(0.0, f64::max)
}

/// Scales every nonzero sample by a small deterministic factor, forcing the
/// snapping to carry a residual.
fn nudge(b: &apxiso::embound::SampledBanach, delta: f64) -> apxiso::embound::SampledBanach {
    let mut out = b.clone();
    for (i, v) in out.samples.iter_mut().enumerate() {
        let factor = 1.0 + delta * (((i % 3) as f64) - 1.0);
        for z in v.iter_mut() {
            *z *= factor;
        }
    }
    out.radius_cap *= 1.0 + delta;
    out
}

#[test]
fn criterion_06_banach_mazur_necessity() {
    // Exhaustive scan over every correlation on a small emboundment: finite
    // distortion pins zero and infinity and bounds the norm ratios.
    let scalars = [Complex64::new(0.5, 0.0)];
    let half = (0.5f64).exp().sqrt(); // norms e^{-1/2} and e^{1/2}
    let b = apxiso::embound::SampledBanach {
        dim: 2,
        field: apxiso::embound::Field::Real,
        norm: Norm::L2,
        samples: vec![
            vec![Complex64::ZERO, Complex64::ZERO],
            vec![Complex64::new(1.0 / half, 0.0), Complex64::ZERO],
            vec![Complex64::new(half, 0.0), Complex64::ZERO],
        ],
        radius_cap: 2.0,
    };
    let mut emb = embound(&b, &scalars).unwrap();
    let sys = bm_generators(&mut emb, &[1, 2, 3, 4], &scalars).unwrap();
    let s = emb.structure.clone();
    let n = s.sorts[0].len();
    assert_eq!(n, 4);
    let zero = 0usize;
    let inf = n - 1;
    let norms: Vec<Option<f64>> = emb
        .points
        .iter()
        .map(|p| match p {
            EmbPoint::Vector(v) => Some(emb.norm.eval(v)),
            EmbPoint::Infinity => None,
        })
        .collect();
    let evaluator = DistortionEvaluator::new(&sys, &s, &s).unwrap();
    let r_max = 4.0;
    for eps in [0.1, 0.2, 0.4] {
        let slack = eps / (2.0 * r_max - 1.0);
        let mut admitted = 0u32;
        for mask in 1u32..(1 << (n * n)) {
            let matrix: Vec<Vec<bool>> =
                (0..n).map(|i| (0..n).map(|j| mask >> (i * n + j) & 1 == 1).collect()).collect();
            if !matrix.iter().all(|r| r.iter().any(|&b| b))
                || !(0..n).all(|j| matrix.iter().any(|r| r[j]))
            {
                continue;
            }
            let corr = Correlation {
                left: "m".into(),
                right: "m".into(),
                relation: vec![SortRelation { sort: "B".into(), matrix: matrix.clone() }],
                anchors: vec![],
            };
            if evaluator.exceeds(&corr, eps).unwrap() {
                continue;
            }
            admitted += 1;
            assert!(matrix[zero][zero], "eps {eps}: zero not fixed by {matrix:?}");
            assert!(matrix[inf][inf], "eps {eps}: infinity not fixed by {matrix:?}");
            for (i, row) in matrix.iter().enumerate() {
                for (j, &related) in row.iter().enumerate() {
                    if !related {
                        continue;
                    }
                    match (norms[i], norms[j]) {
                        (Some(a), Some(bn)) if a > 1e-12 && bn > 1e-12 => {
                            let ratio = 2.0 * (a / bn).ln().abs();
                            assert!(
                                ratio <= eps + slack + TOL,
                                "eps {eps}: ratio {ratio} for pair {i},{j}"
                            );
                        }
                        (Some(a), None) | (None, Some(a)) => {
                            panic!("eps {eps}: infinity paired with norm {a}")
                        }
                        (Some(a), Some(_)) => {
                            // Zero may only pair with zero; covered by the
                            // anchor assertion above when a is zero.
                            let _ = a;
                        }
                        (None, None) => {}
                    }
                }
            }
        }
        assert!(admitted >= 1, "eps {eps}: the identity should be admitted");
    }
    println!("criterion 06 banach-mazur-necessity: PASS");
}

#[test]
fn criterion_07_iu_pathology() {
    // Shifting correlations stay within 2^{-k-1} plus grid slack, and the
    // mismatched-support distance diverges linearly in n_max.
    let report = disjoint_union_demo(3, 3).unwrap();
    for row in &report.shifts {
        assert!(
            row.within_bound,
            "k = {}: dis {} > {} + {}",
            row.k, row.dis_iu, row.bound, row.slack
        );
    }
    for row in &report.divergence {
        assert!(row.diverges, "n_max {}: rho {} < {}", row.n_max, row.rho, row.lower_bound);
    }

    // Diagonal relation against the flat grid: distortion eps/2 within
    // 1e-9, realized by a pair of points just above the zero-distance
    // tolerance.
    let close = 0.5f64.powi(29);
    let d = vec![0.0, close, 0.25, 0.5, 0.75, 1.0];
    let eps = 0.5;
    let j = make_j(&d, eps).unwrap();
    let flat = make_j(&d, 0.0).unwrap();
    let diag = Correlation::identity(&j, "j");
    let iu = builtin(Builtin::Iu, &j.signature(), Truncation::default()).unwrap();
    let dis = distortion(&iu, &j, &flat, &diag).unwrap().value;
    assert!((dis - eps / 2.0).abs() <= TOL, "diagonal dis {dis} vs eps/2 {}", eps / 2.0);

    // Mismatched U supports: dis_IU at least n_max times the minimal gap
    // across n_max in {4, 8, 16}.
    let d0 = [0.0, 0.25, 0.5];
    let d1 = [0.125, 0.375, 0.625];
    let j0 = make_j(&d0, 0.25).unwrap();
    let j1 = make_j(&d1, 0.25).unwrap();
    let opts = SearchOptions::default();
    for n_max in [4u32, 8, 16] {
        let sys = builtin(
            Builtin::Iu,
            &j0.signature(),
            Truncation { n_max: Some(n_max), ..Truncation::default() },
        )
        .unwrap();
        let res = rho_exact(&sys, &j0, &j1, &[], &opts).unwrap();
        assert!(
            res.value >= f64::from(n_max) * 0.125 - TOL,
            "n_max {n_max}: rho {}",
            res.value
        );
    }
    println!("criterion 07 iu-pathology: PASS");
}

#[test]
fn criterion_08_modulus_soundness() {
    let mut rng = StdRng::seed_from_u64(0x50D);
    let mut structures = Vec::new();
    for i in 0..10 {
        let n = rng.gen_range(2..=4);
        structures.push(random_structure(&mut rng, &format!("s{i}"), n, true));
    }
    let sig = structures[0].signature();
    for trial in 0..1000 {
        let depth = rng.gen_range(1..=3);
        let f = random_formula(&mut rng, depth);
        let s = &structures[rng.gen_range(0..structures.len())];
        let n = s.sorts[0].len();
        let modulus = infer_modulus(&f, &sig).unwrap();
        let mut ba = Binding::new();
        let mut bb = Binding::new();
        let mut budget = 0.0;
        for v in 0..4u32 {
            let pa = rng.gen_range(0..n);
            let pb = rng.gen_range(0..n);
            ba.set(v, 0, pa);
            bb.set(v, 0, pb);
            budget += modulus.lipschitz(v) * s.sorts[0].dist(pa, pb);
        }
        let va = evaluate(&f, s, &ba).unwrap();
        let vb = evaluate(&f, s, &bb).unwrap();
        assert!(
            (va - vb).abs() <= budget + TOL,
            "trial {trial}: |{va} - {vb}| > {budget} for {f}"
        );
    }
    println!("criterion 08 modulus-soundness: PASS");
}

#[test]
fn criterion_09_fghk() {
    // The builtin weight for a [0,1]-valued predicate at index 0 is exactly
    // one half.
    let j = make_j(&[0.0, 0.5, 1.0], 0.25).unwrap();
    let sys = builtin(Builtin::Fghk, &j.signature(), Truncation::default()).unwrap();
    let expected = Formula::Scale(
        0.5,
        Box::new(Formula::Pred { name: "U".into(), args: vec![0] }),
    );
    assert!(sys.generators.contains(&expected), "missing exactly-half weighting");

    // Atomic completeness on 20 random structures.
    let mut rng = StdRng::seed_from_u64(0xFC);
    for i in 0..20 {
        let n = rng.gen_range(2..=3);
        let s = random_structure(&mut rng, &format!("r{i}"), n, true);
        let sys = builtin(Builtin::Fghk, &s.signature(), Truncation::default()).unwrap();
        let res = check_atomic_completeness(&sys, &s).unwrap();
        assert!(res.complete, "structure {i}: {:?}", res.counterexample);
    }
    println!("criterion 09 fghk: PASS");
}

#[test]
fn criterion_10_determinism_across_threads() {
    let mut rng = StdRng::seed_from_u64(0xD15C);
    let mut corpus = Vec::new();
    corpus.push((two_point("m", 1.0), two_point("n", 3.0)));
    corpus.push((
        metric_space("p", vec![vec![0.0]]),
        metric_space("q", vec![vec![0.0, 2.0], vec![2.0, 0.0]]),
    ));
    for i in 0..3 {
        let sizes = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let m = random_structure(&mut rng, &format!("m{i}"), sizes.0, true);
        let n = random_structure(&mut rng, &format!("n{i}"), sizes.1, true);
        corpus.push((m, n));
    }
    let omega = WeakModulus::uniform(1.0);
    let opts = SearchOptions { heuristic_budget: 100, ..SearchOptions::default() };

    let run_all = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut rho_results = Vec::new();
            let mut baf_results = Vec::new();
            for (m, n) in &corpus {
                for sys in builtin_suite(m) {
                    let res = rho_exact(&sys, m, n, &[], &opts).unwrap();
                    rho_results.push(res);
                    let table = r_infty_capped(&sys, &omega, m, n, 2).unwrap();
                    baf_results.push((table.stabilized_at, table.levels.clone()));
                }
            }
            (rho_results, baf_results)
        })
    };
    let single = run_all(1);
    let quad = run_all(4);
    assert_eq!(single.0, quad.0, "rho results differ across thread counts");
    assert_eq!(single.1, quad.1, "back-and-forth tables differ across thread counts");
    println!("criterion 10 determinism: PASS");
}
