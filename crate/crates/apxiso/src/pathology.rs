//! The irregular interval structures and their finite-truncation behavior.
//!
//! An interval structure carries a finite subset of [0, 1] with the
//! identity-valued predicate U and the metric `|x - y|` clamped from below
//! by `eps`. Under the IU system, finite distortion forces related points to
//! agree exactly on U while distances stay as loose as Gromov-Hausdorff; on
//! truncations this shows up as distortion growing linearly in the
//! coefficient cutoff `n_max` whenever a U gap is unavoidable.
//!
//! Structures are pure values; all computation delegates to the distortion
//! and search modules.

use serde::Serialize;

use crate::distsys::{builtin, distortion, Builtin, Truncation};
use crate::search::{rho_exact, SearchOptions};
use crate::structure::{Correlation, MetricStructure, Predicate, Sort, SortRelation, Table};
use crate::{Error, Result, TOL};

pub const J_SORT: &str = "X";

/// Builds the interval structure on a finite point set `D` in [0, 1]:
/// `U(x) = x` and `d(x, y) = max(|x - y|, eps)` for distinct points.
/// Values are sorted and deduplicated; labels are the decimal values.
pub fn make_j(d_values: &[f64], eps: f64) -> Result<MetricStructure> {
    if d_values.is_empty() {
        return Err(Error::input("interval structure needs a nonempty point set"));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::input(format!("eps must lie in [0, 1], got {eps}")));
    }
    let mut values: Vec<f64> = d_values.to_vec();
    for v in &values {
        if !(0.0..=1.0).contains(v) {
            return Err(Error::input(format!("point {v} lies outside [0, 1]")));
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let n = values.len();
    let metric: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { (values[i] - values[j]).abs().max(eps) })
                .collect()
        })
        .collect();
    let s = MetricStructure {
        sorts: vec![Sort {
            name: J_SORT.into(),
            points: values.iter().map(|v| format!("{v}")).collect(),
            metric,
            diameter_bound: 1.0,
        }],
        predicates: vec![Predicate {
            name: "U".into(),
            arity: 1,
            arg_sorts: vec![J_SORT.into()],
            values: Table::new(vec![n], values)?,
            range: (0.0, 1.0),
            lipschitz: vec![1.0],
        }],
        constants: Default::default(),
    };
    let violations = s.validate();
    if !violations.is_empty() {
        return Err(Error::input(format!("interval structure invalid: {}", violations[0])));
    }
    Ok(s)
}

/// Disjoint union of interval-style structures (single sort, U predicate):
/// points keep their U values, distances across components are 1.
/// Component `i` contributes points labeled `c<i>:<label>`.
pub fn disjoint_union(components: &[&MetricStructure]) -> Result<MetricStructure> {
    if components.is_empty() {
        return Err(Error::input("disjoint union needs at least one component"));
    }
    let mut points = Vec::new();
    let mut u_values = Vec::new();
    let mut offsets = Vec::new();
    for (ci, comp) in components.iter().enumerate() {
        if comp.sorts.len() != 1 {
            return Err(Error::input("disjoint union expects single-sorted components"));
        }
        let u = comp
            .predicate("U")
            .ok_or_else(|| Error::input("disjoint union expects a U predicate"))?;
        offsets.push(points.len());
        for (pi, label) in comp.sorts[0].points.iter().enumerate() {
            points.push(format!("c{ci}:{label}"));
            u_values.push(u.values.get(&[pi]));
        }
    }
    let n = points.len();
    let mut metric = vec![vec![1.0; n]; n];
    for (ci, comp) in components.iter().enumerate() {
        let base = offsets[ci];
        let m = comp.sorts[0].len();
        for i in 0..m {
            for j in 0..m {
                metric[base + i][base + j] = comp.sorts[0].dist(i, j);
            }
        }
    }
    for (i, row) in metric.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    Ok(MetricStructure {
        sorts: vec![Sort {
            name: J_SORT.into(),
            points,
            metric,
            diameter_bound: 1.0,
        }],
        predicates: vec![Predicate {
            name: "U".into(),
            arity: 1,
            arg_sorts: vec![J_SORT.into()],
            values: Table::new(vec![n], u_values)?,
            range: (0.0, 1.0),
            lipschitz: vec![1.0],
        }],
        constants: Default::default(),
    })
}

/// Outcome of checking the IU characterization on one relation: finite
/// IU-distortion demands exact U agreement and is otherwise as loose as
/// Gromov-Hausdorff.
#[derive(Debug, Clone, Serialize)]
pub struct IrregReport {
    /// Largest U discrepancy over related pairs.
    pub max_u_gap: f64,
    pub dis_gh: f64,
    pub dis_iu: f64,
    pub n_max: u32,
    /// With a positive U gap, the truncated distortion reaches
    /// `n_max * max_u_gap`: the trend certifying divergence.
    pub divergent: bool,
    /// The characterization held: either U matches everywhere and the IU
    /// distortion equals the GH distortion within `eps_bound`, or a gap
    /// exists and the distortion diverges with `n_max`.
    pub holds: bool,
}

/// Verifies the irregularity characterization on a relation between two
/// interval structures, using the IU system truncated at `n_max`.
pub fn check_irreg_characterization(
    left: &MetricStructure,
    right: &MetricStructure,
    corr: &Correlation,
    n_max: u32,
    eps_bound: f64,
) -> Result<IrregReport> {
    let sig = left.signature();
    let gh = builtin(Builtin::Gh, &sig, Truncation::default())?;
    let iu = builtin(Builtin::Iu, &sig, Truncation { n_max: Some(n_max), ..Default::default() })?;
    let dis_gh = distortion(&gh, left, right, corr)?.value;
    let dis_iu = distortion(&iu, left, right, corr)?.value;

    let lu = left.predicate("U").ok_or_else(|| Error::input("left structure lacks U"))?;
    let ru = right.predicate("U").ok_or_else(|| Error::input("right structure lacks U"))?;
    let rel = corr
        .sort_relation(&left.sorts[0].name)
        .ok_or_else(|| Error::input("correlation lacks the interval sort"))?;
    let mut max_u_gap = 0.0f64;
    for (i, row) in rel.matrix.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            if b {
                max_u_gap = max_u_gap.max((lu.values.get(&[i]) - ru.values.get(&[j])).abs());
            }
        }
    }

    let u_matched = max_u_gap <= TOL;
    let divergent = !u_matched && dis_iu >= f64::from(n_max) * max_u_gap - TOL;
    let holds = if u_matched {
        (dis_iu - dis_gh).abs() <= TOL && dis_iu <= eps_bound + TOL
    } else {
        divergent
    };
    Ok(IrregReport { max_u_gap, dis_gh, dis_iu, n_max, divergent, holds })
}

/// One row of the shifting-correlation table.
#[derive(Debug, Clone, Serialize)]
pub struct ShiftRow {
    pub k: u32,
    pub dis_iu: f64,
    pub bound: f64,
    pub slack: f64,
    pub within_bound: bool,
}

/// One row of the divergence table: mismatched U supports push the exact
/// distance past `n_max * gap`.
#[derive(Debug, Clone, Serialize)]
pub struct DivergenceRow {
    pub n_max: u32,
    pub rho: f64,
    pub lower_bound: f64,
    pub diverges: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnionDemoReport {
    pub grid_denominator_log2: u32,
    pub components: u32,
    pub shifts: Vec<ShiftRow>,
    pub divergence: Vec<DivergenceRow>,
    pub all_bounds_hold: bool,
}

/// Builds finite truncations of the disjoint-union example and measures the
/// shifting correlations: component `i < k` maps isomorphically, component
/// `k` maps onto the plain grid, and later components shift down one slot.
/// Each shift's IU distortion stays within `2^{-k-1}` plus grid slack. A
/// second table shows the divergence trend for structures with disjoint U
/// supports.
pub fn disjoint_union_demo(k_max: u32, grid_log2: u32) -> Result<UnionDemoReport> {
    let denom = 1u32 << grid_log2;
    let grid: Vec<f64> = (0..=denom).map(|i| f64::from(i) / f64::from(denom)).collect();
    let comps = k_max + 2;

    // M = components J(D, 2^-i) for i < comps.
    // N = the flat grid J(D, 0) followed by components J(D, 2^-i) for
    // i < comps - 1.
    let m_parts: Vec<MetricStructure> = (0..comps)
        .map(|i| make_j(&grid, 0.5f64.powi(i as i32)))
        .collect::<Result<Vec<_>>>()?;
    let mut n_parts: Vec<MetricStructure> = vec![make_j(&grid, 0.0)?];
    for i in 0..comps - 1 {
        n_parts.push(make_j(&grid, 0.5f64.powi(i as i32))?);
    }
    let m = disjoint_union(&m_parts.iter().collect::<Vec<_>>())?;
    let n = disjoint_union(&n_parts.iter().collect::<Vec<_>>())?;
    let pts = grid.len();

    let mut shifts = Vec::new();
    for k in 0..=k_max {
        // Component index c of M maps to component target(c) of N, where
        // N's component 0 is the flat grid and component i+1 is J(D, 2^-i).
        let target = |c: u32| -> u32 {
            if c < k {
                c + 1
            } else if c == k {
                0
            } else {
                c // J(D, 2^-c) pairs with N's copy of J(D, 2^-(c-1)).
            }
        };
        let nm = m.sorts[0].len();
        let nn = n.sorts[0].len();
        let mut matrix = vec![vec![false; nn]; nm];
        for c in 0..comps {
            let t = target(c);
            for p in 0..pts {
                matrix[(c as usize) * pts + p][(t as usize) * pts + p] = true;
            }
        }
        let corr = Correlation {
            left: "m".into(),
            right: "n".into(),
            relation: vec![SortRelation { sort: J_SORT.into(), matrix }],
            anchors: vec![],
        };
        debug_assert_eq!(corr.is_correlation(&m, &n)?, None);
        let iu = builtin(
            Builtin::Iu,
            &m.signature(),
            Truncation { n_max: Some(16), ..Default::default() },
        )?;
        let dis_iu = distortion(&iu, &m, &n, &corr)?.value;
        let bound = 0.5f64.powi(k as i32 + 1);
        let slack = TOL;
        shifts.push(ShiftRow {
            k,
            dis_iu,
            bound,
            slack,
            within_bound: dis_iu <= bound + slack,
        });
    }

    // Divergence: disjoint U supports force a gap of at least the grid
    // offset in every correlation, so the exact distance grows linearly in
    // the coefficient cutoff.
    let d0: Vec<f64> = (0..4).map(|i| f64::from(i) / 8.0).collect();
    let offset = 1.0 / 16.0;
    let d1: Vec<f64> = d0.iter().map(|v| v + offset).collect();
    let eps = 0.25;
    let j0 = make_j(&d0, eps)?;
    let j1 = make_j(&d1, eps)?;
    let mut divergence = Vec::new();
    for n_max in [4u32, 8, 16] {
        let iu = builtin(
            Builtin::Iu,
            &j0.signature(),
            Truncation { n_max: Some(n_max), ..Default::default() },
        )?;
        let res = rho_exact(&iu, &j0, &j1, &[], &SearchOptions::default())?;
        let lower_bound = f64::from(n_max) * offset;
        divergence.push(DivergenceRow {
            n_max,
            rho: res.value,
            lower_bound,
            diverges: res.value >= lower_bound - TOL,
        });
    }

    let all_bounds_hold =
        shifts.iter().all(|r| r.within_bound) && divergence.iter().all(|r| r.diverges);
    Ok(UnionDemoReport {
        grid_denominator_log2: grid_log2,
        components: comps,
        shifts,
        divergence,
        all_bounds_hold,
    })
}
