//! Back-and-forth pseudo-metrics and Scott ranks on finite structures.
//!
//! The base level compares tuples through the system's generators filtered
//! by a weak modulus: a generator instance counts only when the inferred
//! Lipschitz constant of each variable fits under the weight of the tuple
//! position it binds. Variables bind positions through order-preserving
//! injections, and variable `x_j` may only bind position `>= j` (later
//! positions are more sensitive).
//!
//! Successor levels extend tuples one point at a time in a sup-inf game.
//! Tuple length is capped at `k`: length-`k` pairs stay frozen at their
//! base value, so the iteration reaches an exact fixed point in at most `k`
//! steps. The capped fixed point is a lower bound for the uncapped metric.
//! Entries within a level are independent and computed in parallel; levels
//! are separated by an iteration barrier.

use rayon::prelude::*;
use serde::Serialize;

use crate::distsys::{DistortionSystem, Truncation};
use crate::formula::{evaluate, infer_modulus, Binding, Formula, VarIdx, WeakModulus};
use crate::structure::MetricStructure;
use crate::{Error, Result};

/// Hard cap on the number of tuple pairs a table may enumerate.
const MAX_ENTRIES: usize = 5_000_000;

/// One position of a tuple pair: (sort, left point, right point).
type Pos = (usize, usize, usize);

/// A memoized table of r-values on pairs of tuples of length `<= depth_cap`.
#[derive(Debug, Clone, Serialize)]
pub struct BafTable {
    pub depth_cap: usize,
    pub omega: WeakModulus,
    pub system_name: String,
    pub truncation: Truncation,
    /// Least alpha with `levels[alpha] == levels[alpha + 1]`.
    pub stabilized_at: usize,
    /// Tuple pairs in enumeration order (sort, left point, right point).
    entries: Vec<Vec<Pos>>,
    /// Point labels per sort, for the dump.
    left_labels: Vec<Vec<String>>,
    right_labels: Vec<Vec<String>>,
    /// `levels[alpha][entry]` is the value at iteration `alpha`.
    pub levels: Vec<Vec<f64>>,
}

/// One row of a table dump.
#[derive(Debug, Clone, Serialize)]
pub struct BafRow {
    pub alpha: usize,
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub value: f64,
}

impl BafTable {
    /// Final value on the empty tuple pair.
    pub fn empty_value(&self) -> f64 {
        *self.levels.last().expect("at least the base level")
            .first()
            .expect("empty tuple entry")
    }

    pub fn value(&self, alpha: usize, entry: usize) -> f64 {
        self.levels[alpha][entry]
    }

    pub fn dump(&self) -> Vec<BafRow> {
        let mut rows = Vec::new();
        for (alpha, level) in self.levels.iter().enumerate() {
            for (e, &value) in level.iter().enumerate() {
                let left = self.entries[e]
                    .iter()
                    .map(|&(s, lp, _)| self.left_labels[s][lp].clone())
                    .collect();
                let right = self.entries[e]
                    .iter()
                    .map(|&(s, _, rp)| self.right_labels[s][rp].clone())
                    .collect();
                rows.push(BafRow { alpha, left, right, value });
            }
        }
        rows
    }
}

/// Generator metadata reused across all entries.
struct GenInfo {
    formula: Formula,
    /// Free variables ascending with their sort index and inferred constant.
    vars: Vec<(VarIdx, usize, f64)>,
}

struct Ctx<'a> {
    left: &'a MetricStructure,
    right: &'a MetricStructure,
    gens: Vec<GenInfo>,
    omega: WeakModulus,
}

impl<'a> Ctx<'a> {
    fn new(
        sys: &DistortionSystem,
        omega: &WeakModulus,
        left: &'a MetricStructure,
        right: &'a MetricStructure,
    ) -> Result<Ctx<'a>> {
        omega.validate()?;
        let sig = left.signature();
        for sort in &left.sorts {
            if right.sort(&sort.name).is_none() {
                return Err(Error::SignatureMismatch(format!(
                    "right structure lacks sort {}",
                    sort.name
                )));
            }
        }
        for sort in &right.sorts {
            if left.sort(&sort.name).is_none() {
                return Err(Error::SignatureMismatch(format!(
                    "left structure lacks sort {}",
                    sort.name
                )));
            }
        }
        let mut gens = Vec::with_capacity(sys.generators.len());
        for g in &sys.generators {
            let free = g.free_vars(&sig)?;
            let modulus = infer_modulus(g, &sig)?;
            let vars = free
                .iter()
                .map(|(v, sort)| {
                    let si = left
                        .sort_index(sort)
                        .ok_or_else(|| Error::SignatureMismatch(format!("unknown sort {sort}")))?;
                    Ok((*v, si, modulus.lipschitz(*v)))
                })
                .collect::<Result<Vec<_>>>()?;
            gens.push(GenInfo { formula: g.clone(), vars });
        }
        Ok(Ctx { left, right, gens, omega: omega.clone() })
    }

    /// Base value on a tuple pair: the largest discrepancy over generator
    /// instances. Variable `x_v` may bind position `p >= v`, positions are
    /// strictly increasing in variable order, sorts must match, and the
    /// variable's constant must fit under the weight of the target position.
    fn r0_entry(&self, key: &[Pos]) -> f64 {
        let mut worst = 0.0f64;
        let mut bl = Binding::new();
        let mut br = Binding::new();
        for gen in &self.gens {
            let mut positions = vec![0usize; gen.vars.len()];
            self.instances(gen, key, 0, &mut positions, &mut bl, &mut br, &mut worst);
        }
        worst
    }

    #[allow(clippy::too_many_arguments)]
    fn instances(
        &self,
        gen: &GenInfo,
        key: &[Pos],
        var_at: usize,
        positions: &mut [usize],
        bl: &mut Binding,
        br: &mut Binding,
        worst: &mut f64,
    ) {
        if var_at == gen.vars.len() {
            let lv = evaluate(&gen.formula, self.left, bl).expect("generators are total");
            let rv = evaluate(&gen.formula, self.right, br).expect("generators are total");
            *worst = worst.max((lv - rv).abs());
            return;
        }
        let (v, vsort, constant) = gen.vars[var_at];
        let start = if var_at == 0 {
            v as usize
        } else {
            (positions[var_at - 1] + 1).max(v as usize)
        };
        for p in start..key.len() {
            let (s, lp, rp) = key[p];
            if s != vsort || constant > self.omega.weight(p as VarIdx) {
                continue;
            }
            positions[var_at] = p;
            bl.set(v, s, lp);
            let rsi = self
                .right
                .sort_index(&self.left.sorts[s].name)
                .expect("sorts checked at construction");
            br.set(v, rsi, rp);
            self.instances(gen, key, var_at + 1, positions, bl, br, worst);
            bl.clear(v);
            br.clear(v);
        }
    }

    /// All (sort, left point, right point) extensions in enumeration order.
    fn extensions(&self) -> Vec<Pos> {
        let mut out = Vec::new();
        for (s, sort) in self.left.sorts.iter().enumerate() {
            let rn = self.right.sort(&sort.name).expect("checked").len();
            for a in 0..sort.len() {
                for b in 0..rn {
                    out.push((s, a, b));
                }
            }
        }
        out
    }
}

struct Tables {
    entries: Vec<Vec<Pos>>,
    /// For entries shorter than the cap: child entry per extension, in the
    /// (sort, left point, right point) enumeration order.
    children: Vec<Vec<u32>>,
}

fn build_tables(ctx: &Ctx<'_>, k: usize) -> Result<Tables> {
    let extensions = ctx.extensions();
    let mut entries: Vec<Vec<Pos>> = vec![Vec::new()];
    let mut children: Vec<Vec<u32>> = Vec::new();
    let mut level_start = 0usize;
    for _len in 0..k {
        let level_end = entries.len();
        for e in level_start..level_end {
            let mut kids = Vec::with_capacity(extensions.len());
            for &ext in &extensions {
                let mut key = entries[e].clone();
                key.push(ext);
                kids.push(entries.len() as u32);
                entries.push(key);
                if entries.len() > MAX_ENTRIES {
                    return Err(Error::SizeGuard(format!(
                        "back-and-forth table exceeds {MAX_ENTRIES} tuple pairs"
                    )));
                }
            }
            children.push(kids);
        }
        level_start = level_end;
    }
    Ok(Tables { entries, children })
}

fn base_level(ctx: &Ctx<'_>, tables: &Tables) -> Vec<f64> {
    tables
        .entries
        .par_iter()
        .map(|key| ctx.r0_entry(key))
        .collect()
}

/// One application of the successor operator. Entries at the cap keep their
/// previous (base) value.
fn successor(ctx: &Ctx<'_>, tables: &Tables, prev: &[f64]) -> Vec<f64> {
    let n_short = tables.children.len();
    (0..tables.entries.len())
        .into_par_iter()
        .map(|e| {
            if e >= n_short {
                return prev[e];
            }
            let kids = &tables.children[e];
            let mut forth = 0.0f64;
            let mut back = 0.0f64;
            // Forth: each left extension answered by the cheapest right one;
            // back: symmetric. Extensions are grouped by (sort, a, b).
            let mut idx = 0usize;
            for sort in ctx.left.sorts.iter() {
                let rn = ctx.right.sort(&sort.name).expect("checked").len();
                let ln = sort.len();
                for a in 0..ln {
                    let mut best = f64::INFINITY;
                    for b in 0..rn {
                        best = best.min(prev[kids[idx + a * rn + b] as usize]);
                    }
                    forth = forth.max(best);
                }
                for b in 0..rn {
                    let mut best = f64::INFINITY;
                    for a in 0..ln {
                        best = best.min(prev[kids[idx + a * rn + b] as usize]);
                    }
                    back = back.max(best);
                }
                idx += ln * rn;
            }
            forth.max(back)
        })
        .collect()
}

fn resolve_tuple(
    s: &MetricStructure,
    tuple: &[(String, String)],
) -> Result<Vec<(usize, usize)>> {
    tuple
        .iter()
        .map(|(sort, point)| {
            let si = s
                .sort_index(sort)
                .ok_or_else(|| Error::input(format!("unknown sort {sort}")))?;
            let pi = s.sorts[si]
                .point_index(point)
                .ok_or_else(|| Error::input(format!("unknown point {point} in sort {sort}")))?;
            Ok((si, pi))
        })
        .collect()
}

/// The base pseudo-metric on a pair of equal-length tuples, given by point
/// labels: the supremum of generator-instance discrepancies filtered by the
/// weak modulus.
pub fn r0(
    sys: &DistortionSystem,
    omega: &WeakModulus,
    left: &MetricStructure,
    left_tuple: &[(String, String)],
    right: &MetricStructure,
    right_tuple: &[(String, String)],
) -> Result<f64> {
    if left_tuple.len() != right_tuple.len() {
        return Err(Error::input("tuples must have equal length"));
    }
    let ctx = Ctx::new(sys, omega, left, right)?;
    let lt = resolve_tuple(left, left_tuple)?;
    let rt = resolve_tuple(right, right_tuple)?;
    let mut key = Vec::with_capacity(lt.len());
    for (i, (&(ls, lp), &(rs, rp))) in lt.iter().zip(&rt).enumerate() {
        if left.sorts[ls].name != right.sorts[rs].name {
            return Err(Error::input(format!("tuple position {i}: sorts disagree")));
        }
        key.push((ls, lp, rp));
    }
    Ok(ctx.r0_entry(&key))
}

/// The `rounds`-step back-and-forth value on empty tuples: the sup-inf
/// recursion unrolled exactly `rounds` times, bottoming out at the base
/// pseudo-metric on length-`rounds` tuples.
pub fn r_finite(
    sys: &DistortionSystem,
    omega: &WeakModulus,
    left: &MetricStructure,
    right: &MetricStructure,
    rounds: usize,
) -> Result<f64> {
    let ctx = Ctx::new(sys, omega, left, right)?;
    let tables = build_tables(&ctx, rounds)?;
    let mut current = base_level(&ctx, &tables);
    for _ in 0..rounds {
        let next = successor(&ctx, &tables, &current);
        if next == current {
            break;
        }
        current = next;
    }
    Ok(current[0])
}

/// Iterates the successor operator on all tuple pairs of length `<= k`
/// (length-`k` pairs frozen at their base value) until no entry changes,
/// returning the full table history and the stabilization index.
pub fn r_infty_capped(
    sys: &DistortionSystem,
    omega: &WeakModulus,
    left: &MetricStructure,
    right: &MetricStructure,
    k: usize,
) -> Result<BafTable> {
    let ctx = Ctx::new(sys, omega, left, right)?;
    let tables = build_tables(&ctx, k)?;
    let mut levels = vec![base_level(&ctx, &tables)];
    let stabilized_at = loop {
        let current = levels.last().expect("nonempty");
        let next = successor(&ctx, &tables, current);
        if &next == current {
            break levels.len() - 1;
        }
        levels.push(next);
    };
    let left_labels = left.sorts.iter().map(|s| s.points.clone()).collect();
    let right_labels = left
        .sorts
        .iter()
        .map(|s| right.sort(&s.name).expect("checked").points.clone())
        .collect();
    Ok(BafTable {
        depth_cap: k,
        omega: omega.clone(),
        system_name: sys.name.clone(),
        truncation: sys.truncation.clone(),
        stabilized_at,
        entries: tables.entries,
        left_labels,
        right_labels,
        levels,
    })
}

/// The stabilization index of a capped table: the least iteration at which
/// no entry changes. This is the capped proxy for the Scott rank of the
/// pair of structures.
pub fn scott_rank_capped(table: &BafTable) -> usize {
    table.stabilized_at
}
