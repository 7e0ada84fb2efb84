//! Distortion systems: finite generator sets of formulas, the distortion of
//! a correlation, and the named builtin families.
//!
//! Distortion is always computed from the generators alone. Quantifying,
//! renaming, and combining generators with 1-Lipschitz connectives cannot
//! change the distortion of a correlation, so the (infinite) closed system
//! is never materialized; the invariant tests exercise this directly.
//!
//! The infinite builtin families are truncated to finite generator lists and
//! the truncation parameters travel with every result.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formula::{evaluate, Binding, Formula, Signature, VarIdx};
use crate::structure::{Correlation, MetricStructure};
use crate::{Error, Result, TOL};

/// Parameters that produced a finite generator list from an infinite family.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Clamp radius cutoff for the Lipschitz and Banach-Mazur families.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<u32>,
    /// Coefficient cutoff for the IU family.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
    /// Predicate-index cutoff for coefficient-weighted families.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index_cutoff: Option<u32>,
    /// Dyadic depth of the Kadets coefficient vectors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kadets_level: Option<u32>,
}

pub const DEFAULT_LIP_R_MAX: u32 = 4;
pub const DEFAULT_IU_N_MAX: u32 = 16;
pub const DEFAULT_KADETS_LEVEL: u32 = 3;

/// A named finite generator set plus the truncation that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionSystem {
    pub name: String,
    pub generators: Vec<Formula>,
    pub truncation: Truncation,
}

impl DistortionSystem {
    /// Builds a system, deduplicating generators up to AST equality.
    pub fn new(
        name: impl Into<String>,
        generators: Vec<Formula>,
        truncation: Truncation,
    ) -> DistortionSystem {
        let mut dedup: Vec<Formula> = Vec::with_capacity(generators.len());
        for g in generators {
            if !dedup.contains(&g) {
                dedup.push(g);
            }
        }
        DistortionSystem { name: name.into(), generators: dedup, truncation }
    }

    /// Checks that every generator parses against the signature (names,
    /// arities, and variable sorts resolve).
    pub fn validate(&self, sig: &Signature) -> Result<()> {
        for g in &self.generators {
            g.free_vars(sig)?;
        }
        Ok(())
    }
}

/// The named builtin families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// Gromov-Hausdorff: one generator `(scale 0.5 (d S x0 x1))` per sort.
    Gh,
    /// Lipschitz distance: `(cliplog (d S x0 x1) -r r)` for `r = 1..=r_max`.
    Lip,
    /// Kadets: the linear-combination norm predicates of a sampled unit
    /// ball (predicates named `lc*`), applied to distinct variables.
    Kadets,
    /// Finitary GHK: `(scale 0.5 d)` plus each atomic predicate weighted by
    /// `1 / (2^i * r_i)` in declaration order, `r_i = 1 + max(|a|,|b|)`.
    Fghk,
    /// Elementary GHK: for each atomic `phi`, the 1-Lipschitz regularization
    /// `chi_phi(x) = inf_y phi(y) + d(x, y)` (max metric on tuples).
    Eghk,
    /// The irregular interval system: `(scale 0.5 d)` plus `n * U(x0)` for
    /// `n = 1..=n_max`.
    Iu,
}

impl std::str::FromStr for Builtin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Builtin> {
        match s.to_ascii_lowercase().as_str() {
            "gh" => Ok(Builtin::Gh),
            "lip" => Ok(Builtin::Lip),
            "kadets" => Ok(Builtin::Kadets),
            "fghk" => Ok(Builtin::Fghk),
            "eghk" => Ok(Builtin::Eghk),
            "iu" => Ok(Builtin::Iu),
            other => Err(Error::input(format!("unknown builtin system '{other}'"))),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Builtin::Gh => "gh",
            Builtin::Lip => "lip",
            Builtin::Kadets => "kadets",
            Builtin::Fghk => "fghk",
            Builtin::Eghk => "eghk",
            Builtin::Iu => "iu",
        };
        write!(f, "{s}")
    }
}

fn half_d(sort: &str) -> Formula {
    Formula::Scale(
        0.5,
        Box::new(Formula::Dist { sort: sort.to_string(), left: 0, right: 1 }),
    )
}

/// `chi_phi(x0..x_{m-1}) = inf_{x_m..x_{2m-1}} phi(x_m..) + max_k d(x_k, x_{m+k})`.
fn regularize(arg_sorts: &[String], atom: Formula) -> Formula {
    let m = arg_sorts.len();
    let mut metric_part: Option<Formula> = None;
    for (k, sort) in arg_sorts.iter().enumerate() {
        let term = Formula::Dist {
            sort: sort.clone(),
            left: k as VarIdx,
            right: (m + k) as VarIdx,
        };
        metric_part = Some(match metric_part {
            None => term,
            Some(acc) => Formula::Max(Box::new(acc), Box::new(term)),
        });
    }
    let mut body = Formula::Add(Box::new(atom), Box::new(metric_part.expect("positive arity")));
    for k in (m..2 * m).rev() {
        body = Formula::Inf {
            var: k as VarIdx,
            sort: arg_sorts[k - m].clone(),
            body: Box::new(body),
        };
    }
    body
}

/// Constructs a named builtin system for a signature. Unset truncation
/// fields fall back to the family defaults and are recorded in the result.
pub fn builtin(kind: Builtin, sig: &Signature, trunc: Truncation) -> Result<DistortionSystem> {
    if sig.sorts.is_empty() {
        return Err(Error::SignatureMismatch("signature has no sorts".into()));
    }
    match kind {
        Builtin::Gh => {
            let gens = sig.sorts.iter().map(|s| half_d(&s.name)).collect();
            Ok(DistortionSystem::new("gh", gens, Truncation::default()))
        }
        Builtin::Lip => {
            let r_max = trunc.r_max.unwrap_or(DEFAULT_LIP_R_MAX);
            if r_max == 0 {
                return Err(Error::input("lip needs r_max >= 1"));
            }
            let mut gens = Vec::new();
            for s in &sig.sorts {
                for r in 1..=r_max {
                    let r = f64::from(r);
                    gens.push(Formula::ClipLog(
                        Box::new(Formula::Dist { sort: s.name.clone(), left: 0, right: 1 }),
                        -r,
                        r,
                    ));
                }
            }
            Ok(DistortionSystem::new(
                "lip",
                gens,
                Truncation { r_max: Some(r_max), ..Truncation::default() },
            ))
        }
        Builtin::Fghk => {
            let cutoff = trunc.index_cutoff.map_or(usize::MAX, |c| c as usize);
            let mut gens: Vec<Formula> = sig.sorts.iter().map(|s| half_d(&s.name)).collect();
            for (i, pred) in sig.predicates.iter().enumerate().take(cutoff) {
                let r_i = 1.0 + pred.range.0.abs().max(pred.range.1.abs());
                let weight = 1.0 / (2f64.powi(i as i32) * r_i);
                gens.push(Formula::Scale(
                    weight,
                    Box::new(Formula::Pred {
                        name: pred.name.clone(),
                        args: (0..pred.arity as VarIdx).collect(),
                    }),
                ));
            }
            Ok(DistortionSystem::new(
                "fghk",
                gens,
                Truncation { index_cutoff: trunc.index_cutoff, ..Truncation::default() },
            ))
        }
        Builtin::Eghk => {
            let mut gens = Vec::new();
            for s in &sig.sorts {
                let atom = Formula::Dist { sort: s.name.clone(), left: 2, right: 3 };
                gens.push(regularize(&[s.name.clone(), s.name.clone()], atom));
            }
            for pred in &sig.predicates {
                let m = pred.arity;
                let atom = Formula::Pred {
                    name: pred.name.clone(),
                    args: (m as VarIdx..(2 * m) as VarIdx).collect(),
                };
                gens.push(regularize(&pred.arg_sorts, atom));
            }
            Ok(DistortionSystem::new("eghk", gens, Truncation::default()))
        }
        Builtin::Iu => {
            let n_max = trunc.n_max.unwrap_or(DEFAULT_IU_N_MAX);
            let u = sig
                .predicate("U")
                .ok_or_else(|| Error::SignatureMismatch("iu needs a unary predicate U".into()))?;
            if u.arity != 1 {
                return Err(Error::SignatureMismatch("iu needs U to be unary".into()));
            }
            if u.range.0 < -TOL || u.range.1 > 1.0 + TOL {
                return Err(Error::SignatureMismatch("iu needs U to be [0,1]-valued".into()));
            }
            if u.lipschitz[0] > 1.0 + TOL {
                return Err(Error::SignatureMismatch("iu needs U to be 1-Lipschitz".into()));
            }
            let mut gens: Vec<Formula> = sig.sorts.iter().map(|s| half_d(&s.name)).collect();
            for n in 1..=n_max {
                gens.push(Formula::Scale(
                    f64::from(n),
                    Box::new(Formula::Pred { name: "U".into(), args: vec![0] }),
                ));
            }
            Ok(DistortionSystem::new(
                "iu",
                gens,
                Truncation { n_max: Some(n_max), ..Truncation::default() },
            ))
        }
        Builtin::Kadets => {
            let gens: Vec<Formula> = sig
                .predicates
                .iter()
                .filter(|p| p.name.starts_with("lc"))
                .map(|p| Formula::Pred {
                    name: p.name.clone(),
                    args: (0..p.arity as VarIdx).collect(),
                })
                .collect();
            if gens.is_empty() {
                return Err(Error::SignatureMismatch(
                    "kadets needs linear-combination predicates (lc*) from a sampled unit ball"
                        .into(),
                ));
            }
            Ok(DistortionSystem::new(
                "kadets",
                gens,
                Truncation { kadets_level: trunc.kadets_level, ..Truncation::default() },
            ))
        }
    }
}

/// Canonical Kadets coefficient vectors: dyadic entries `+/- 2^-j` with
/// `j <= level` summing to 1 in absolute value, deduplicated up to
/// permutation (entries nonincreasing in magnitude) and a global sign flip
/// (first entry positive).
pub fn kadets_vectors(level: u32) -> Vec<Vec<f64>> {
    let unit = 1u32 << level; // work in units of 2^-level
    let mut parts_stack: Vec<Vec<u32>> = Vec::new();
    let mut out = Vec::new();
    fn partitions(remaining: u32, max_part: u32, current: &mut Vec<u32>, acc: &mut Vec<Vec<u32>>) {
        if remaining == 0 {
            acc.push(current.clone());
            return;
        }
        let mut part = max_part.min(remaining);
        while part >= 1 {
            // parts must be powers of two
            if part.is_power_of_two() {
                current.push(part);
                partitions(remaining - part, part, current, acc);
                current.pop();
            }
            part -= 1;
        }
    }
    let mut acc = Vec::new();
    partitions(unit, unit, &mut parts_stack.pop().unwrap_or_default(), &mut acc);
    for parts in acc {
        // Sign patterns with the first entry positive.
        let n = parts.len();
        for mask in 0..(1u32 << n.saturating_sub(1)) {
            let mut vec = Vec::with_capacity(n);
            for (i, &p) in parts.iter().enumerate() {
                let sign = if i == 0 {
                    1.0
                } else if (mask >> (i - 1)) & 1 == 1 {
                    -1.0
                } else {
                    1.0
                };
                vec.push(sign * f64::from(p) / f64::from(unit));
            }
            out.push(vec);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Distortion evaluation engine
// ---------------------------------------------------------------------------

/// A related pair inside one sort, identified by an index into the engine's
/// pair universe.
pub(crate) type PairId = usize;

/// Precomputed discrepancy tables for a (system, left, right) triple over an
/// explicit universe of candidate pairs.
///
/// The search uses the all-cells universe; evaluating a given correlation
/// uses only its own pairs, which keeps the tables small on large
/// structures. Generators with up to three free variables get dense
/// discrepancy tables (the ternary ones only while they fit a size cap);
/// wider generators are evaluated on demand.
pub(crate) struct DisEngine<'a> {
    pub left: &'a MetricStructure,
    pub right: &'a MetricStructure,
    /// (sort, left point, right point) per pair id.
    pub universe: Vec<(usize, usize, usize)>,
    /// Pair ids grouped by sort, ascending.
    pub by_sort: Vec<Vec<PairId>>,
    /// Reverse lookup: per sort, left x right -> pair id.
    index: Vec<Vec<Vec<Option<u32>>>>,
    pub total_pairs: usize,
    gens: Vec<GenEval>,
}

struct GenEval {
    /// Index into the system's generator list (for witnesses).
    index: usize,
    /// Free variables in ascending order with their sort indices.
    vars: Vec<(VarIdx, usize)>,
    kind: GenKind,
}

enum GenKind {
    /// Sentence: a single discrepancy value.
    Nullary(f64),
    /// One free variable: discrepancy per pair id.
    Unary(Vec<f64>),
    /// Two free variables: discrepancy per (pair, pair).
    Binary(Vec<f64>),
    /// Three free variables, tabulated while the cube fits the cap.
    Ternary(Vec<f64>),
    /// Evaluated on demand.
    Wide(Formula),
}

/// Ternary tables are built only below this entry count.
const TERNARY_TABLE_CAP: usize = 2_000_000;

/// Every cell of every sort, in (sort, row, column) order.
fn all_cells(left: &MetricStructure, right: &MetricStructure) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (s, sort) in left.sorts.iter().enumerate() {
        let rn = right.sort(&sort.name).map_or(0, |r| r.len());
        for i in 0..sort.len() {
            for j in 0..rn {
                out.push((s, i, j));
            }
        }
    }
    out
}

impl<'a> DisEngine<'a> {
    /// Engine over every cell; pair ids follow (sort, row, column) order.
    pub fn new(
        sys: &DistortionSystem,
        left: &'a MetricStructure,
        right: &'a MetricStructure,
    ) -> Result<DisEngine<'a>> {
        Self::check_sorts(left, right)?;
        Self::over(sys, left, right, all_cells(left, right))
    }

    /// Engine over the related pairs of one correlation.
    pub fn for_correlation(
        sys: &DistortionSystem,
        left: &'a MetricStructure,
        right: &'a MetricStructure,
        corr: &Correlation,
    ) -> Result<DisEngine<'a>> {
        Self::check_sorts(left, right)?;
        corr.check_dims(left, right)?;
        let mut universe = Vec::new();
        for (si, sort) in left.sorts.iter().enumerate() {
            let rel = corr
                .sort_relation(&sort.name)
                .ok_or_else(|| Error::input(format!("correlation lacks sort {}", sort.name)))?;
            for (i, row) in rel.matrix.iter().enumerate() {
                for (j, &b) in row.iter().enumerate() {
                    if b {
                        universe.push((si, i, j));
                    }
                }
            }
        }
        Self::over(sys, left, right, universe)
    }

    fn check_sorts(left: &MetricStructure, right: &MetricStructure) -> Result<()> {
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
        Ok(())
    }

    fn over(
        sys: &DistortionSystem,
        left: &'a MetricStructure,
        right: &'a MetricStructure,
        universe: Vec<(usize, usize, usize)>,
    ) -> Result<DisEngine<'a>> {
        let sig = left.signature();
        let total = universe.len();
        let mut by_sort = vec![Vec::new(); left.sorts.len()];
        let mut index: Vec<Vec<Vec<Option<u32>>>> = left
            .sorts
            .iter()
            .map(|s| {
                let rn = right.sort(&s.name).expect("checked").len();
                vec![vec![None; rn]; s.len()]
            })
            .collect();
        for (p, &(s, i, j)) in universe.iter().enumerate() {
            by_sort[s].push(p);
            index[s][i][j] = Some(p as u32);
        }

        // Right-structure sort index and binding per pair, reused in loops.
        let right_sort_of: Vec<usize> = left
            .sorts
            .iter()
            .map(|s| right.sort_index(&s.name).expect("checked"))
            .collect();

        let mut gens = Vec::with_capacity(sys.generators.len());
        for (gen_index, formula) in sys.generators.iter().enumerate() {
            let free = formula.free_vars(&sig)?;
            let mut vars = Vec::with_capacity(free.len());
            for (v, sort_name) in &free {
                let si = left.sort_index(sort_name).ok_or_else(|| {
                    Error::SignatureMismatch(format!("generator uses unknown sort {sort_name}"))
                })?;
                if right.sort(sort_name).is_none() {
                    return Err(Error::SignatureMismatch(format!(
                        "right structure lacks sort {sort_name}"
                    )));
                }
                vars.push((*v, si));
            }
            let mut names = Vec::new();
            collect_pred_names(formula, &mut names);
            for name in names {
                if left.predicate(&name).is_none() || right.predicate(&name).is_none() {
                    return Err(Error::SignatureMismatch(format!(
                        "both structures need predicate {name}"
                    )));
                }
            }

            let mut bl = Binding::new();
            let mut br = Binding::new();
            let bind = |bl: &mut Binding, br: &mut Binding, v: VarIdx, p: PairId| {
                let (s, i, j) = universe[p];
                bl.set(v, s, i);
                br.set(v, right_sort_of[s], j);
            };
            let kind = match vars.len() {
                0 => {
                    let lv = evaluate(formula, left, &Binding::new())?;
                    let rv = evaluate(formula, right, &Binding::new())?;
                    GenKind::Nullary((lv - rv).abs())
                }
                1 => {
                    let (v, s) = vars[0];
                    let mut table = vec![f64::NAN; total];
                    for &p in &by_sort[s] {
                        bind(&mut bl, &mut br, v, p);
                        let lv = evaluate(formula, left, &bl)?;
                        let rv = evaluate(formula, right, &br)?;
                        table[p] = (lv - rv).abs();
                    }
                    GenKind::Unary(table)
                }
                2 => {
                    let (v1, s1) = vars[0];
                    let (v2, s2) = vars[1];
                    let mut table = vec![f64::NAN; total * total];
                    for &a in &by_sort[s1] {
                        bind(&mut bl, &mut br, v1, a);
                        for &b in &by_sort[s2] {
                            bind(&mut bl, &mut br, v2, b);
                            let lv = evaluate(formula, left, &bl)?;
                            let rv = evaluate(formula, right, &br)?;
                            table[a * total + b] = (lv - rv).abs();
                        }
                    }
                    GenKind::Binary(table)
                }
                3 if total * total * total <= TERNARY_TABLE_CAP => {
                    let (v1, s1) = vars[0];
                    let (v2, s2) = vars[1];
                    let (v3, s3) = vars[2];
                    let mut table = vec![f64::NAN; total * total * total];
                    for &a in &by_sort[s1] {
                        bind(&mut bl, &mut br, v1, a);
                        for &b in &by_sort[s2] {
                            bind(&mut bl, &mut br, v2, b);
                            for &c in &by_sort[s3] {
                                bind(&mut bl, &mut br, v3, c);
                                let lv = evaluate(formula, left, &bl)?;
                                let rv = evaluate(formula, right, &br)?;
                                table[(a * total + b) * total + c] = (lv - rv).abs();
                            }
                        }
                    }
                    GenKind::Ternary(table)
                }
                _ => GenKind::Wide(formula.clone()),
            };
            gens.push(GenEval { index: gen_index, vars, kind });
        }
        Ok(DisEngine { left, right, universe, by_sort, index, total_pairs: total, gens })
    }

    /// Pair id of a cell; panics when the cell is outside the universe.
    pub fn pair_id(&self, sort: usize, i: usize, j: usize) -> PairId {
        self.index[sort][i][j].expect("cell outside the engine's pair universe") as PairId
    }

    pub fn decompose(&self, pair: PairId) -> (usize, usize, usize) {
        self.universe[pair]
    }

    /// Largest discrepancy over assignments that use `pair` at least once
    /// and draw the rest from `others` (which need not contain `pair`).
    pub fn incremental_cost(&self, pair: PairId, others: &[Vec<PairId>]) -> f64 {
        let (psort, _, _) = self.universe[pair];
        let mut worst = 0.0f64;
        for gen in &self.gens {
            if !gen.vars.iter().any(|&(_, s)| s == psort) {
                continue;
            }
            match &gen.kind {
                GenKind::Nullary(_) => {}
                GenKind::Unary(table) => {
                    if gen.vars[0].1 == psort {
                        worst = worst.max(table[pair]);
                    }
                }
                GenKind::Binary(table) => {
                    let (s1, s2) = (gen.vars[0].1, gen.vars[1].1);
                    if s1 == psort {
                        for &b in others[s2]
                            .iter()
                            .chain(std::iter::once(&pair).filter(|_| s2 == psort))
                        {
                            worst = worst.max(table[pair * self.total_pairs + b]);
                        }
                    }
                    if s2 == psort {
                        for &a in others[s1]
                            .iter()
                            .chain(std::iter::once(&pair).filter(|_| s1 == psort))
                        {
                            worst = worst.max(table[a * self.total_pairs + pair]);
                        }
                    }
                }
                GenKind::Ternary(table) => {
                    let pools = self.pools_with(&gen.vars, pair, others);
                    let t = self.total_pairs;
                    for &a in &pools[0] {
                        for &b in &pools[1] {
                            for &c in &pools[2] {
                                if a == pair || b == pair || c == pair {
                                    worst = worst.max(table[(a * t + b) * t + c]);
                                }
                            }
                        }
                    }
                }
                GenKind::Wide(formula) => {
                    worst = worst.max(self.wide_max_with(formula, &gen.vars, pair, others));
                }
            }
        }
        worst
    }

    fn pools_with(
        &self,
        vars: &[(VarIdx, usize)],
        pair: PairId,
        others: &[Vec<PairId>],
    ) -> Vec<Vec<PairId>> {
        let (psort, _, _) = self.universe[pair];
        vars.iter()
            .map(|&(_, s)| {
                let mut pool = others[s].clone();
                if psort == s && !pool.contains(&pair) {
                    pool.push(pair);
                }
                pool
            })
            .collect()
    }

    fn wide_max_with(
        &self,
        formula: &Formula,
        vars: &[(VarIdx, usize)],
        pair: PairId,
        others: &[Vec<PairId>],
    ) -> f64 {
        let pools = self.pools_with(vars, pair, others);
        if pools.iter().any(|p| p.is_empty()) {
            return 0.0;
        }
        let mut idx = vec![0usize; vars.len()];
        let mut worst = 0.0f64;
        loop {
            let assignment: Vec<PairId> = idx.iter().zip(&pools).map(|(i, p)| p[*i]).collect();
            if assignment.contains(&pair) {
                worst = worst.max(self.eval_assignment(formula, vars, &assignment));
            }
            if !advance(&mut idx, &pools) {
                break;
            }
        }
        worst
    }

    fn eval_assignment(&self, formula: &Formula, vars: &[(VarIdx, usize)], pairs: &[PairId]) -> f64 {
        let mut bl = Binding::new();
        let mut br = Binding::new();
        for (&(v, s), &p) in vars.iter().zip(pairs) {
            let (ps, i, j) = self.universe[p];
            debug_assert_eq!(ps, s);
            let rsi = self
                .right
                .sort_index(&self.left.sorts[s].name)
                .expect("sorts checked at construction");
            bl.set(v, s, i);
            br.set(v, rsi, j);
        }
        let lv = evaluate(formula, self.left, &bl).expect("engine formulas are total");
        let rv = evaluate(formula, self.right, &br).expect("engine formulas are total");
        (lv - rv).abs()
    }

    /// Full distortion of a pair set with the lexicographically least
    /// witness: minimal generator index first, then the assignment compared
    /// as a sequence of (left, right) point indices in variable order.
    ///
    /// Generators are scored in parallel; the combine step is an exact max
    /// so the result does not depend on the partition.
    pub fn distortion(&self, pairs_by_sort: &[Vec<PairId>]) -> (f64, Option<(usize, Vec<PairId>)>) {
        let best = self
            .gens
            .par_iter()
            .map(|gen| {
                let (value, assignment) = self.gen_max(gen, pairs_by_sort, f64::INFINITY);
                (value, gen.index, assignment)
            })
            .reduce(
                || (f64::NEG_INFINITY, usize::MAX, None),
                |a, b| {
                    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                        b
                    } else {
                        a
                    }
                },
            );
        if best.1 == usize::MAX {
            return (0.0, None);
        }
        match best.2 {
            Some(assignment) => (best.0, Some((best.1, assignment))),
            None => (best.0.max(0.0), Some((best.1, Vec::new()))),
        }
    }

    /// True when the distortion of the pair set exceeds `bound`;
    /// short-circuits generator by generator.
    pub fn exceeds(&self, pairs_by_sort: &[Vec<PairId>], bound: f64) -> bool {
        for gen in &self.gens {
            let (value, _) = self.gen_max(gen, pairs_by_sort, bound);
            if value > bound {
                return true;
            }
        }
        false
    }

    /// Largest discrepancy of one generator over the pair set, with the
    /// lexicographically least assignment attaining it. Stops early once a
    /// value exceeds `cutoff`.
    fn gen_max(
        &self,
        gen: &GenEval,
        pairs_by_sort: &[Vec<PairId>],
        cutoff: f64,
    ) -> (f64, Option<Vec<PairId>>) {
        match &gen.kind {
            GenKind::Nullary(v) => (*v, Some(Vec::new())),
            GenKind::Unary(table) => {
                let pool = &pairs_by_sort[gen.vars[0].1];
                let mut best = f64::NEG_INFINITY;
                let mut witness = None;
                for &p in pool {
                    if table[p] > best {
                        best = table[p];
                        witness = Some(vec![p]);
                        if best > cutoff {
                            break;
                        }
                    }
                }
                if witness.is_none() {
                    (0.0, None)
                } else {
                    (best, witness)
                }
            }
            GenKind::Binary(table) => {
                let pool1 = &pairs_by_sort[gen.vars[0].1];
                let pool2 = &pairs_by_sort[gen.vars[1].1];
                let mut best = f64::NEG_INFINITY;
                let mut witness = None;
                'outer: for &a in pool1 {
                    for &b in pool2 {
                        let v = table[a * self.total_pairs + b];
                        if v > best {
                            best = v;
                            witness = Some(vec![a, b]);
                            if best > cutoff {
                                break 'outer;
                            }
                        }
                    }
                }
                if witness.is_none() {
                    (0.0, None)
                } else {
                    (best, witness)
                }
            }
            GenKind::Ternary(table) => {
                let pool1 = &pairs_by_sort[gen.vars[0].1];
                let pool2 = &pairs_by_sort[gen.vars[1].1];
                let pool3 = &pairs_by_sort[gen.vars[2].1];
                let t = self.total_pairs;
                let mut best = f64::NEG_INFINITY;
                let mut witness = None;
                'outer: for &a in pool1 {
                    for &b in pool2 {
                        for &c in pool3 {
                            let v = table[(a * t + b) * t + c];
                            if v > best {
                                best = v;
                                witness = Some(vec![a, b, c]);
                                if best > cutoff {
                                    break 'outer;
                                }
                            }
                        }
                    }
                }
                if witness.is_none() {
                    (0.0, None)
                } else {
                    (best, witness)
                }
            }
            GenKind::Wide(formula) => {
                let pools: Vec<&Vec<PairId>> =
                    gen.vars.iter().map(|&(_, s)| &pairs_by_sort[s]).collect();
                if pools.iter().any(|p| p.is_empty()) {
                    return (0.0, None);
                }
                let mut idx = vec![0usize; gen.vars.len()];
                let mut best = f64::NEG_INFINITY;
                let mut witness = None;
                loop {
                    let assignment: Vec<PairId> =
                        idx.iter().zip(&pools).map(|(i, p)| p[*i]).collect();
                    let v = self.eval_assignment(formula, &gen.vars, &assignment);
                    if v > best {
                        best = v;
                        witness = Some(assignment);
                        if best > cutoff {
                            break;
                        }
                    }
                    if !advance_refs(&mut idx, &pools) {
                        break;
                    }
                }
                (best, witness)
            }
        }
    }

    /// Variable list (ascending) of a generator, for witness reporting.
    pub fn gen_vars(&self, gen_index: usize) -> &[(VarIdx, usize)] {
        &self
            .gens
            .iter()
            .find(|g| g.index == gen_index)
            .expect("generator index from this engine")
            .vars
    }
}

fn collect_pred_names(f: &Formula, out: &mut Vec<String>) {
    match f {
        Formula::Pred { name, .. } => out.push(name.clone()),
        Formula::Neg(inner)
        | Formula::Scale(_, inner)
        | Formula::Clamp(inner, _, _)
        | Formula::ClipLog(inner, _, _) => collect_pred_names(inner, out),
        Formula::Add(a, b) | Formula::Max(a, b) | Formula::Min(a, b) | Formula::AbsDiff(a, b) => {
            collect_pred_names(a, out);
            collect_pred_names(b, out);
        }
        Formula::Sup { body, .. } | Formula::Inf { body, .. } => collect_pred_names(body, out),
        Formula::Const(_) | Formula::Dist { .. } => {}
    }
}

fn advance(idx: &mut [usize], pools: &[Vec<PairId>]) -> bool {
    for pos in (0..idx.len()).rev() {
        idx[pos] += 1;
        if idx[pos] < pools[pos].len() {
            return true;
        }
        idx[pos] = 0;
    }
    false
}

fn advance_refs(idx: &mut [usize], pools: &[&Vec<PairId>]) -> bool {
    for pos in (0..idx.len()).rev() {
        idx[pos] += 1;
        if idx[pos] < pools[pos].len() {
            return true;
        }
        idx[pos] = 0;
    }
    false
}

// ---------------------------------------------------------------------------
// Public distortion operation
// ---------------------------------------------------------------------------

/// One variable of a distortion witness, with point labels on both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessPair {
    pub var: VarIdx,
    pub sort: String,
    pub left: String,
    pub right: String,
}

/// The generator and tuple assignment achieving the distortion supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisWitness {
    pub generator: usize,
    pub formula: String,
    pub assignment: Vec<WitnessPair>,
}

/// Result of a distortion computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub value: f64,
    pub witness: Option<DisWitness>,
    pub truncation: Truncation,
}

/// The distortion of a relation: the exact supremum over all generators and
/// all tuples related componentwise (components drawn independently from the
/// relation). The witness is lexicographically least. Totality and
/// surjectivity are not required here; distortion is defined for any
/// relation.
pub fn distortion(
    sys: &DistortionSystem,
    left: &MetricStructure,
    right: &MetricStructure,
    corr: &Correlation,
) -> Result<DistortionReport> {
    let engine = DisEngine::for_correlation(sys, left, right, corr)?;
    let pairs = engine.by_sort.clone();
    let (value, raw) = engine.distortion(&pairs);
    let witness = raw.map(|(generator, assignment)| {
        let vars = engine.gen_vars(generator);
        let assignment = vars
            .iter()
            .zip(&assignment)
            .map(|(&(var, s), &p)| {
                let (_, i, j) = engine.decompose(p);
                let sort = &left.sorts[s];
                let rsort = right.sort(&sort.name).expect("checked");
                WitnessPair {
                    var,
                    sort: sort.name.clone(),
                    left: sort.points[i].clone(),
                    right: rsort.points[j].clone(),
                }
            })
            .collect();
        DisWitness {
            generator,
            formula: sys.generators[generator].to_string(),
            assignment,
        }
    });
    Ok(DistortionReport { value: value.max(0.0), witness, truncation: sys.truncation.clone() })
}

/// Reusable distortion evaluator for scoring many correlations between the
/// same pair of structures: the discrepancy tables over all cells are built
/// once.
pub struct DistortionEvaluator<'a> {
    engine: DisEngine<'a>,
}

impl<'a> DistortionEvaluator<'a> {
    pub fn new(
        sys: &DistortionSystem,
        left: &'a MetricStructure,
        right: &'a MetricStructure,
    ) -> Result<DistortionEvaluator<'a>> {
        Ok(DistortionEvaluator { engine: DisEngine::new(sys, left, right)? })
    }

    fn pairs(&self, corr: &Correlation) -> Result<Vec<Vec<PairId>>> {
        corr.check_dims(self.engine.left, self.engine.right)?;
        let mut by_sort = vec![Vec::new(); self.engine.left.sorts.len()];
        for (si, sort) in self.engine.left.sorts.iter().enumerate() {
            let rel = corr
                .sort_relation(&sort.name)
                .ok_or_else(|| Error::input(format!("correlation lacks sort {}", sort.name)))?;
            for (i, row) in rel.matrix.iter().enumerate() {
                for (j, &b) in row.iter().enumerate() {
                    if b {
                        by_sort[si].push(self.engine.pair_id(si, i, j));
                    }
                }
            }
        }
        Ok(by_sort)
    }

    pub fn value(&self, corr: &Correlation) -> Result<f64> {
        let pairs = self.pairs(corr)?;
        Ok(self.engine.distortion(&pairs).0.max(0.0))
    }

    /// Short-circuiting check that the distortion exceeds `bound`.
    pub fn exceeds(&self, corr: &Correlation, bound: f64) -> Result<bool> {
        let pairs = self.pairs(corr)?;
        Ok(self.engine.exceeds(&pairs, bound))
    }
}

// ---------------------------------------------------------------------------
// Atomic completeness and functionality witnesses
// ---------------------------------------------------------------------------

/// Counterexample to atomic completeness: two tuples that the generators
/// cannot tell apart even though some atomic value differs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicCounterexample {
    pub sorts: Vec<String>,
    pub left_tuple: Vec<String>,
    pub right_tuple: Vec<String>,
    pub atomic: String,
    pub left_value: f64,
    pub right_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicCompleteness {
    pub complete: bool,
    pub counterexample: Option<AtomicCounterexample>,
}

/// Finite-structure proxy for atomic completeness: no two tuples (up to
/// length twice the maximal atomic arity) may agree on every generator
/// instance yet disagree on some atomic value, at tolerance 1e-9.
pub fn check_atomic_completeness(
    sys: &DistortionSystem,
    s: &MetricStructure,
) -> Result<AtomicCompleteness> {
    let sig = s.signature();
    sys.validate(&sig)?;
    let max_atomic_arity = s.predicates.iter().map(|p| p.arity).chain([2]).max().unwrap_or(2);
    let max_len = 2 * max_atomic_arity;

    // Generator metadata: free vars (ascending) with sort indices.
    let mut gen_vars = Vec::with_capacity(sys.generators.len());
    for g in &sys.generators {
        let free = g.free_vars(&sig)?;
        let vars: Vec<(VarIdx, usize)> = free
            .iter()
            .map(|(v, sort)| (*v, s.sort_index(sort).expect("validated")))
            .collect();
        gen_vars.push(vars);
    }

    for len in 1..=max_len {
        let mut profile = vec![0usize; len];
        loop {
            // Enumerate tuple pairs of this sort profile.
            let dims: Vec<usize> = profile.iter().map(|&si| s.sorts[si].len()).collect();
            if dims.iter().all(|&d| d > 0) {
                let mut a = vec![0usize; len];
                loop {
                    let mut b = vec![0usize; len];
                    loop {
                        if a != b
                            && agrees_on_generators(s, sys, &gen_vars, &profile, &a, &b)?
                        {
                            if let Some(ce) = atomic_disagreement(s, &profile, &a, &b) {
                                return Ok(AtomicCompleteness {
                                    complete: false,
                                    counterexample: Some(ce),
                                });
                            }
                        }
                        if !crate::structure::next_index(&mut b, &dims) {
                            break;
                        }
                    }
                    if !crate::structure::next_index(&mut a, &dims) {
                        break;
                    }
                }
            }
            if !crate::structure::next_index(&mut profile, &vec![s.sorts.len(); len]) {
                break;
            }
        }
    }
    Ok(AtomicCompleteness { complete: true, counterexample: None })
}

/// True when every generator instance (variables substituted by tuple
/// positions, repeats allowed) takes the same value on both tuples.
fn agrees_on_generators(
    s: &MetricStructure,
    sys: &DistortionSystem,
    gen_vars: &[Vec<(VarIdx, usize)>],
    profile: &[usize],
    a: &[usize],
    b: &[usize],
) -> Result<bool> {
    for (g, vars) in sys.generators.iter().zip(gen_vars) {
        // Positions usable per variable: any tuple slot of the right sort.
        let pools: Vec<Vec<usize>> = vars
            .iter()
            .map(|&(_, vsort)| {
                (0..profile.len()).filter(|&k| profile[k] == vsort).collect::<Vec<_>>()
            })
            .collect();
        if pools.iter().any(|p| p.is_empty()) {
            continue;
        }
        let mut idx = vec![0usize; vars.len()];
        loop {
            let mut ba = Binding::new();
            let mut bb = Binding::new();
            for ((&(v, vsort), pool), &i) in vars.iter().zip(&pools).zip(&idx) {
                let slot = pool[i];
                ba.set(v, vsort, a[slot]);
                bb.set(v, vsort, b[slot]);
            }
            let va = evaluate(g, s, &ba)?;
            let vb = evaluate(g, s, &bb)?;
            if (va - vb).abs() > TOL {
                return Ok(false);
            }
            let mut done = true;
            for pos in (0..idx.len()).rev() {
                idx[pos] += 1;
                if idx[pos] < pools[pos].len() {
                    done = false;
                    break;
                }
                idx[pos] = 0;
            }
            if done {
                break;
            }
        }
    }
    Ok(true)
}

fn atomic_disagreement(
    s: &MetricStructure,
    profile: &[usize],
    a: &[usize],
    b: &[usize],
) -> Option<AtomicCounterexample> {
    let label = |slot: usize, pt: usize| s.sorts[profile[slot]].points[pt].clone();
    let tuple_labels = |t: &[usize]| -> Vec<String> {
        t.iter().enumerate().map(|(k, &p)| label(k, p)).collect()
    };
    // Metric atoms.
    for i in 0..profile.len() {
        for j in 0..profile.len() {
            if profile[i] != profile[j] {
                continue;
            }
            let sort = &s.sorts[profile[i]];
            let va = sort.dist(a[i], a[j]);
            let vb = sort.dist(b[i], b[j]);
            if (va - vb).abs() > TOL {
                return Some(AtomicCounterexample {
                    sorts: profile.iter().map(|&si| s.sorts[si].name.clone()).collect(),
                    left_tuple: tuple_labels(a),
                    right_tuple: tuple_labels(b),
                    atomic: format!("d({}, x{i}, x{j})", sort.name),
                    left_value: va,
                    right_value: vb,
                });
            }
        }
    }
    // Predicate atoms over every index map.
    for pred in &s.predicates {
        let pools: Vec<Vec<usize>> = pred
            .arg_sorts
            .iter()
            .map(|sort| {
                let si = s.sort_index(sort).expect("validated");
                (0..profile.len()).filter(|&k| profile[k] == si).collect::<Vec<_>>()
            })
            .collect();
        if pools.iter().any(|p| p.is_empty()) {
            continue;
        }
        let mut idx = vec![0usize; pred.arity];
        loop {
            let slots: Vec<usize> = idx.iter().zip(&pools).map(|(i, p)| p[*i]).collect();
            let ia: Vec<usize> = slots.iter().map(|&k| a[k]).collect();
            let ib: Vec<usize> = slots.iter().map(|&k| b[k]).collect();
            let va = pred.values.get(&ia);
            let vb = pred.values.get(&ib);
            if (va - vb).abs() > TOL {
                return Some(AtomicCounterexample {
                    sorts: profile.iter().map(|&si| s.sorts[si].name.clone()).collect(),
                    left_tuple: tuple_labels(a),
                    right_tuple: tuple_labels(b),
                    atomic: format!(
                        "{}({})",
                        pred.name,
                        slots.iter().map(|k| format!("x{k}")).collect::<Vec<_>>().join(", ")
                    ),
                    left_value: va,
                    right_value: vb,
                });
            }
            let mut done = true;
            for pos in (0..idx.len()).rev() {
                idx[pos] += 1;
                if idx[pos] < pools[pos].len() {
                    done = false;
                    break;
                }
                idx[pos] = 0;
            }
            if done {
                break;
            }
        }
    }
    None
}

/// Violation found by [`functionality_witness_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FunctionalityViolation {
    /// `phi(a, a)` is not zero.
    NonzeroDiagonal { structure: usize, point: String, value: f64 },
    /// `phi(a, b) < eps` but `d(a, b) >= delta`.
    LooseWitness { structure: usize, left: String, right: String, phi: f64, dist: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalityReport {
    pub holds: bool,
    pub violation: Option<FunctionalityViolation>,
}

/// Checks the functionality witness property of a binary generator on the
/// given finite structures: `phi(a, a) = 0` everywhere, and
/// `phi(a, b) < eps` implies `d(a, b) < delta`. Reports the first violation.
pub fn functionality_witness_check(
    sys: &DistortionSystem,
    phi: &Formula,
    eps: f64,
    delta: f64,
    structures: &[&MetricStructure],
) -> Result<FunctionalityReport> {
    if !sys.generators.contains(phi) {
        return Err(Error::input("phi must be a generator of the system"));
    }
    let first = structures
        .first()
        .ok_or_else(|| Error::input("need at least one structure"))?;
    let sig = first.signature();
    let free = phi.free_vars(&sig)?;
    let (vars, sorts): (Vec<VarIdx>, Vec<String>) = (
        free.keys().copied().collect(),
        free.values().cloned().collect(),
    );
    if vars.len() != 2 || sorts[0] != sorts[1] {
        return Err(Error::input("phi must be binary over a single sort"));
    }
    for (k, s) in structures.iter().enumerate() {
        let si = s
            .sort_index(&sorts[0])
            .ok_or_else(|| Error::SignatureMismatch(format!("structure lacks sort {}", sorts[0])))?;
        let n = s.sorts[si].len();
        for a in 0..n {
            let mut b = Binding::new();
            b.set(vars[0], si, a);
            b.set(vars[1], si, a);
            let v = evaluate(phi, s, &b)?;
            if v.abs() > TOL {
                return Ok(FunctionalityReport {
                    holds: false,
                    violation: Some(FunctionalityViolation::NonzeroDiagonal {
                        structure: k,
                        point: s.sorts[si].points[a].clone(),
                        value: v,
                    }),
                });
            }
        }
        for a in 0..n {
            for bpt in 0..n {
                let mut b = Binding::new();
                b.set(vars[0], si, a);
                b.set(vars[1], si, bpt);
                let v = evaluate(phi, s, &b)?;
                let dist = s.sorts[si].dist(a, bpt);
                if v < eps && dist >= delta {
                    return Ok(FunctionalityReport {
                        holds: false,
                        violation: Some(FunctionalityViolation::LooseWitness {
                            structure: k,
                            left: s.sorts[si].points[a].clone(),
                            right: s.sorts[si].points[bpt].clone(),
                            phi: v,
                            dist,
                        }),
                    });
                }
            }
        }
    }
    Ok(FunctionalityReport { holds: true, violation: None })
}

/// On-disk form of a distortion system: either a builtin name plus
/// truncation, or explicit generator strings in the DSL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<String>,
}

impl SystemSpec {
    pub fn resolve(&self, sig: &Signature) -> Result<DistortionSystem> {
        if let Some(b) = &self.builtin {
            let kind: Builtin = b.parse()?;
            let mut sys = builtin(kind, sig, self.truncation.clone())?;
            sys.name = self.name.clone();
            return Ok(sys);
        }
        let gens = self
            .generators
            .iter()
            .map(|g| crate::formula::parse(g, sig))
            .collect::<Result<Vec<_>>>()?;
        if gens.is_empty() {
            return Err(Error::input("system spec has neither builtin nor generators"));
        }
        Ok(DistortionSystem::new(self.name.clone(), gens, self.truncation.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{Predicate, Sort, Table};
    use std::collections::BTreeMap;

    fn bare(name: &str, points: usize, d: f64) -> MetricStructure {
        let metric = (0..points)
            .map(|i| (0..points).map(|j| if i == j { 0.0 } else { d }).collect())
            .collect();
        MetricStructure {
            sorts: vec![Sort {
                name: "S".into(),
                points: (0..points).map(|i| format!("{name}{i}")).collect(),
                metric,
                diameter_bound: d.max(1.0),
            }],
            predicates: vec![],
            constants: BTreeMap::new(),
        }
    }

    fn with_u(mut s: MetricStructure, values: Vec<f64>) -> MetricStructure {
        let n = s.sorts[0].len();
        assert_eq!(values.len(), n);
        s.predicates.push(Predicate {
            name: "U".into(),
            arity: 1,
            arg_sorts: vec!["S".into()],
            values: Table::new(vec![n], values).unwrap(),
            range: (0.0, 1.0),
            lipschitz: vec![1.0],
        });
        s
    }

    #[test]
    fn gh_builtin_is_half_distance() {
        let s = bare("p", 2, 1.0);
        let sys = builtin(Builtin::Gh, &s.signature(), Truncation::default()).unwrap();
        assert_eq!(sys.generators.len(), 1);
        assert_eq!(sys.generators[0].to_string(), "(scale 0.5 (d S x0 x1))");
    }

    #[test]
    fn fghk_weight_on_unit_predicate_is_half() {
        let s = with_u(bare("p", 2, 1.0), vec![0.0, 1.0]);
        let sys = builtin(Builtin::Fghk, &s.signature(), Truncation::default()).unwrap();
        // Generators: 0.5 d plus (1 / (2^0 * 2)) U = 0.5 U.
        assert_eq!(sys.generators.len(), 2);
        assert_eq!(sys.generators[1].to_string(), "(scale 0.5 (pred U x0))");
    }

    #[test]
    fn iu_builtin_lists_scaled_u() {
        let s = with_u(bare("p", 2, 1.0), vec![0.0, 1.0]);
        let sys = builtin(
            Builtin::Iu,
            &s.signature(),
            Truncation { n_max: Some(3), ..Truncation::default() },
        )
        .unwrap();
        let printed: Vec<String> = sys.generators.iter().map(|g| g.to_string()).collect();
        assert_eq!(
            printed,
            vec![
                "(scale 0.5 (d S x0 x1))",
                "(scale 1 (pred U x0))",
                "(scale 2 (pred U x0))",
                "(scale 3 (pred U x0))",
            ]
        );
        assert_eq!(sys.truncation.n_max, Some(3));
    }

    #[test]
    fn identity_correlation_has_zero_distortion() {
        let s = with_u(bare("p", 3, 1.0), vec![0.1, 0.5, 0.9]);
        let sig = s.signature();
        for kind in [Builtin::Gh, Builtin::Lip, Builtin::Fghk, Builtin::Eghk, Builtin::Iu] {
            let sys = builtin(kind, &sig, Truncation::default()).unwrap();
            let id = Correlation::identity(&s, "s");
            let rep = distortion(&sys, &s, &s, &id).unwrap();
            assert_eq!(rep.value, 0.0, "system {kind}");
        }
    }

    #[test]
    fn forced_correlation_point_vs_pair() {
        // M = 1 point, N = 2 points at distance 2: dis over the forced
        // correlation is 0.5 * |0 - 2| = 1.
        let m = bare("m", 1, 1.0);
        let n = bare("n", 2, 2.0);
        let sys = builtin(Builtin::Gh, &m.signature(), Truncation::default()).unwrap();
        let c = Correlation::full(&m, &n).unwrap();
        let rep = distortion(&sys, &m, &n, &c).unwrap();
        assert!((rep.value - 1.0).abs() < 1e-12);
        let w = rep.witness.unwrap();
        assert_eq!(w.generator, 0);
        // Lexicographically least assignment: (m0,n0) then (m0,n1).
        assert_eq!(w.assignment[0].right, "n0");
        assert_eq!(w.assignment[1].right, "n1");
    }

    #[test]
    fn iu_amplifies_u_gaps() {
        // Identity-shaped correlation with a U gap of 0.1 and n_max = 10
        // yields distortion >= 1.0 via the generator 10 U.
        let m = with_u(bare("m", 2, 1.0), vec![0.2, 0.6]);
        let n = with_u(bare("n", 2, 1.0), vec![0.3, 0.6]);
        let sys = builtin(
            Builtin::Iu,
            &m.signature(),
            Truncation { n_max: Some(10), ..Truncation::default() },
        )
        .unwrap();
        let mut c = Correlation::full(&m, &n).unwrap();
        c.relation[0].matrix = vec![vec![true, false], vec![false, true]];
        let rep = distortion(&sys, &m, &n, &c).unwrap();
        assert!(rep.value >= 1.0 - 1e-12, "got {}", rep.value);
    }

    #[test]
    fn atomic_completeness_examples() {
        // GH on a bare metric signature: complete (d is the only atomic).
        let s = bare("p", 3, 1.0);
        let gh = builtin(Builtin::Gh, &s.signature(), Truncation::default()).unwrap();
        assert!(check_atomic_completeness(&gh, &s).unwrap().complete);

        // GH on a structure that also has U, where two points differ only in
        // U: incomplete, with that pair as witness.
        let su = with_u(bare("p", 2, 1.0), vec![0.0, 1.0]);
        let gh2 = builtin(Builtin::Gh, &su.signature(), Truncation::default()).unwrap();
        let res = check_atomic_completeness(&gh2, &su).unwrap();
        assert!(!res.complete);
        let ce = res.counterexample.unwrap();
        assert!(ce.atomic.starts_with('U'));

        // fGHK is atomically complete on the same structure.
        let fghk = builtin(Builtin::Fghk, &su.signature(), Truncation::default()).unwrap();
        assert!(check_atomic_completeness(&fghk, &su).unwrap().complete);
    }

    #[test]
    fn functionality_examples() {
        // GH system, phi = 0.5 d, eps = 0.1, delta = 0.3 on a space of
        // diameter <= 1: holds (0.5 d < 0.1 implies d < 0.2 < 0.3).
        let s = bare("p", 3, 0.8);
        let sig = s.signature();
        let gh = builtin(Builtin::Gh, &sig, Truncation::default()).unwrap();
        let phi = gh.generators[0].clone();
        let rep = functionality_witness_check(&gh, &phi, 0.1, 0.3, &[&s]).unwrap();
        assert!(rep.holds);

        // Same phi with eps = 0.1, delta = 0.05 on a space with d = 0.15:
        // 0.075 < 0.1 but 0.15 >= 0.05.
        let bad = bare("p", 2, 0.15);
        let rep = functionality_witness_check(&gh, &phi, 0.1, 0.05, &[&bad]).unwrap();
        assert!(!rep.holds);
        assert!(matches!(
            rep.violation,
            Some(FunctionalityViolation::LooseWitness { .. })
        ));
    }

    #[test]
    fn kadets_vectors_have_unit_mass() {
        for level in 0..=3 {
            let vecs = kadets_vectors(level);
            assert!(!vecs.is_empty());
            for v in &vecs {
                let mass: f64 = v.iter().map(|x| x.abs()).sum();
                assert!((mass - 1.0).abs() < 1e-12);
                assert!(v[0] > 0.0);
            }
        }
        // level 0: only (1.0).
        assert_eq!(kadets_vectors(0), vec![vec![1.0]]);
    }

    #[test]
    fn system_spec_resolution() {
        let s = with_u(bare("p", 2, 1.0), vec![0.0, 1.0]);
        let sig = s.signature();
        let spec: SystemSpec = serde_json::from_str(
            r#"{ "name": "mine", "truncation": {}, "generators": ["(scale 0.5 (d S x0 x1))", "(pred U x0)"] }"#,
        )
        .unwrap();
        let sys = spec.resolve(&sig).unwrap();
        assert_eq!(sys.name, "mine");
        assert_eq!(sys.generators.len(), 2);

        let spec: SystemSpec =
            serde_json::from_str(r#"{ "name": "iu", "builtin": "iu", "truncation": {"n_max": 4} }"#)
                .unwrap();
        let sys = spec.resolve(&sig).unwrap();
        assert_eq!(sys.generators.len(), 5);
    }

    #[test]
    fn generators_deduplicate() {
        let f = half_d("S");
        let sys = DistortionSystem::new("gh", vec![f.clone(), f.clone()], Truncation::default());
        assert_eq!(sys.generators.len(), 1);
    }
}
