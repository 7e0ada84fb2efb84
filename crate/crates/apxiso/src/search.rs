//! Minimizing distortion over correlations: exact branch-and-bound search,
//! a seeded local-search upper bound, pointed (anchored) variants, and the
//! stratified distance for discrete structures.
//!
//! The exact search branches on cell inclusion per sort. A node is pruned
//! when its lower bound (distortion of the pairs already forced in, combined
//! with the best-case completion cost of uncovered rows and columns) reaches
//! the incumbent. The incumbent starts from the local-search heuristic. A
//! second pass reconstructs the witness that is lexicographically least
//! among optima, reading matrices row-major with included cells first.
//!
//! The search itself is single-threaded; the distortion evaluations it
//! delegates to may be partitioned across workers and reduce by exact
//! maxima, so results are identical across thread counts.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::distsys::{DisEngine, DistortionSystem, PairId, Truncation};
use crate::structure::{Anchor, Correlation, MetricStructure, SortRelation};
use crate::{Error, Result};

/// Knobs for the exact search and the heuristic it uses for its incumbent.
#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Maximum per-sort cell count (left points x right points) the exact
    /// search accepts without `force`.
    pub cell_cap: usize,
    pub force: bool,
    /// Distortion evaluations granted to the incumbent heuristic.
    pub heuristic_budget: u64,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { cell_cap: 36, force: false, heuristic_budget: 400, seed: 0 }
    }
}

/// Outcome of a correlation search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub value: f64,
    pub witness: Correlation,
    pub nodes_explored: u64,
    pub exact: bool,
    /// Copy of the system's truncation parameters.
    pub truncation: Truncation,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Dec {
    Undecided,
    In,
    Out,
}

struct Searcher<'a> {
    engine: DisEngine<'a>,
    /// (sort, row, col) per global pair id.
    cells: Vec<(usize, usize, usize)>,
    /// Branch order: pair ids sorted by descending standalone impact.
    order: Vec<PairId>,
    anchors: Vec<PairId>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    nodes: u64,
}

struct NodeState {
    decision: Vec<Dec>,
    in_pairs: Vec<Vec<PairId>>,
    row_in: Vec<Vec<usize>>,
    col_in: Vec<Vec<usize>>,
    /// Count of In + Undecided cells per row / column.
    row_avail: Vec<Vec<usize>>,
    col_avail: Vec<Vec<usize>>,
    lb_in: f64,
}

enum Mode {
    /// Minimize; carries the best value seen so far.
    Optimize { incumbent: f64 },
    /// Find any completion with distortion <= bound.
    Feasible { bound: f64 },
}

impl<'a> Searcher<'a> {
    fn new(
        sys: &DistortionSystem,
        left: &'a MetricStructure,
        right: &'a MetricStructure,
        anchors: &[Anchor],
        opts: &SearchOptions,
    ) -> Result<Searcher<'a>> {
        let engine = DisEngine::new(sys, left, right)?;
        for sort in &left.sorts {
            let rn = right.sort(&sort.name).expect("engine checked sorts").len();
            let cells = sort.len() * rn;
            if cells > opts.cell_cap && !opts.force {
                return Err(Error::SizeGuard(format!(
                    "sort {} has {} cells, cap is {}",
                    sort.name, cells, opts.cell_cap
                )));
            }
        }
        let total = engine.total_pairs;
        let mut cells = Vec::with_capacity(total);
        for p in 0..total {
            cells.push(engine.decompose(p));
        }
        let rows: Vec<usize> = left.sorts.iter().map(|s| s.len()).collect();
        let cols: Vec<usize> = left
            .sorts
            .iter()
            .map(|s| right.sort(&s.name).expect("engine checked sorts").len())
            .collect();

        let empty = vec![Vec::new(); left.sorts.len()];
        let mut impact: Vec<(f64, PairId)> =
            (0..total).map(|p| (engine.incremental_cost(p, &empty), p)).collect();
        impact.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let order = impact.into_iter().map(|(_, p)| p).collect();

        let mut anchor_ids = Vec::with_capacity(anchors.len());
        for a in anchors {
            let si = left.sort_index(&a.sort).ok_or_else(|| {
                Error::input(format!("anchor references unknown sort {}", a.sort))
            })?;
            let i = left.sorts[si].point_index(&a.left).ok_or_else(|| {
                Error::input(format!("anchor point {} missing in left {}", a.left, a.sort))
            })?;
            let j = right
                .sort(&a.sort)
                .expect("engine checked sorts")
                .point_index(&a.right)
                .ok_or_else(|| {
                    Error::input(format!("anchor point {} missing in right {}", a.right, a.sort))
                })?;
            anchor_ids.push(engine.pair_id(si, i, j));
        }
        anchor_ids.sort_unstable();
        anchor_ids.dedup();

        Ok(Searcher { engine, cells, order, anchors: anchor_ids, rows, cols, nodes: 0 })
    }

    fn fresh_state(&self) -> NodeState {
        let n_sorts = self.rows.len();
        let mut state = NodeState {
            decision: vec![Dec::Undecided; self.cells.len()],
            in_pairs: vec![Vec::new(); n_sorts],
            row_in: self.rows.iter().map(|&n| vec![0; n]).collect(),
            col_in: self.cols.iter().map(|&n| vec![0; n]).collect(),
            row_avail: (0..n_sorts).map(|s| vec![self.cols[s]; self.rows[s]]).collect(),
            col_avail: (0..n_sorts).map(|s| vec![self.rows[s]; self.cols[s]]).collect(),
            lb_in: 0.0,
        };
        for &a in &self.anchors {
            self.set_in(&mut state, a);
        }
        state
    }

    fn set_in(&self, state: &mut NodeState, pair: PairId) -> f64 {
        let (s, i, j) = self.cells[pair];
        let prev_lb = state.lb_in;
        let cost = self.engine.incremental_cost(pair, &state.in_pairs);
        state.lb_in = state.lb_in.max(cost);
        state.decision[pair] = Dec::In;
        state.in_pairs[s].push(pair);
        state.row_in[s][i] += 1;
        state.col_in[s][j] += 1;
        prev_lb
    }

    fn unset_in(&self, state: &mut NodeState, pair: PairId, prev_lb: f64) {
        let (s, i, j) = self.cells[pair];
        state.decision[pair] = Dec::Undecided;
        state.in_pairs[s].pop();
        state.row_in[s][i] -= 1;
        state.col_in[s][j] -= 1;
        state.lb_in = prev_lb;
    }

    /// Best-case completion cost: every row and column without an included
    /// cell must eventually include one of its undecided candidates, so its
    /// cheapest candidate lower-bounds any completion. Infinite when some
    /// row or column can no longer be covered.
    fn completion_bound(&self, state: &NodeState) -> f64 {
        let mut bound = 0.0f64;
        for s in 0..self.rows.len() {
            for i in 0..self.rows[s] {
                if state.row_in[s][i] > 0 {
                    continue;
                }
                let mut cheapest = f64::INFINITY;
                for j in 0..self.cols[s] {
                    let p = self.engine.pair_id(s, i, j);
                    if state.decision[p] == Dec::Undecided {
                        cheapest =
                            cheapest.min(self.engine.incremental_cost(p, &state.in_pairs));
                    }
                }
                bound = bound.max(cheapest);
            }
            for j in 0..self.cols[s] {
                if state.col_in[s][j] > 0 {
                    continue;
                }
                let mut cheapest = f64::INFINITY;
                for i in 0..self.rows[s] {
                    let p = self.engine.pair_id(s, i, j);
                    if state.decision[p] == Dec::Undecided {
                        cheapest =
                            cheapest.min(self.engine.incremental_cost(p, &state.in_pairs));
                    }
                }
                bound = bound.max(cheapest);
            }
        }
        bound
    }

    fn prune(&self, mode: &Mode, lb: f64) -> bool {
        match mode {
            Mode::Optimize { incumbent } => lb >= *incumbent,
            Mode::Feasible { bound } => lb > *bound,
        }
    }

    /// Depth-first search over the branch order starting at `depth`. In
    /// Optimize mode the best value flows through the mode's incumbent; in
    /// Feasible mode the search stops at the first completion within bound.
    fn dfs(&mut self, state: &mut NodeState, depth: usize, mode: &mut Mode) -> Option<f64> {
        self.nodes += 1;
        let lb = state.lb_in.max(self.completion_bound(state));
        if self.prune(mode, lb) {
            return None;
        }
        let mut at = depth;
        while at < self.order.len() && state.decision[self.order[at]] != Dec::Undecided {
            at += 1;
        }
        if at == self.order.len() {
            let value = state.lb_in;
            if let Mode::Optimize { incumbent } = mode {
                if value < *incumbent {
                    *incumbent = value;
                }
            }
            return Some(value);
        }
        let cell = self.order[at];
        let (s, i, j) = self.cells[cell];
        let mut best: Option<f64> = None;

        // Include the cell.
        let prev_lb = self.set_in(state, cell);
        if let Some(v) = self.dfs(state, at + 1, mode) {
            best = Some(v);
            if matches!(mode, Mode::Feasible { .. }) {
                self.unset_in(state, cell, prev_lb);
                return best;
            }
        }
        self.unset_in(state, cell, prev_lb);

        // Exclude the cell, unless that starves its row or column.
        let row_ok = state.row_in[s][i] > 0 || state.row_avail[s][i] > 1;
        let col_ok = state.col_in[s][j] > 0 || state.col_avail[s][j] > 1;
        if row_ok && col_ok {
            state.decision[cell] = Dec::Out;
            state.row_avail[s][i] -= 1;
            state.col_avail[s][j] -= 1;
            if let Some(v) = self.dfs(state, at + 1, mode) {
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
            state.decision[cell] = Dec::Undecided;
            state.row_avail[s][i] += 1;
            state.col_avail[s][j] += 1;
        }
        best
    }

    /// True when the given decisions extend to a correlation with
    /// distortion <= bound.
    fn feasible(&mut self, base: &[Dec], bound: f64) -> bool {
        let mut state = self.fresh_state();
        for (p, d) in base.iter().enumerate() {
            match d {
                Dec::In if state.decision[p] != Dec::In => {
                    self.set_in(&mut state, p);
                }
                Dec::Out => {
                    if state.decision[p] == Dec::In {
                        return false;
                    }
                    let (s, i, j) = self.cells[p];
                    state.decision[p] = Dec::Out;
                    state.row_avail[s][i] -= 1;
                    state.col_avail[s][j] -= 1;
                }
                _ => {}
            }
        }
        if state.lb_in > bound {
            return false;
        }
        let mut mode = Mode::Feasible { bound };
        self.dfs(&mut state, 0, &mut mode).is_some()
    }

    /// Lexicographically least optimal matrix: scan cells in (sort, row,
    /// col) order preferring inclusion, keeping the prefix extendable to a
    /// correlation of distortion <= the optimal value.
    fn lex_least_witness(&mut self, value: f64) -> Vec<Dec> {
        let mut decisions = vec![Dec::Undecided; self.cells.len()];
        for &a in &self.anchors {
            decisions[a] = Dec::In;
        }
        for p in 0..self.cells.len() {
            if decisions[p] != Dec::Undecided {
                continue;
            }
            decisions[p] = Dec::In;
            if !self.feasible(&decisions, value) {
                decisions[p] = Dec::Out;
            }
        }
        decisions
    }

    fn matrix_from(&self, decisions: &[Dec]) -> Vec<Vec<Vec<bool>>> {
        let mut out: Vec<Vec<Vec<bool>>> = (0..self.rows.len())
            .map(|s| vec![vec![false; self.cols[s]]; self.rows[s]])
            .collect();
        for (p, d) in decisions.iter().enumerate() {
            if *d == Dec::In {
                let (s, i, j) = self.cells[p];
                out[s][i][j] = true;
            }
        }
        out
    }
}

fn correlation_from_matrices(
    left: &MetricStructure,
    matrices: Vec<Vec<Vec<bool>>>,
    anchors: &[Anchor],
) -> Correlation {
    Correlation {
        left: "left".into(),
        right: "right".into(),
        relation: left
            .sorts
            .iter()
            .zip(matrices)
            .map(|(s, matrix)| SortRelation { sort: s.name.clone(), matrix })
            .collect(),
        anchors: anchors.to_vec(),
    }
}

/// Exact minimum of distortion over all correlations containing the anchors.
///
/// Refuses oversized instances unless `opts.force` is set. The witness is
/// the lexicographically least optimal matrix and achieves the reported
/// value exactly.
pub fn rho_exact(
    sys: &DistortionSystem,
    left: &MetricStructure,
    right: &MetricStructure,
    anchors: &[Anchor],
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let mut searcher = Searcher::new(sys, left, right, anchors, opts)?;

    let (heur_value, _, heur_evals) =
        heuristic_search(&searcher, opts.heuristic_budget, opts.seed);

    let mut state = searcher.fresh_state();
    let mut mode = Mode::Optimize { incumbent: heur_value };
    searcher.dfs(&mut state, 0, &mut mode);
    let value = match mode {
        Mode::Optimize { incumbent } => incumbent,
        Mode::Feasible { .. } => unreachable!(),
    };

    let decisions = searcher.lex_least_witness(value);
    let witness = correlation_from_matrices(left, searcher.matrix_from(&decisions), anchors);
    debug_assert_eq!(witness.is_correlation(left, right).unwrap(), None);
    Ok(SearchResult {
        value,
        witness,
        nodes_explored: searcher.nodes + heur_evals,
        exact: true,
        truncation: sys.truncation.clone(),
    })
}

/// Local search over correlations: coverage-preserving bit flips from a few
/// deterministic starts plus seeded random restarts. The value is an upper
/// bound on [`rho_exact`] and is reproducible for a given seed.
pub fn rho_heuristic(
    sys: &DistortionSystem,
    left: &MetricStructure,
    right: &MetricStructure,
    budget: u64,
    seed: u64,
) -> Result<SearchResult> {
    let opts = SearchOptions { force: true, ..SearchOptions::default() };
    let searcher = Searcher::new(sys, left, right, &[], &opts)?;
    let (value, bits, evals) = heuristic_search(&searcher, budget, seed);
    let decisions: Vec<Dec> =
        bits.iter().map(|&b| if b { Dec::In } else { Dec::Out }).collect();
    let witness = correlation_from_matrices(left, searcher.matrix_from(&decisions), &[]);
    Ok(SearchResult {
        value,
        witness,
        nodes_explored: evals,
        exact: false,
        truncation: sys.truncation.clone(),
    })
}

/// Runs the heuristic inside an existing searcher, respecting its anchors.
/// Returns (value, bits, distortion evaluations used).
fn heuristic_search(searcher: &Searcher<'_>, budget: u64, seed: u64) -> (f64, Vec<bool>, u64) {
    let total = searcher.cells.len();
    let n_sorts = searcher.rows.len();
    let mut evals = 0u64;

    let dis_of = |bits: &[bool], evals: &mut u64| -> f64 {
        *evals += 1;
        let mut pairs = vec![Vec::new(); n_sorts];
        for (p, &b) in bits.iter().enumerate() {
            if b {
                pairs[searcher.cells[p].0].push(p);
            }
        }
        searcher.engine.distortion(&pairs).0
    };

    let empty = vec![Vec::new(); n_sorts];
    let cheapest_in = |candidates: &mut dyn Iterator<Item = PairId>| -> PairId {
        candidates
            .min_by(|&a, &b| {
                let ca = searcher.engine.incremental_cost(a, &empty);
                let cb = searcher.engine.incremental_cost(b, &empty);
                ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
            })
            .expect("nonempty sorts")
    };

    // Make a bit vector total and surjective, preferring cheap cells.
    let repair = |bits: &mut Vec<bool>| {
        for &a in &searcher.anchors {
            bits[a] = true;
        }
        for s in 0..n_sorts {
            for i in 0..searcher.rows[s] {
                if (0..searcher.cols[s]).all(|j| !bits[searcher.engine.pair_id(s, i, j)]) {
                    let pick = cheapest_in(
                        &mut (0..searcher.cols[s]).map(|j| searcher.engine.pair_id(s, i, j)),
                    );
                    bits[pick] = true;
                }
            }
            for j in 0..searcher.cols[s] {
                if (0..searcher.rows[s]).all(|i| !bits[searcher.engine.pair_id(s, i, j)]) {
                    let pick = cheapest_in(
                        &mut (0..searcher.rows[s]).map(|i| searcher.engine.pair_id(s, i, j)),
                    );
                    bits[pick] = true;
                }
            }
        }
    };

    let mut starts: Vec<Vec<bool>> = Vec::new();
    if (0..n_sorts).all(|s| searcher.rows[s] == searcher.cols[s]) {
        let mut bits = vec![false; total];
        for s in 0..n_sorts {
            for i in 0..searcher.rows[s] {
                bits[searcher.engine.pair_id(s, i, i)] = true;
            }
        }
        starts.push(bits);
    }
    starts.push(vec![false; total]); // greedy repair from scratch
    starts.push(vec![true; total]);
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..3 {
        let mut bits = vec![false; total];
        for b in bits.iter_mut() {
            *b = rng.gen_bool(0.35);
        }
        starts.push(bits);
    }

    let mut best_value = f64::INFINITY;
    let mut best_bits = vec![false; total];
    for mut bits in starts {
        repair(&mut bits);
        let mut current = dis_of(&bits, &mut evals);
        'climb: loop {
            if evals >= budget {
                break;
            }
            for p in 0..total {
                if evals >= budget {
                    break 'climb;
                }
                if bits[p] {
                    if searcher.anchors.contains(&p) {
                        continue;
                    }
                    let (s, i, j) = searcher.cells[p];
                    let row_keeps = (0..searcher.cols[s])
                        .any(|jj| jj != j && bits[searcher.engine.pair_id(s, i, jj)]);
                    let col_keeps = (0..searcher.rows[s])
                        .any(|ii| ii != i && bits[searcher.engine.pair_id(s, ii, j)]);
                    if !row_keeps || !col_keeps {
                        continue;
                    }
                }
                bits[p] = !bits[p];
                let candidate = dis_of(&bits, &mut evals);
                if candidate < current {
                    current = candidate;
                    continue 'climb;
                }
                bits[p] = !bits[p];
            }
            break;
        }
        if current < best_value {
            best_value = current;
            best_bits = bits;
        }
    }
    (best_value, best_bits, evals)
}

/// Anchored distance between pointed structures: [`rho_exact`] restricted to
/// correlations relating the given tuples componentwise. This upper-bounds
/// the type distance, whose infimum also ranges over other models.
pub fn rho_pointed(
    sys: &DistortionSystem,
    left: &MetricStructure,
    left_tuple: &[(String, String)],
    right: &MetricStructure,
    right_tuple: &[(String, String)],
    opts: &SearchOptions,
) -> Result<SearchResult> {
    if left_tuple.len() != right_tuple.len() {
        return Err(Error::input("pointed tuples must have equal length"));
    }
    let mut anchors = Vec::with_capacity(left_tuple.len());
    for ((ls, lp), (rs, rp)) in left_tuple.iter().zip(right_tuple) {
        if ls != rs {
            return Err(Error::input(format!(
                "tuple components disagree on sorts: {ls} vs {rs}"
            )));
        }
        anchors.push(Anchor { sort: ls.clone(), left: lp.clone(), right: rp.clone() });
    }
    rho_exact(sys, left, right, &anchors, opts)
}

// ---------------------------------------------------------------------------
// Stratified distance for discrete structures
// ---------------------------------------------------------------------------

/// One stratum of a stratified language: the sorts and predicate names of
/// the sub-language.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedLevel {
    pub sorts: Vec<String>,
    pub predicates: Vec<String>,
}

fn check_discrete(s: &MetricStructure) -> Result<()> {
    for sort in &s.sorts {
        for (i, row) in sort.metric.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                let want = if i == j { 0.0 } else { 1.0 };
                if (d - want).abs() > crate::TOL {
                    return Err(Error::input(format!(
                        "sort {} is not discrete: d({i},{j}) = {d}",
                        sort.name
                    )));
                }
            }
        }
    }
    for pred in &s.predicates {
        for &v in &pred.values.data {
            if v.abs() > crate::TOL && (v - 1.0).abs() > crate::TOL {
                return Err(Error::input(format!(
                    "predicate {} is not {{0,1}}-valued: found {v}",
                    pred.name
                )));
            }
        }
    }
    Ok(())
}

fn reduct(s: &MetricStructure, level: &StratifiedLevel) -> MetricStructure {
    MetricStructure {
        sorts: s.sorts.iter().filter(|x| level.sorts.contains(&x.name)).cloned().collect(),
        predicates: s
            .predicates
            .iter()
            .filter(|p| level.predicates.contains(&p.name))
            .cloned()
            .collect(),
        constants: Default::default(),
    }
}

/// Exact isomorphism test for discrete structures by exhaustive search over
/// per-sort bijections.
pub fn discrete_isomorphic(a: &MetricStructure, b: &MetricStructure) -> Result<bool> {
    if a.sorts.len() != b.sorts.len() || a.predicates.len() != b.predicates.len() {
        return Ok(false);
    }
    for sort in &a.sorts {
        match b.sort(&sort.name) {
            Some(other) if other.len() == sort.len() => {}
            _ => return Ok(false),
        }
    }
    for pred in &a.predicates {
        match b.predicate(&pred.name) {
            Some(other) if other.arg_sorts == pred.arg_sorts => {}
            _ => return Ok(false),
        }
    }
    let perms_per_sort: Vec<Vec<Vec<usize>>> =
        a.sorts.iter().map(|s| permutations(s.len())).collect();
    let mut choice = vec![0usize; a.sorts.len()];
    loop {
        let maps: Vec<&Vec<usize>> =
            choice.iter().zip(&perms_per_sort).map(|(c, ps)| &ps[*c]).collect();
        if predicates_match(a, b, &maps) {
            return Ok(true);
        }
        let mut done = true;
        for pos in (0..choice.len()).rev() {
            choice[pos] += 1;
            if choice[pos] < perms_per_sort[pos].len() {
                done = false;
                break;
            }
            choice[pos] = 0;
        }
        if done {
            return Ok(false);
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    permute(&mut items, 0, &mut out);
    out
}

fn permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, out);
        items.swap(k, i);
    }
}

fn predicates_match(a: &MetricStructure, b: &MetricStructure, maps: &[&Vec<usize>]) -> bool {
    for pred in &a.predicates {
        let other = b.predicate(&pred.name).expect("checked by caller");
        let sort_ids: Vec<usize> = pred
            .arg_sorts
            .iter()
            .map(|s| a.sort_index(s).expect("validated structure"))
            .collect();
        let dims = &pred.values.dims;
        let mut idx = vec![0usize; pred.arity];
        loop {
            let mapped: Vec<usize> =
                idx.iter().zip(&sort_ids).map(|(&i, &s)| maps[s][i]).collect();
            if (pred.values.get(&idx) - other.values.get(&mapped)).abs() > crate::TOL {
                return false;
            }
            if !crate::structure::next_index(&mut idx, dims) {
                break;
            }
        }
    }
    true
}

/// The stratified distance: `2^{-i}` where `i` is the largest level at
/// which the reducts are isomorphic, so the first non-isomorphic level `j`
/// yields `2^{1-j}` (disagreement already at level 0 yields 2). Returns 0
/// when the structures are isomorphic at every level.
pub fn rho_stratified(
    levels: &[StratifiedLevel],
    left: &MetricStructure,
    right: &MetricStructure,
) -> Result<f64> {
    check_discrete(left)?;
    check_discrete(right)?;
    for pair in levels.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        if !lo.sorts.iter().all(|s| hi.sorts.contains(s))
            || !lo.predicates.iter().all(|p| hi.predicates.contains(p))
        {
            return Err(Error::input("stratified levels must be nested"));
        }
    }
    for (j, level) in levels.iter().enumerate() {
        let la = reduct(left, level);
        let lb = reduct(right, level);
        if !discrete_isomorphic(&la, &lb)? {
            return Ok(2f64.powi(1 - j as i32));
        }
    }
    Ok(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distsys::{builtin, distortion, Builtin};
    use crate::structure::{Predicate, Sort, Table};
    use std::collections::BTreeMap;

    fn metric_space(name: &str, metric: Vec<Vec<f64>>) -> MetricStructure {
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

    fn two_point(name: &str, d: f64) -> MetricStructure {
        metric_space(name, vec![vec![0.0, d], vec![d, 0.0]])
    }

    fn line_space(name: &str, n: usize) -> MetricStructure {
        let metric = (0..n)
            .map(|i| (0..n).map(|j| 0.3 * ((i as f64) - (j as f64)).abs()).collect())
            .collect();
        metric_space(name, metric)
    }

    fn gh(sig: &crate::formula::Signature) -> DistortionSystem {
        builtin(Builtin::Gh, sig, Truncation::default()).unwrap()
    }

    #[test]
    fn rho_of_structure_with_itself_is_zero_with_identity_witness() {
        let m = line_space("p", 3);
        let sys = gh(&m.signature());
        let res = rho_exact(&sys, &m, &m, &[], &SearchOptions::default()).unwrap();
        assert_eq!(res.value, 0.0);
        let id = Correlation::identity(&m, "left");
        assert_eq!(res.witness.relation, id.relation);
    }

    #[test]
    fn rho_two_point_spaces_matches_half_gap() {
        let m = two_point("m", 1.0);
        let n = two_point("n", 3.0);
        let sys = gh(&m.signature());
        let res = rho_exact(&sys, &m, &n, &[], &SearchOptions::default()).unwrap();
        assert!((res.value - 1.0).abs() < 1e-12);
        let rep = distortion(&sys, &m, &n, &res.witness).unwrap();
        assert_eq!(rep.value, res.value);
    }

    #[test]
    fn rho_point_vs_space_is_half_diameter() {
        let m = metric_space("m", vec![vec![0.0]]);
        let n = two_point("n", 2.0);
        let sys = gh(&m.signature());
        let res = rho_exact(&sys, &m, &n, &[], &SearchOptions::default()).unwrap();
        assert!((res.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heuristic_upper_bounds_exact() {
        let m = metric_space(
            "m",
            vec![
                vec![0.0, 0.5, 1.1, 0.7],
                vec![0.5, 0.0, 0.8, 0.4],
                vec![1.1, 0.8, 0.0, 0.6],
                vec![0.7, 0.4, 0.6, 0.0],
            ],
        );
        let n = metric_space(
            "n",
            vec![
                vec![0.0, 0.6, 1.0, 0.9],
                vec![0.6, 0.0, 0.7, 0.5],
                vec![1.0, 0.7, 0.0, 0.8],
                vec![0.9, 0.5, 0.8, 0.0],
            ],
        );
        let sys = gh(&m.signature());
        let exact = rho_exact(&sys, &m, &n, &[], &SearchOptions::default()).unwrap();
        let heur = rho_heuristic(&sys, &m, &n, 500, 7).unwrap();
        assert!(heur.value >= exact.value - 1e-12);
        assert_eq!(heur.witness.is_correlation(&m, &n).unwrap(), None);
        let rep = distortion(&sys, &m, &n, &heur.witness).unwrap();
        assert_eq!(rep.value, heur.value);
        let same = rho_heuristic(&sys, &m, &m, 500, 7).unwrap();
        assert_eq!(same.value, 0.0);
    }

    #[test]
    fn heuristic_is_deterministic_per_seed() {
        let m = line_space("m", 4);
        let n = two_point("n", 1.4);
        let sys = gh(&m.signature());
        let a = rho_heuristic(&sys, &m, &n, 300, 42).unwrap();
        let b = rho_heuristic(&sys, &m, &n, 300, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pointed_anchor_forces_bad_pairing() {
        let m = two_point("m", 1.0);
        let n = two_point("n", 3.0);
        let sys = gh(&m.signature());
        // Anchoring both left points onto the single right point n0 forces
        // every completion to pay 0.5 * |0 - 3| = 1.5.
        let res = rho_pointed(
            &sys,
            &m,
            &[("S".into(), "m0".into()), ("S".into(), "m1".into())],
            &n,
            &[("S".into(), "n0".into()), ("S".into(), "n0".into())],
            &SearchOptions::default(),
        )
        .unwrap();
        assert!((res.value - 1.5).abs() < 1e-12, "got {}", res.value);

        let zero = rho_pointed(
            &sys,
            &m,
            &[("S".into(), "m0".into())],
            &m,
            &[("S".into(), "m0".into())],
            &SearchOptions::default(),
        )
        .unwrap();
        assert_eq!(zero.value, 0.0);

        assert!(rho_pointed(
            &sys,
            &m,
            &[("S".into(), "m0".into())],
            &n,
            &[("T".into(), "n0".into())],
            &SearchOptions::default(),
        )
        .is_err());
    }

    #[test]
    fn anchoring_never_decreases_rho() {
        let m = two_point("m", 1.0);
        let n = two_point("n", 3.0);
        let sys = gh(&m.signature());
        let free = rho_exact(&sys, &m, &n, &[], &SearchOptions::default()).unwrap();
        let anchored = rho_exact(
            &sys,
            &m,
            &n,
            &[Anchor { sort: "S".into(), left: "m0".into(), right: "n0".into() }],
            &SearchOptions::default(),
        )
        .unwrap();
        assert!(anchored.value >= free.value - 1e-12);
    }

    #[test]
    fn size_guard_refuses_large_instances() {
        let m = line_space("m", 7);
        let sys = gh(&m.signature());
        assert!(matches!(
            rho_exact(&sys, &m, &m, &[], &SearchOptions::default()),
            Err(Error::SizeGuard(_))
        ));
        let forced = SearchOptions { force: true, heuristic_budget: 60, ..Default::default() };
        assert_eq!(rho_exact(&sys, &m, &m, &[], &forced).unwrap().value, 0.0);
    }

    fn discrete(name: &str, n: usize, pred: Option<Vec<f64>>) -> MetricStructure {
        let metric = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let mut s = MetricStructure {
            sorts: vec![Sort {
                name: "S".into(),
                points: (0..n).map(|i| format!("{name}{i}")).collect(),
                metric,
                diameter_bound: 1.0,
            }],
            predicates: vec![],
            constants: BTreeMap::new(),
        };
        if let Some(values) = pred {
            let n = values.len();
            s.predicates.push(Predicate {
                name: "P".into(),
                arity: 1,
                arg_sorts: vec!["S".into()],
                values: Table::new(vec![n], values).unwrap(),
                range: (0.0, 1.0),
                lipschitz: vec![1.0],
            });
        }
        s
    }

    #[test]
    fn stratified_examples() {
        let levels = vec![
            StratifiedLevel { sorts: vec!["S".into()], predicates: vec![] },
            StratifiedLevel { sorts: vec!["S".into()], predicates: vec!["P".into()] },
        ];
        let a = discrete("a", 3, Some(vec![0.0, 1.0, 1.0]));
        assert_eq!(rho_stratified(&levels, &a, &a).unwrap(), 0.0);
        // Same size (level 0 isomorphic) but P differs in multiplicity:
        // largest isomorphic level is 0, distance 2^0 = 1.
        let b = discrete("b", 3, Some(vec![0.0, 0.0, 1.0]));
        assert_eq!(rho_stratified(&levels, &a, &b).unwrap(), 1.0);
        // Permuted P values are isomorphic at both levels.
        let c = discrete("c", 3, Some(vec![1.0, 0.0, 1.0]));
        assert_eq!(rho_stratified(&levels, &a, &c).unwrap(), 0.0);
        let p1 = discrete("p", 4, None);
        let p2 = discrete("q", 4, None);
        let pure = vec![StratifiedLevel { sorts: vec!["S".into()], predicates: vec![] }];
        assert_eq!(rho_stratified(&pure, &p1, &p2).unwrap(), 0.0);
        let p3 = discrete("r", 3, None);
        assert_eq!(rho_stratified(&pure, &p1, &p3).unwrap(), 2.0);
        let non = two_point("m", 0.5);
        assert!(rho_stratified(&pure, &non, &non).is_err());
    }

    #[test]
    fn exact_matches_exhaustive_enumeration_on_small_instances() {
        // Independent oracle: enumerate all total surjective 0/1 matrices.
        fn oracle(
            sys: &DistortionSystem,
            m: &MetricStructure,
            n: &MetricStructure,
        ) -> f64 {
            let rows = m.sorts[0].len();
            let cols = n.sorts[0].len();
            let cells = rows * cols;
            let mut best = f64::INFINITY;
            for mask in 1u32..(1 << cells) {
                let matrix: Vec<Vec<bool>> = (0..rows)
                    .map(|i| (0..cols).map(|j| mask >> (i * cols + j) & 1 == 1).collect())
                    .collect();
                let total = matrix.iter().all(|r| r.iter().any(|&b| b));
                let surj = (0..cols).any(|_| true)
                    && (0..cols).all(|j| matrix.iter().any(|r| r[j]));
                if !total || !surj {
                    continue;
                }
                let corr = Correlation {
                    left: "m".into(),
                    right: "n".into(),
                    relation: vec![SortRelation { sort: "S".into(), matrix }],
                    anchors: vec![],
                };
                let d = distortion(sys, m, n, &corr).unwrap().value;
                best = best.min(d);
            }
            best
        }
        let m = metric_space(
            "m",
            vec![vec![0.0, 0.5, 1.1], vec![0.5, 0.0, 0.8], vec![1.1, 0.8, 0.0]],
        );
        let n = metric_space(
            "n",
            vec![vec![0.0, 0.6, 1.0], vec![0.6, 0.0, 0.7], vec![1.0, 0.7, 0.0]],
        );
        let sys = gh(&m.signature());
        let res = rho_exact(&sys, &m, &n, &[], &SearchOptions::default()).unwrap();
        assert_eq!(res.value, oracle(&sys, &m, &n));
    }
}
