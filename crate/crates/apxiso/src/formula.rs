//! The continuous-logic formula DSL: parsing, evaluation, and static
//! Lipschitz-modulus inference.
//!
//! Formulas are s-expressions over atomic distance/predicate applications, a
//! fixed catalog of connectives, and `sup`/`inf` quantifiers:
//!
//! ```text
//! FORMULA := (const R) | (d SORT VAR VAR) | (pred NAME VAR...)
//!          | (neg F) | (scale R F) | (add F F)
//!          | (max F F) | (min F F) | (absdiff F F)
//!          | (clamp F R R) | (cliplog F R R)
//!          | (sup VAR:SORT F) | (inf VAR:SORT F)
//! ```
//!
//! Variables are `x0, x1, ...`. `(clamp (log F) a b)` is accepted as surface
//! syntax for `(cliplog F a b)`: the clamped logarithm is a single total
//! primitive whose value at arguments `<= 0` is the lower clamp.
//!
//! Formulas are immutable and evaluation is pure; `sup`/`inf` on finite
//! structures are exact maxima/minima over the quantified sort's points.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::structure::MetricStructure;
use crate::{Error, Result};

pub type VarIdx = u32;

/// Formula AST. Connectives are restricted to a fixed catalog so that
/// modulus inference stays decidable.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Const(f64),
    /// `d(sort, x_i, x_j)`.
    Dist { sort: String, left: VarIdx, right: VarIdx },
    Pred { name: String, args: Vec<VarIdx> },
    Neg(Box<Formula>),
    Scale(f64, Box<Formula>),
    Add(Box<Formula>, Box<Formula>),
    Max(Box<Formula>, Box<Formula>),
    Min(Box<Formula>, Box<Formula>),
    AbsDiff(Box<Formula>, Box<Formula>),
    /// `[f]_a^b`.
    Clamp(Box<Formula>, f64, f64),
    /// `[log f]_a^b`, total: arguments `<= 0` evaluate to the lower clamp.
    ClipLog(Box<Formula>, f64, f64),
    Sup { var: VarIdx, sort: String, body: Box<Formula> },
    Inf { var: VarIdx, sort: String, body: Box<Formula> },
}

/// The clamped-log primitive shared by the evaluator and table builders.
pub fn cliplog(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= 0.0 {
        lo
    } else {
        x.ln().clamp(lo, hi)
    }
}

/// Sort facts needed to analyze formulas without a concrete structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortSig {
    pub name: String,
    pub diameter_bound: f64,
}

/// Predicate facts needed for parsing and modulus inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredSig {
    pub name: String,
    pub arity: usize,
    pub arg_sorts: Vec<String>,
    pub range: (f64, f64),
    pub lipschitz: Vec<f64>,
}

/// A signature: the sorts and predicates formulas may mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub sorts: Vec<SortSig>,
    pub predicates: Vec<PredSig>,
}

impl Signature {
    pub fn sort(&self, name: &str) -> Option<&SortSig> {
        self.sorts.iter().find(|s| s.name == name)
    }

    pub fn predicate(&self, name: &str) -> Option<&PredSig> {
        self.predicates.iter().find(|p| p.name == name)
    }
}

impl MetricStructure {
    pub fn signature(&self) -> Signature {
        Signature {
            sorts: self
                .sorts
                .iter()
                .map(|s| SortSig { name: s.name.clone(), diameter_bound: s.diameter_bound })
                .collect(),
            predicates: self
                .predicates
                .iter()
                .map(|p| PredSig {
                    name: p.name.clone(),
                    arity: p.arity,
                    arg_sorts: p.arg_sorts.clone(),
                    range: p.range,
                    lipschitz: p.lipschitz.clone(),
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open(usize),
    Close(usize),
    Atom(usize, String),
}

impl Token {
    fn position(&self) -> usize {
        match self {
            Token::Open(p) | Token::Close(p) => *p,
            Token::Atom(p, _) => *p,
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Token::Open(i));
                i += 1;
            }
            b')' => {
                out.push(Token::Close(i));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                out.push(Token::Atom(start, text[start..i].to_string()));
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    sig: &'a Signature,
    /// Sorts of free variables seen so far, checked for consistency.
    free: BTreeMap<VarIdx, String>,
    /// Stack of quantifier bindings (shadowing allowed).
    bound: Vec<(VarIdx, String)>,
}

fn err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse { position, message: message.into() }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token> {
        let t = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| err(self.pos, "unexpected end of input"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect_open(&mut self) -> Result<usize> {
        match self.next()? {
            Token::Open(p) => Ok(p),
            t => Err(err(t.position(), "expected '('")),
        }
    }

    fn expect_close(&mut self) -> Result<()> {
        match self.next()? {
            Token::Close(_) => Ok(()),
            t => Err(err(t.position(), "expected ')'")),
        }
    }

    fn atom(&mut self) -> Result<(usize, String)> {
        match self.next()? {
            Token::Atom(p, s) => Ok((p, s)),
            t => Err(err(t.position(), "expected an atom")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let (p, s) = self.atom()?;
        let v: f64 = s.parse().map_err(|_| err(p, format!("expected a number, got '{s}'")))?;
        if !v.is_finite() {
            return Err(err(p, "numbers must be finite"));
        }
        Ok(v)
    }

    fn var(&mut self) -> Result<VarIdx> {
        let (p, s) = self.atom()?;
        parse_var_name(&s).ok_or_else(|| err(p, format!("expected a variable x<N>, got '{s}'")))
    }

    /// Records a variable use at the given sort, enforcing consistency.
    fn use_var(&mut self, position: usize, var: VarIdx, sort: &str) -> Result<()> {
        if let Some((_, bound_sort)) = self.bound.iter().rev().find(|(v, _)| *v == var) {
            if bound_sort != sort {
                return Err(err(
                    position,
                    format!("variable x{var} is bound at sort {bound_sort}, used at {sort}"),
                ));
            }
            return Ok(());
        }
        match self.free.get(&var) {
            Some(existing) if existing != sort => Err(err(
                position,
                format!("variable x{var} used at sorts {existing} and {sort}"),
            )),
            Some(_) => Ok(()),
            None => {
                self.free.insert(var, sort.to_string());
                Ok(())
            }
        }
    }

    fn formula(&mut self) -> Result<Formula> {
        let open = self.expect_open()?;
        let (hp, head) = self.atom()?;
        let f = match head.as_str() {
            "const" => Formula::Const(self.number()?),
            "d" => {
                let (sp, sort) = self.atom()?;
                if self.sig.sort(&sort).is_none() {
                    return Err(err(sp, format!("unknown sort {sort}")));
                }
                let lv = self.var()?;
                let rv = self.var()?;
                self.use_var(sp, lv, &sort)?;
                self.use_var(sp, rv, &sort)?;
                Formula::Dist { sort, left: lv, right: rv }
            }
            "pred" => {
                let (np, name) = self.atom()?;
                let pred = self
                    .sig
                    .predicate(&name)
                    .ok_or_else(|| err(np, format!("unknown predicate {name}")))?
                    .clone();
                let mut args = Vec::with_capacity(pred.arity);
                for k in 0..pred.arity {
                    let v = self.var()?;
                    self.use_var(np, v, &pred.arg_sorts[k])?;
                    args.push(v);
                }
                Formula::Pred { name, args }
            }
            "neg" => Formula::Neg(Box::new(self.formula()?)),
            "scale" => {
                let c = self.number()?;
                Formula::Scale(c, Box::new(self.formula()?))
            }
            "add" => Formula::Add(Box::new(self.formula()?), Box::new(self.formula()?)),
            "max" => Formula::Max(Box::new(self.formula()?), Box::new(self.formula()?)),
            "min" => Formula::Min(Box::new(self.formula()?), Box::new(self.formula()?)),
            "absdiff" => Formula::AbsDiff(Box::new(self.formula()?), Box::new(self.formula()?)),
            "clamp" => {
                // (clamp (log F) a b) is sugar for (cliplog F a b).
                let is_log = matches!(
                    (self.peek(), self.tokens.get(self.pos + 1)),
                    (Some(Token::Open(_)), Some(Token::Atom(_, s))) if s == "log"
                );
                if is_log {
                    self.expect_open()?;
                    self.atom()?; // "log"
                    let inner = self.formula()?;
                    self.expect_close()?;
                    let lo = self.number()?;
                    let hi = self.number()?;
                    if lo > hi {
                        return Err(err(open, "clamp lower bound exceeds upper bound"));
                    }
                    Formula::ClipLog(Box::new(inner), lo, hi)
                } else {
                    let inner = self.formula()?;
                    let lo = self.number()?;
                    let hi = self.number()?;
                    if lo > hi {
                        return Err(err(open, "clamp lower bound exceeds upper bound"));
                    }
                    Formula::Clamp(Box::new(inner), lo, hi)
                }
            }
            "cliplog" => {
                let inner = self.formula()?;
                let lo = self.number()?;
                let hi = self.number()?;
                if lo > hi {
                    return Err(err(open, "cliplog lower bound exceeds upper bound"));
                }
                Formula::ClipLog(Box::new(inner), lo, hi)
            }
            "sup" | "inf" => {
                let (bp, binder) = self.atom()?;
                let (var, sort) = parse_binder(&binder)
                    .ok_or_else(|| err(bp, format!("expected VAR:SORT binder, got '{binder}'")))?;
                if self.sig.sort(&sort).is_none() {
                    return Err(err(bp, format!("unknown sort {sort}")));
                }
                self.bound.push((var, sort.clone()));
                let body = self.formula()?;
                self.bound.pop();
                if head == "sup" {
                    Formula::Sup { var, sort, body: Box::new(body) }
                } else {
                    Formula::Inf { var, sort, body: Box::new(body) }
                }
            }
            "log" => return Err(err(hp, "log must appear as (clamp (log F) a b)")),
            other => return Err(err(hp, format!("unknown form '{other}'"))),
        };
        self.expect_close()?;
        Ok(f)
    }
}

fn parse_var_name(s: &str) -> Option<VarIdx> {
    let rest = s.strip_prefix('x')?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

fn parse_binder(s: &str) -> Option<(VarIdx, String)> {
    let (v, sort) = s.split_once(':')?;
    let var = parse_var_name(v)?;
    if sort.is_empty() {
        return None;
    }
    Some((var, sort.to_string()))
}

/// Parses a formula against a signature, resolving sorts and checking that
/// every variable is used consistently.
pub fn parse(text: &str, sig: &Signature) -> Result<Formula> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, pos: 0, sig, free: BTreeMap::new(), bound: Vec::new() };
    let f = parser.formula()?;
    if let Some(t) = parser.peek() {
        return Err(err(t.position(), "trailing input after formula"));
    }
    Ok(f)
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Const(c) => write!(f, "(const {c})"),
            Formula::Dist { sort, left, right } => write!(f, "(d {sort} x{left} x{right})"),
            Formula::Pred { name, args } => {
                write!(f, "(pred {name}")?;
                for a in args {
                    write!(f, " x{a}")?;
                }
                write!(f, ")")
            }
            Formula::Neg(inner) => write!(f, "(neg {inner})"),
            Formula::Scale(c, inner) => write!(f, "(scale {c} {inner})"),
            Formula::Add(a, b) => write!(f, "(add {a} {b})"),
            Formula::Max(a, b) => write!(f, "(max {a} {b})"),
            Formula::Min(a, b) => write!(f, "(min {a} {b})"),
            Formula::AbsDiff(a, b) => write!(f, "(absdiff {a} {b})"),
            Formula::Clamp(inner, lo, hi) => write!(f, "(clamp {inner} {lo} {hi})"),
            Formula::ClipLog(inner, lo, hi) => write!(f, "(cliplog {inner} {lo} {hi})"),
            Formula::Sup { var, sort, body } => write!(f, "(sup x{var}:{sort} {body})"),
            Formula::Inf { var, sort, body } => write!(f, "(inf x{var}:{sort} {body})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Free variables
// ---------------------------------------------------------------------------

impl Formula {
    /// Free variables with their sorts. Needs the signature to resolve
    /// predicate argument sorts.
    pub fn free_vars(&self, sig: &Signature) -> Result<BTreeMap<VarIdx, String>> {
        let mut free = BTreeMap::new();
        let mut bound = Vec::new();
        self.collect_free(sig, &mut bound, &mut free)?;
        Ok(free)
    }

    fn collect_free(
        &self,
        sig: &Signature,
        bound: &mut Vec<VarIdx>,
        free: &mut BTreeMap<VarIdx, String>,
    ) -> Result<()> {
        let mut record = |var: VarIdx, sort: &str, bound: &[VarIdx]| -> Result<()> {
            if bound.contains(&var) {
                return Ok(());
            }
            match free.get(&var) {
                Some(existing) if existing != sort => Err(Error::input(format!(
                    "variable x{var} used at sorts {existing} and {sort}"
                ))),
                _ => {
                    free.insert(var, sort.to_string());
                    Ok(())
                }
            }
        };
        match self {
            Formula::Const(_) => Ok(()),
            Formula::Dist { sort, left, right } => {
                record(*left, sort, bound)?;
                record(*right, sort, bound)
            }
            Formula::Pred { name, args } => {
                let pred = sig
                    .predicate(name)
                    .ok_or_else(|| Error::input(format!("unknown predicate {name}")))?;
                if args.len() != pred.arity {
                    return Err(Error::input(format!("predicate {name} arity mismatch")));
                }
                for (k, a) in args.iter().enumerate() {
                    record(*a, &pred.arg_sorts[k], bound)?;
                }
                Ok(())
            }
            Formula::Neg(inner) | Formula::Scale(_, inner) => {
                inner.collect_free(sig, bound, free)
            }
            Formula::Clamp(inner, _, _) | Formula::ClipLog(inner, _, _) => {
                inner.collect_free(sig, bound, free)
            }
            Formula::Add(a, b)
            | Formula::Max(a, b)
            | Formula::Min(a, b)
            | Formula::AbsDiff(a, b) => {
                a.collect_free(sig, bound, free)?;
                b.collect_free(sig, bound, free)
            }
            Formula::Sup { var, body, .. } | Formula::Inf { var, body, .. } => {
                bound.push(*var);
                body.collect_free(sig, bound, free)?;
                bound.pop();
                Ok(())
            }
        }
    }

    /// Renames free variables according to `map` (entries absent from the map
    /// are left alone). Bound variables are untouched; callers must ensure
    /// the renaming does not capture.
    pub fn rename_free(&self, map: &BTreeMap<VarIdx, VarIdx>) -> Formula {
        self.rename_inner(map, &mut Vec::new())
    }

    fn rename_inner(&self, map: &BTreeMap<VarIdx, VarIdx>, bound: &mut Vec<VarIdx>) -> Formula {
        let rn = |v: VarIdx, bound: &[VarIdx]| -> VarIdx {
            if bound.contains(&v) {
                v
            } else {
                map.get(&v).copied().unwrap_or(v)
            }
        };
        match self {
            Formula::Const(c) => Formula::Const(*c),
            Formula::Dist { sort, left, right } => Formula::Dist {
                sort: sort.clone(),
                left: rn(*left, bound),
                right: rn(*right, bound),
            },
            Formula::Pred { name, args } => Formula::Pred {
                name: name.clone(),
                args: args.iter().map(|a| rn(*a, bound)).collect(),
            },
            Formula::Neg(inner) => Formula::Neg(Box::new(inner.rename_inner(map, bound))),
            Formula::Scale(c, inner) => {
                Formula::Scale(*c, Box::new(inner.rename_inner(map, bound)))
            }
            Formula::Add(a, b) => Formula::Add(
                Box::new(a.rename_inner(map, bound)),
                Box::new(b.rename_inner(map, bound)),
            ),
            Formula::Max(a, b) => Formula::Max(
                Box::new(a.rename_inner(map, bound)),
                Box::new(b.rename_inner(map, bound)),
            ),
            Formula::Min(a, b) => Formula::Min(
                Box::new(a.rename_inner(map, bound)),
                Box::new(b.rename_inner(map, bound)),
            ),
            Formula::AbsDiff(a, b) => Formula::AbsDiff(
                Box::new(a.rename_inner(map, bound)),
                Box::new(b.rename_inner(map, bound)),
            ),
            Formula::Clamp(inner, lo, hi) => {
                Formula::Clamp(Box::new(inner.rename_inner(map, bound)), *lo, *hi)
            }
            Formula::ClipLog(inner, lo, hi) => {
                Formula::ClipLog(Box::new(inner.rename_inner(map, bound)), *lo, *hi)
            }
            Formula::Sup { var, sort, body } => {
                bound.push(*var);
                let body = body.rename_inner(map, bound);
                bound.pop();
                Formula::Sup { var: *var, sort: sort.clone(), body: Box::new(body) }
            }
            Formula::Inf { var, sort, body } => {
                bound.push(*var);
                let body = body.rename_inner(map, bound);
                bound.pop();
                Formula::Inf { var: *var, sort: sort.clone(), body: Box::new(body) }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// A variable assignment: var index to (sort index, point index) in a
/// structure. Compact so search loops can reuse a single buffer.
#[derive(Debug, Clone, Default)]
pub struct Binding {
    slots: Vec<Option<(usize, usize)>>,
}

impl Binding {
    pub fn new() -> Self {
        Binding::default()
    }

    pub fn set(&mut self, var: VarIdx, sort: usize, point: usize) {
        let var = var as usize;
        if self.slots.len() <= var {
            self.slots.resize(var + 1, None);
        }
        self.slots[var] = Some((sort, point));
    }

    pub fn clear(&mut self, var: VarIdx) {
        if let Some(slot) = self.slots.get_mut(var as usize) {
            *slot = None;
        }
    }

    pub fn get(&self, var: VarIdx) -> Option<(usize, usize)> {
        self.slots.get(var as usize).copied().flatten()
    }

    /// Builds a binding from labels, resolving each `x<i> = (sort, point)`.
    pub fn from_labels(
        s: &MetricStructure,
        entries: &[(VarIdx, String, String)],
    ) -> Result<Binding> {
        let mut b = Binding::new();
        for (var, sort_name, point) in entries {
            let si = s
                .sort_index(sort_name)
                .ok_or_else(|| Error::input(format!("unknown sort {sort_name}")))?;
            let pi = s.sorts[si]
                .point_index(point)
                .ok_or_else(|| Error::input(format!("unknown point {point} in {sort_name}")))?;
            b.set(*var, si, pi);
        }
        Ok(b)
    }
}

/// Evaluates a formula on a structure under an assignment covering its free
/// variables. `sup`/`inf` enumerate the quantified sort exactly.
pub fn evaluate(f: &Formula, s: &MetricStructure, binding: &Binding) -> Result<f64> {
    let mut scratch = binding.clone();
    eval_inner(f, s, &mut scratch)
}

fn eval_inner(f: &Formula, s: &MetricStructure, binding: &mut Binding) -> Result<f64> {
    match f {
        Formula::Const(c) => Ok(*c),
        Formula::Dist { sort, left, right } => {
            let si = s
                .sort_index(sort)
                .ok_or_else(|| Error::Eval(format!("structure lacks sort {sort}")))?;
            let (ls, lp) = binding
                .get(*left)
                .ok_or_else(|| Error::Eval(format!("unassigned free variable x{left}")))?;
            let (rs, rp) = binding
                .get(*right)
                .ok_or_else(|| Error::Eval(format!("unassigned free variable x{right}")))?;
            if ls != si || rs != si {
                return Err(Error::Eval(format!("variable bound at wrong sort for d in {sort}")));
            }
            Ok(s.sorts[si].dist(lp, rp))
        }
        Formula::Pred { name, args } => {
            let pred = s
                .predicate(name)
                .ok_or_else(|| Error::Eval(format!("structure lacks predicate {name}")))?;
            let mut idx = Vec::with_capacity(args.len());
            for (k, a) in args.iter().enumerate() {
                let (si, pi) = binding
                    .get(*a)
                    .ok_or_else(|| Error::Eval(format!("unassigned free variable x{a}")))?;
                let expect = s
                    .sort_index(&pred.arg_sorts[k])
                    .ok_or_else(|| Error::Eval(format!("structure lacks sort {}", pred.arg_sorts[k])))?;
                if si != expect {
                    return Err(Error::Eval(format!(
                        "variable x{a} bound at wrong sort for predicate {name}"
                    )));
                }
                idx.push(pi);
            }
            Ok(pred.values.get(&idx))
        }
        Formula::Neg(inner) => Ok(-eval_inner(inner, s, binding)?),
        Formula::Scale(c, inner) => Ok(c * eval_inner(inner, s, binding)?),
        Formula::Add(a, b) => Ok(eval_inner(a, s, binding)? + eval_inner(b, s, binding)?),
        Formula::Max(a, b) => Ok(eval_inner(a, s, binding)?.max(eval_inner(b, s, binding)?)),
        Formula::Min(a, b) => Ok(eval_inner(a, s, binding)?.min(eval_inner(b, s, binding)?)),
        Formula::AbsDiff(a, b) => {
            Ok((eval_inner(a, s, binding)? - eval_inner(b, s, binding)?).abs())
        }
        Formula::Clamp(inner, lo, hi) => Ok(eval_inner(inner, s, binding)?.clamp(*lo, *hi)),
        Formula::ClipLog(inner, lo, hi) => Ok(cliplog(eval_inner(inner, s, binding)?, *lo, *hi)),
        Formula::Sup { var, sort, body } => quantify(s, binding, *var, sort, body, true),
        Formula::Inf { var, sort, body } => quantify(s, binding, *var, sort, body, false),
    }
}

fn quantify(
    s: &MetricStructure,
    binding: &mut Binding,
    var: VarIdx,
    sort: &str,
    body: &Formula,
    is_sup: bool,
) -> Result<f64> {
    let si = s
        .sort_index(sort)
        .ok_or_else(|| Error::Eval(format!("structure lacks sort {sort}")))?;
    let n = s.sorts[si].len();
    if n == 0 {
        return Err(Error::Eval(format!("cannot quantify over empty sort {sort}")));
    }
    let saved = binding.get(var);
    let mut best = if is_sup { f64::NEG_INFINITY } else { f64::INFINITY };
    for p in 0..n {
        binding.set(var, si, p);
        let v = eval_inner(body, s, binding)?;
        best = if is_sup { best.max(v) } else { best.min(v) };
    }
    match saved {
        Some((ss, sp)) => binding.set(var, ss, sp),
        None => binding.clear(var),
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Modulus inference
// ---------------------------------------------------------------------------

/// A sound (possibly conservative) per-variable Lipschitz bound together
/// with a value range, both inferred syntactically.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusBound {
    /// Lipschitz constant per free variable index.
    pub vars: BTreeMap<VarIdx, f64>,
    /// Interval containing every possible value.
    pub range: (f64, f64),
}

impl ModulusBound {
    pub fn lipschitz(&self, var: VarIdx) -> f64 {
        self.vars.get(&var).copied().unwrap_or(0.0)
    }

    /// Sum of all per-variable constants; bounds the change under a joint
    /// move of all arguments by their individual distances.
    pub fn total(&self) -> f64 {
        self.vars.values().sum()
    }
}

fn merge_max(a: &BTreeMap<VarIdx, f64>, b: &BTreeMap<VarIdx, f64>) -> BTreeMap<VarIdx, f64> {
    let mut out = a.clone();
    for (k, v) in b {
        let e = out.entry(*k).or_insert(0.0);
        *e = e.max(*v);
    }
    out
}

fn merge_sum(a: &BTreeMap<VarIdx, f64>, b: &BTreeMap<VarIdx, f64>) -> BTreeMap<VarIdx, f64> {
    let mut out = a.clone();
    for (k, v) in b {
        *out.entry(*k).or_insert(0.0) += v;
    }
    out
}

/// Infers per-variable Lipschitz constants and a value range.
///
/// The calculus is conservative: `d` contributes 1 per argument, predicates
/// their declared constants, `scale` multiplies, `max`/`min` take the
/// pointwise max of argument bounds, `add`/`absdiff` the sum, clamps keep
/// the inner bound, and the clamped log multiplies by the worst slope of
/// `log` over the reachable region. Quantifiers drop the bound variable.
pub fn infer_modulus(f: &Formula, sig: &Signature) -> Result<ModulusBound> {
    match f {
        Formula::Const(c) => Ok(ModulusBound { vars: BTreeMap::new(), range: (*c, *c) }),
        Formula::Dist { sort, left, right } => {
            let s = sig
                .sort(sort)
                .ok_or_else(|| Error::input(format!("unknown sort {sort}")))?;
            if left == right {
                // d(x, x) is identically zero.
                return Ok(ModulusBound {
                    vars: BTreeMap::from([(*left, 0.0)]),
                    range: (0.0, 0.0),
                });
            }
            Ok(ModulusBound {
                vars: BTreeMap::from([(*left, 1.0), (*right, 1.0)]),
                range: (0.0, s.diameter_bound),
            })
        }
        Formula::Pred { name, args } => {
            let pred = sig
                .predicate(name)
                .ok_or_else(|| Error::input(format!("unknown predicate {name}")))?;
            let mut vars: BTreeMap<VarIdx, f64> = BTreeMap::new();
            for (k, a) in args.iter().enumerate() {
                *vars.entry(*a).or_insert(0.0) += pred.lipschitz[k];
            }
            Ok(ModulusBound { vars, range: pred.range })
        }
        Formula::Neg(inner) => {
            let m = infer_modulus(inner, sig)?;
            Ok(ModulusBound { vars: m.vars, range: (-m.range.1, -m.range.0) })
        }
        Formula::Scale(c, inner) => {
            let m = infer_modulus(inner, sig)?;
            let scaled: BTreeMap<VarIdx, f64> =
                m.vars.iter().map(|(k, v)| (*k, v * c.abs())).collect();
            let (a, b) = (c * m.range.0, c * m.range.1);
            Ok(ModulusBound { vars: scaled, range: (a.min(b), a.max(b)) })
        }
        Formula::Add(x, y) => {
            let mx = infer_modulus(x, sig)?;
            let my = infer_modulus(y, sig)?;
            Ok(ModulusBound {
                vars: merge_sum(&mx.vars, &my.vars),
                range: (mx.range.0 + my.range.0, mx.range.1 + my.range.1),
            })
        }
        Formula::Max(x, y) => {
            let mx = infer_modulus(x, sig)?;
            let my = infer_modulus(y, sig)?;
            Ok(ModulusBound {
                vars: merge_max(&mx.vars, &my.vars),
                range: (mx.range.0.max(my.range.0), mx.range.1.max(my.range.1)),
            })
        }
        Formula::Min(x, y) => {
            let mx = infer_modulus(x, sig)?;
            let my = infer_modulus(y, sig)?;
            Ok(ModulusBound {
                vars: merge_max(&mx.vars, &my.vars),
                range: (mx.range.0.min(my.range.0), mx.range.1.min(my.range.1)),
            })
        }
        Formula::AbsDiff(x, y) => {
            let mx = infer_modulus(x, sig)?;
            let my = infer_modulus(y, sig)?;
            let lo = mx.range.0 - my.range.1;
            let hi = mx.range.1 - my.range.0;
            let range = if lo <= 0.0 && hi >= 0.0 {
                (0.0, hi.abs().max(lo.abs()))
            } else {
                let (a, b) = (lo.abs(), hi.abs());
                (a.min(b), a.max(b))
            };
            Ok(ModulusBound { vars: merge_sum(&mx.vars, &my.vars), range })
        }
        Formula::Clamp(inner, lo, hi) => {
            let m = infer_modulus(inner, sig)?;
            let range = (m.range.0.clamp(*lo, *hi), m.range.1.clamp(*lo, *hi));
            let vars = if m.range.1 <= *lo || m.range.0 >= *hi {
                // The clamp saturates everywhere; the value is constant.
                m.vars.keys().map(|k| (*k, 0.0)).collect()
            } else {
                m.vars
            };
            Ok(ModulusBound { vars, range })
        }
        Formula::ClipLog(inner, lo, hi) => {
            let m = infer_modulus(inner, sig)?;
            let elo = lo.exp();
            let ehi = hi.exp();
            let range = (cliplog(m.range.0, *lo, *hi), cliplog(m.range.1, *lo, *hi));
            // Slope of [log x]_lo^hi is at most 1/max(e^lo, inf of x).
            let slope = if m.range.1 <= elo || m.range.0 >= ehi {
                0.0
            } else {
                1.0 / elo.max(m.range.0)
            };
            let vars = m.vars.iter().map(|(k, v)| (*k, v * slope)).collect();
            Ok(ModulusBound { vars, range })
        }
        Formula::Sup { var, body, .. } | Formula::Inf { var, body, .. } => {
            let mut m = infer_modulus(body, sig)?;
            m.vars.remove(var);
            Ok(m)
        }
    }
}

// ---------------------------------------------------------------------------
// Weak moduli
// ---------------------------------------------------------------------------

/// A sensitivity budget over variable indices: variable `x_i` may carry a
/// Lipschitz constant of at most `weight(i)`. Indices beyond the list reuse
/// the last weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakModulus {
    pub weights: Vec<f64>,
    /// Declares the weights nondecreasing in the index (later variables more
    /// sensitive); validated, not enforced.
    #[serde(default)]
    pub shift_increasing: bool,
}

impl WeakModulus {
    pub fn uniform(w: f64) -> Self {
        WeakModulus { weights: vec![w], shift_increasing: true }
    }

    pub fn new(weights: Vec<f64>, shift_increasing: bool) -> Result<Self> {
        let m = WeakModulus { weights, shift_increasing };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::input("weak modulus needs at least one weight"));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::input("weak modulus weights must be finite and nonnegative"));
        }
        if self.shift_increasing {
            for pair in self.weights.windows(2) {
                if pair[0] > pair[1] {
                    return Err(Error::input(
                        "shift-increasing weak modulus must have nondecreasing weights",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn weight(&self, idx: VarIdx) -> f64 {
        let i = (idx as usize).min(self.weights.len() - 1);
        self.weights[i]
    }
}

/// True when the inferred modulus of `f` fits under `omega`: the constant of
/// every free variable `x_i` is at most `weight(i)`. Sound but conservative;
/// a formula may respect the modulus semantically and still be rejected.
pub fn respects_modulus(f: &Formula, sig: &Signature, omega: &WeakModulus) -> Result<bool> {
    let m = infer_modulus(f, sig)?;
    Ok(m.vars.iter().all(|(var, l)| *l <= omega.weight(*var)))
}
