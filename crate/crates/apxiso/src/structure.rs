//! Finite multi-sorted metric structures and correlations between them.
//!
//! A [`MetricStructure`] is a finite set of points per sort, a metric given as
//! a dense square matrix per sort, and real-valued predicates given as dense
//! tables. All structures here are finite, so they coincide with their metric
//! completions and almost correlations coincide with correlations; the
//! topological distinctions of the general theory collapse and are not
//! modeled.
//!
//! Structures and correlations are immutable after construction and safe to
//! share read-only across parallel workers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result, TOL};

/// One sort: named points with a metric and a diameter bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sort {
    pub name: String,
    pub points: Vec<String>,
    /// Row-major square matrix of pairwise distances.
    pub metric: Vec<Vec<f64>>,
    pub diameter_bound: f64,
}

impl Sort {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance between points `i` and `j`. Panics on out-of-range indices.
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.metric[i][j]
    }

    pub fn point_index(&self, label: &str) -> Option<usize> {
        self.points.iter().position(|p| p == label)
    }
}

/// Dense table of predicate values indexed by point tuples.
///
/// Serialized as nested arrays in point-index order: `values[i0][i1]...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Table {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::input(format!(
                "table data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Table { dims, data })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut flat = 0;
        for (i, d) in idx.iter().zip(&self.dims) {
            debug_assert!(i < d);
            flat = flat * d + i;
        }
        flat
    }
}

impl Serialize for Table {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        fn nest(dims: &[usize], data: &[f64]) -> serde_json::Value {
            if dims.is_empty() {
                return serde_json::json!(data[0]);
            }
            let chunk = data.len() / dims[0];
            let items: Vec<serde_json::Value> = (0..dims[0])
                .map(|i| nest(&dims[1..], &data[i * chunk..(i + 1) * chunk]))
                .collect();
            serde_json::Value::Array(items)
        }
        nest(&self.dims, &self.data).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Table {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        fn walk<E: serde::de::Error>(
            v: &serde_json::Value,
            dims: &mut Vec<usize>,
            depth: usize,
            out: &mut Vec<f64>,
        ) -> std::result::Result<(), E> {
            match v {
                serde_json::Value::Array(items) => {
                    if dims.len() == depth {
                        dims.push(items.len());
                    } else if dims[depth] != items.len() {
                        return Err(E::custom("ragged predicate value table"));
                    }
                    for item in items {
                        walk(item, dims, depth + 1, out)?;
                    }
                    Ok(())
                }
                serde_json::Value::Number(n) => {
                    if dims.len() != depth {
                        return Err(E::custom("ragged predicate value table"));
                    }
                    out.push(n.as_f64().ok_or_else(|| E::custom("non-finite number"))?);
                    Ok(())
                }
                _ => Err(E::custom("predicate values must be nested arrays of numbers")),
            }
        }
        let mut dims = Vec::new();
        let mut data = Vec::new();
        walk::<D::Error>(&value, &mut dims, 0, &mut data)?;
        if dims.is_empty() {
            return Err(D::Error::custom("predicate values must have positive arity"));
        }
        Ok(Table { dims, data })
    }
}

/// A real-valued predicate with declared range and per-argument Lipschitz
/// bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub arity: usize,
    pub arg_sorts: Vec<String>,
    pub values: Table,
    /// Closed interval `[a, b]` containing every table entry.
    pub range: (f64, f64),
    /// Per-argument Lipschitz constants with respect to the sort metrics.
    pub lipschitz: Vec<f64>,
}

/// A finite multi-sorted metric structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStructure {
    pub sorts: Vec<Sort>,
    pub predicates: Vec<Predicate>,
    /// Named points: constant name to `[sort, point]`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, (String, String)>,
}

/// A single invariant violation found by [`MetricStructure::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonSquareMetric { sort: String, row: usize },
    NonFiniteEntry { place: String },
    EmptySort { sort: String },
    Asymmetry { sort: String, i: usize, j: usize, dij: f64, dji: f64 },
    NonzeroDiagonal { sort: String, i: usize, value: f64 },
    ZeroOffDiagonal { sort: String, i: usize, j: usize },
    NegativeDistance { sort: String, i: usize, j: usize, value: f64 },
    Triangle { sort: String, i: usize, j: usize, k: usize, direct: f64, via: f64 },
    DiameterExceeded { sort: String, i: usize, j: usize, value: f64, bound: f64 },
    PredicateArity { predicate: String },
    UnknownSort { predicate: String, sort: String },
    TableDims { predicate: String, expected: Vec<usize>, found: Vec<usize> },
    OutOfRange { predicate: String, tuple: Vec<usize>, value: f64, range: (f64, f64) },
    BadRange { predicate: String },
    LipschitzViolation {
        predicate: String,
        arg: usize,
        tuple: Vec<usize>,
        swapped: usize,
        diff: f64,
        bound: f64,
    },
    UnknownConstantSort { constant: String, sort: String },
    UnknownConstantPoint { constant: String, point: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NonSquareMetric { sort, row } => {
                write!(f, "sort {sort}: metric row {row} has wrong length")
            }
            NonFiniteEntry { place } => write!(f, "non-finite value at {place}"),
            EmptySort { sort } => write!(f, "sort {sort} has no points"),
            Asymmetry { sort, i, j, dij, dji } => {
                write!(f, "sort {sort}: d({i},{j})={dij} != d({j},{i})={dji}")
            }
            NonzeroDiagonal { sort, i, value } => {
                write!(f, "sort {sort}: d({i},{i})={value} != 0")
            }
            ZeroOffDiagonal { sort, i, j } => {
                write!(f, "sort {sort}: distinct points {i},{j} at distance 0")
            }
            NegativeDistance { sort, i, j, value } => {
                write!(f, "sort {sort}: d({i},{j})={value} < 0")
            }
            Triangle { sort, i, j, k, direct, via } => write!(
                f,
                "sort {sort}: triangle violated at ({i},{j},{k}): d({i},{k})={direct} > d({i},{j})+d({j},{k})={via}"
            ),
            DiameterExceeded { sort, i, j, value, bound } => {
                write!(f, "sort {sort}: d({i},{j})={value} exceeds diameter bound {bound}")
            }
            PredicateArity { predicate } => {
                write!(f, "predicate {predicate}: arity, arg_sorts, and lipschitz lengths disagree")
            }
            UnknownSort { predicate, sort } => {
                write!(f, "predicate {predicate}: unknown sort {sort}")
            }
            TableDims { predicate, expected, found } => write!(
                f,
                "predicate {predicate}: table dims {found:?} do not match sort sizes {expected:?}"
            ),
            OutOfRange { predicate, tuple, value, range } => write!(
                f,
                "predicate {predicate}: value {value} at {tuple:?} outside range [{}, {}]",
                range.0, range.1
            ),
            BadRange { predicate } => write!(f, "predicate {predicate}: range lower bound exceeds upper"),
            LipschitzViolation { predicate, arg, tuple, swapped, diff, bound } => write!(
                f,
                "predicate {predicate}: argument {arg} at {tuple:?} vs point {swapped}: |diff|={diff} exceeds L*d={bound}"
            ),
            UnknownConstantSort { constant, sort } => {
                write!(f, "constant {constant}: unknown sort {sort}")
            }
            UnknownConstantPoint { constant, point } => {
                write!(f, "constant {constant}: unknown point {point}")
            }
        }
    }
}

impl MetricStructure {
    pub fn sort_index(&self, name: &str) -> Option<usize> {
        self.sorts.iter().position(|s| s.name == name)
    }

    pub fn sort(&self, name: &str) -> Option<&Sort> {
        self.sorts.iter().find(|s| s.name == name)
    }

    pub fn predicate(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    /// Checks every structure invariant and returns the list of violations.
    /// Malformed shapes (dimension mismatches) are reported as violations,
    /// never a panic. An empty list means the structure is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for sort in &self.sorts {
            self.validate_sort(sort, &mut out);
        }
        for pred in &self.predicates {
            self.validate_predicate(pred, &mut out);
        }
        for (name, (sort, point)) in &self.constants {
            match self.sort(sort) {
                None => out.push(Violation::UnknownConstantSort {
                    constant: name.clone(),
                    sort: sort.clone(),
                }),
                Some(s) => {
                    if s.point_index(point).is_none() {
                        out.push(Violation::UnknownConstantPoint {
                            constant: name.clone(),
                            point: point.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    fn validate_sort(&self, sort: &Sort, out: &mut Vec<Violation>) {
        let n = sort.points.len();
        if n == 0 {
            out.push(Violation::EmptySort { sort: sort.name.clone() });
            return;
        }
        if !sort.diameter_bound.is_finite() || sort.diameter_bound < 0.0 {
            out.push(Violation::NonFiniteEntry {
                place: format!("sort {} diameter_bound", sort.name),
            });
        }
        if sort.metric.len() != n {
            out.push(Violation::NonSquareMetric { sort: sort.name.clone(), row: usize::MAX });
            return;
        }
        for (i, row) in sort.metric.iter().enumerate() {
            if row.len() != n {
                out.push(Violation::NonSquareMetric { sort: sort.name.clone(), row: i });
                return;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let d = sort.metric[i][j];
                if !d.is_finite() {
                    out.push(Violation::NonFiniteEntry {
                        place: format!("sort {} metric ({i},{j})", sort.name),
                    });
                    return;
                }
                if d < -TOL {
                    out.push(Violation::NegativeDistance {
                        sort: sort.name.clone(),
                        i,
                        j,
                        value: d,
                    });
                }
            }
        }
        for i in 0..n {
            let dii = sort.metric[i][i];
            if dii.abs() > TOL {
                out.push(Violation::NonzeroDiagonal { sort: sort.name.clone(), i, value: dii });
            }
            for j in (i + 1)..n {
                let dij = sort.metric[i][j];
                let dji = sort.metric[j][i];
                if (dij - dji).abs() > TOL {
                    out.push(Violation::Asymmetry { sort: sort.name.clone(), i, j, dij, dji });
                }
                if dij.abs() <= TOL {
                    out.push(Violation::ZeroOffDiagonal { sort: sort.name.clone(), i, j });
                }
                if dij > sort.diameter_bound + TOL {
                    out.push(Violation::DiameterExceeded {
                        sort: sort.name.clone(),
                        i,
                        j,
                        value: dij,
                        bound: sort.diameter_bound,
                    });
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let direct = sort.metric[i][k];
                    let via = sort.metric[i][j] + sort.metric[j][k];
                    if direct > via + TOL {
                        out.push(Violation::Triangle {
                            sort: sort.name.clone(),
                            i,
                            j,
                            k,
                            direct,
                            via,
                        });
                    }
                }
            }
        }
    }

    fn validate_predicate(&self, pred: &Predicate, out: &mut Vec<Violation>) {
        if pred.arity == 0
            || pred.arg_sorts.len() != pred.arity
            || pred.lipschitz.len() != pred.arity
        {
            out.push(Violation::PredicateArity { predicate: pred.name.clone() });
            return;
        }
        if pred.range.0 > pred.range.1 {
            out.push(Violation::BadRange { predicate: pred.name.clone() });
        }
        let mut expected = Vec::with_capacity(pred.arity);
        for sort_name in &pred.arg_sorts {
            match self.sort(sort_name) {
                None => {
                    out.push(Violation::UnknownSort {
                        predicate: pred.name.clone(),
                        sort: sort_name.clone(),
                    });
                    return;
                }
                Some(s) => expected.push(s.len()),
            }
        }
        if pred.values.dims != expected {
            out.push(Violation::TableDims {
                predicate: pred.name.clone(),
                expected,
                found: pred.values.dims.clone(),
            });
            return;
        }
        // Range check on every entry.
        let mut idx = vec![0usize; pred.arity];
        loop {
            let v = pred.values.get(&idx);
            if !v.is_finite() {
                out.push(Violation::NonFiniteEntry {
                    place: format!("predicate {} at {:?}", pred.name, idx),
                });
            } else if v < pred.range.0 - TOL || v > pred.range.1 + TOL {
                out.push(Violation::OutOfRange {
                    predicate: pred.name.clone(),
                    tuple: idx.clone(),
                    value: v,
                    range: pred.range,
                });
            }
            if !next_index(&mut idx, &pred.values.dims) {
                break;
            }
        }
        // Lipschitz check: pairs of tuples differing in exactly one position.
        let mut idx = vec![0usize; pred.arity];
        loop {
            let base = pred.values.get(&idx);
            for arg in 0..pred.arity {
                let sort = self.sort(&pred.arg_sorts[arg]).expect("checked above");
                let mut other = idx.clone();
                for swapped in (idx[arg] + 1)..sort.len() {
                    other[arg] = swapped;
                    let diff = (base - pred.values.get(&other)).abs();
                    let bound = pred.lipschitz[arg] * sort.dist(idx[arg], swapped);
                    if diff > bound + TOL {
                        out.push(Violation::LipschitzViolation {
                            predicate: pred.name.clone(),
                            arg,
                            tuple: idx.clone(),
                            swapped,
                            diff,
                            bound,
                        });
                    }
                }
            }
            if !next_index(&mut idx, &pred.values.dims) {
                break;
            }
        }
    }
}

/// Advances a multi-index in row-major order; returns false after the last.
pub(crate) fn next_index(idx: &mut [usize], dims: &[usize]) -> bool {
    for pos in (0..idx.len()).rev() {
        idx[pos] += 1;
        if idx[pos] < dims[pos] {
            return true;
        }
        idx[pos] = 0;
    }
    false
}

/// An anchored pair inside a correlation, identified by point labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub sort: String,
    pub left: String,
    pub right: String,
}

/// A per-sort boolean relation between two structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortRelation {
    pub sort: String,
    #[serde(
        serialize_with = "serialize_bool_matrix",
        deserialize_with = "deserialize_bool_matrix"
    )]
    pub matrix: Vec<Vec<bool>>,
}

fn serialize_bool_matrix<S: Serializer>(
    m: &[Vec<bool>],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    let ints: Vec<Vec<u8>> = m
        .iter()
        .map(|row| row.iter().map(|&b| u8::from(b)).collect())
        .collect();
    ints.serialize(serializer)
}

fn deserialize_bool_matrix<'de, D: Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<Vec<Vec<bool>>, D::Error> {
    let ints: Vec<Vec<u8>> = Vec::deserialize(deserializer)?;
    ints.iter()
        .map(|row| {
            row.iter()
                .map(|&v| match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(D::Error::custom(format!("matrix entry {other} is not 0/1"))),
                })
                .collect()
        })
        .collect()
}

/// A candidate correlation: per-sort 0/1 matrices over left points x right
/// points, with optional anchored pairs that must be related.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// Identifier of the left structure (a file path or free-form id).
    pub left: String,
    pub right: String,
    pub relation: Vec<SortRelation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<Anchor>,
}

/// Outcome of a correlation check: either fine, or the first failure found.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationFailure {
    EmptyRow { sort: String, row: usize },
    EmptyColumn { sort: String, column: usize },
    AnchorUnset { anchor: Anchor },
}

impl fmt::Display for CorrelationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationFailure::EmptyRow { sort, row } => {
                write!(f, "sort {sort}: row {row} relates to nothing (not total)")
            }
            CorrelationFailure::EmptyColumn { sort, column } => {
                write!(f, "sort {sort}: column {column} is not hit (not surjective)")
            }
            CorrelationFailure::AnchorUnset { anchor } => write!(
                f,
                "anchor ({}, {}, {}) is not related",
                anchor.sort, anchor.left, anchor.right
            ),
        }
    }
}

impl Correlation {
    /// The identity correlation of a structure with itself.
    pub fn identity(s: &MetricStructure, id: impl Into<String>) -> Correlation {
        let id = id.into();
        let relation = s
            .sorts
            .iter()
            .map(|sort| {
                let n = sort.len();
                let matrix = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
                SortRelation { sort: sort.name.clone(), matrix }
            })
            .collect();
        Correlation { left: id.clone(), right: id, relation, anchors: Vec::new() }
    }

    /// The all-true correlation between two structures with the same sorts.
    pub fn full(left: &MetricStructure, right: &MetricStructure) -> Result<Correlation> {
        let relation = left
            .sorts
            .iter()
            .map(|sort| {
                let r = right
                    .sort(&sort.name)
                    .ok_or_else(|| Error::SignatureMismatch(format!("sort {} missing", sort.name)))?;
                Ok(SortRelation {
                    sort: sort.name.clone(),
                    matrix: vec![vec![true; r.len()]; sort.len()],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Correlation {
            left: "left".into(),
            right: "right".into(),
            relation,
            anchors: Vec::new(),
        })
    }

    pub fn sort_relation(&self, sort: &str) -> Option<&SortRelation> {
        self.relation.iter().find(|r| r.sort == sort)
    }

    /// Swaps the two sides.
    pub fn inverse(&self) -> Correlation {
        Correlation {
            left: self.right.clone(),
            right: self.left.clone(),
            relation: self
                .relation
                .iter()
                .map(|r| {
                    let rows = r.matrix.len();
                    let cols = r.matrix.first().map_or(0, |row| row.len());
                    let matrix = (0..cols)
                        .map(|j| (0..rows).map(|i| r.matrix[i][j]).collect())
                        .collect();
                    SortRelation { sort: r.sort.clone(), matrix }
                })
                .collect(),
            anchors: self
                .anchors
                .iter()
                .map(|a| Anchor {
                    sort: a.sort.clone(),
                    left: a.right.clone(),
                    right: a.left.clone(),
                })
                .collect(),
        }
    }

    /// Checks matrix dimensions against the two structures.
    pub fn check_dims(&self, left: &MetricStructure, right: &MetricStructure) -> Result<()> {
        for sort in &left.sorts {
            let rel = self.sort_relation(&sort.name).ok_or_else(|| {
                Error::input(format!("correlation has no relation for sort {}", sort.name))
            })?;
            let r = right.sort(&sort.name).ok_or_else(|| {
                Error::SignatureMismatch(format!("right structure lacks sort {}", sort.name))
            })?;
            if rel.matrix.len() != sort.len() {
                return Err(Error::input(format!(
                    "sort {}: matrix has {} rows, left structure has {} points",
                    sort.name,
                    rel.matrix.len(),
                    sort.len()
                )));
            }
            for row in &rel.matrix {
                if row.len() != r.len() {
                    return Err(Error::input(format!(
                        "sort {}: matrix row has {} columns, right structure has {} points",
                        sort.name,
                        row.len(),
                        r.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Totality, surjectivity, and anchor membership, sort by sort.
    /// Returns the first failure, or `None` when this is a correlation.
    pub fn is_correlation(
        &self,
        left: &MetricStructure,
        right: &MetricStructure,
    ) -> Result<Option<CorrelationFailure>> {
        self.check_dims(left, right)?;
        for rel in &self.relation {
            for (i, row) in rel.matrix.iter().enumerate() {
                if !row.iter().any(|&b| b) {
                    return Ok(Some(CorrelationFailure::EmptyRow {
                        sort: rel.sort.clone(),
                        row: i,
                    }));
                }
            }
            let cols = rel.matrix.first().map_or(0, |row| row.len());
            for j in 0..cols {
                if !rel.matrix.iter().any(|row| row[j]) {
                    return Ok(Some(CorrelationFailure::EmptyColumn {
                        sort: rel.sort.clone(),
                        column: j,
                    }));
                }
            }
        }
        for anchor in &self.anchors {
            let rel = self.sort_relation(&anchor.sort).ok_or_else(|| {
                Error::input(format!("anchor references unknown sort {}", anchor.sort))
            })?;
            let ls = left.sort(&anchor.sort).ok_or_else(|| {
                Error::input(format!("anchor sort {} missing on the left", anchor.sort))
            })?;
            let rs = right.sort(&anchor.sort).ok_or_else(|| {
                Error::input(format!("anchor sort {} missing on the right", anchor.sort))
            })?;
            let i = ls.point_index(&anchor.left).ok_or_else(|| {
                Error::input(format!("anchor point {} missing on the left", anchor.left))
            })?;
            let j = rs.point_index(&anchor.right).ok_or_else(|| {
                Error::input(format!("anchor point {} missing on the right", anchor.right))
            })?;
            if !rel.matrix[i][j] {
                return Ok(Some(CorrelationFailure::AnchorUnset { anchor: anchor.clone() }));
            }
        }
        Ok(None)
    }

    /// Relational composition: `(a, c)` related iff some `b` has `(a, b)` in
    /// `self` and `(b, c)` in `other`. Anchors chained through a common
    /// middle pair compose.
    pub fn compose(&self, other: &Correlation) -> Result<Correlation> {
        let mut relation = Vec::with_capacity(self.relation.len());
        for rel in &self.relation {
            let rhs = other.sort_relation(&rel.sort).ok_or_else(|| {
                Error::SignatureMismatch(format!("composition partner lacks sort {}", rel.sort))
            })?;
            let mid = rel.matrix.first().map_or(0, |row| row.len());
            if rhs.matrix.len() != mid {
                return Err(Error::SignatureMismatch(format!(
                    "sort {}: middle dimension {} vs {}",
                    rel.sort,
                    mid,
                    rhs.matrix.len()
                )));
            }
            let cols = rhs.matrix.first().map_or(0, |row| row.len());
            let matrix = rel
                .matrix
                .iter()
                .map(|row| {
                    (0..cols)
                        .map(|c| (0..mid).any(|b| row[b] && rhs.matrix[b][c]))
                        .collect()
                })
                .collect();
            relation.push(SortRelation { sort: rel.sort.clone(), matrix });
        }
        let mut anchors = Vec::new();
        for a in &self.anchors {
            for b in &other.anchors {
                if a.sort == b.sort && a.right == b.left {
                    anchors.push(Anchor {
                        sort: a.sort.clone(),
                        left: a.left.clone(),
                        right: b.right.clone(),
                    });
                }
            }
        }
        Ok(Correlation {
            left: self.left.clone(),
            right: other.right.clone(),
            relation,
            anchors,
        })
    }

    /// Metric thickening: `(a, b)` related iff some related `(c, d)` has
    /// `d(a, c) <= delta` and `d(b, d) <= delta`. The result contains the
    /// input (witnessed by `delta = 0` and the pair itself).
    pub fn thicken(
        &self,
        left: &MetricStructure,
        right: &MetricStructure,
        delta: f64,
    ) -> Result<Correlation> {
        if !(delta >= 0.0) {
            return Err(Error::input(format!("thicken requires delta >= 0, got {delta}")));
        }
        self.check_dims(left, right)?;
        let relation = self
            .relation
            .iter()
            .map(|rel| {
                let ls = left.sort(&rel.sort).expect("checked by check_dims");
                let rs = right.sort(&rel.sort).expect("checked by check_dims");
                let matrix = (0..ls.len())
                    .map(|a| {
                        (0..rs.len())
                            .map(|b| {
                                (0..ls.len()).any(|c| {
                                    ls.dist(a, c) <= delta
                                        && (0..rs.len()).any(|d| {
                                            rel.matrix[c][d] && rs.dist(b, d) <= delta
                                        })
                                })
                            })
                            .collect()
                    })
                    .collect();
                SortRelation { sort: rel.sort.clone(), matrix }
            })
            .collect();
        Ok(Correlation {
            left: self.left.clone(),
            right: self.right.clone(),
            relation,
            anchors: self.anchors.clone(),
        })
    }
}

/// Loads a metric structure from a JSON file.
pub fn load_structure(path: impl AsRef<Path>) -> Result<MetricStructure> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes a metric structure as pretty JSON.
pub fn save_structure(s: &MetricStructure, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(s)?)?;
    Ok(())
}

/// Loads a correlation from a JSON file.
pub fn load_correlation(path: impl AsRef<Path>) -> Result<Correlation> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_point(name: &str, d: f64) -> MetricStructure {
        MetricStructure {
            sorts: vec![Sort {
                name: name.into(),
                points: vec!["p".into(), "q".into()],
                metric: vec![vec![0.0, d], vec![d, 0.0]],
                diameter_bound: d,
            }],
            predicates: vec![],
            constants: BTreeMap::new(),
        }
    }

    #[test]
    fn valid_two_point_space() {
        let s = two_point("S", 1.0);
        assert!(s.validate().is_empty());
    }

    #[test]
    fn asymmetry_is_reported() {
        let mut s = two_point("S", 1.0);
        s.sorts[0].metric = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        s.sorts[0].diameter_bound = 2.0;
        let violations = s.validate();
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::Asymmetry { i: 0, j: 1, .. })));
    }

    #[test]
    fn triangle_violation_is_located() {
        let s = MetricStructure {
            sorts: vec![Sort {
                name: "S".into(),
                points: vec!["a".into(), "b".into(), "c".into()],
                metric: vec![
                    vec![0.0, 1.0, 3.0],
                    vec![1.0, 0.0, 1.0],
                    vec![3.0, 1.0, 0.0],
                ],
                diameter_bound: 3.0,
            }],
            predicates: vec![],
            constants: BTreeMap::new(),
        };
        let violations = s.validate();
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::Triangle { i: 0, j: 1, k: 2, .. })));
    }

    #[test]
    fn dimension_mismatch_is_a_violation_not_a_crash() {
        let mut s = two_point("S", 1.0);
        s.sorts[0].metric.pop();
        assert!(s
            .validate()
            .iter()
            .any(|v| matches!(v, Violation::NonSquareMetric { .. })));
    }

    #[test]
    fn predicate_range_and_lipschitz_checks() {
        let mut s = two_point("S", 1.0);
        s.predicates.push(Predicate {
            name: "U".into(),
            arity: 1,
            arg_sorts: vec!["S".into()],
            values: Table::new(vec![2], vec![0.0, 2.0]).unwrap(),
            range: (0.0, 1.0),
            lipschitz: vec![1.0],
        });
        let violations = s.validate();
        assert!(violations.iter().any(|v| matches!(v, Violation::OutOfRange { .. })));
        // |2.0 - 0.0| = 2 > 1 * d(p,q) = 1.
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::LipschitzViolation { .. })));
    }

    #[test]
    fn identity_and_full_are_correlations() {
        let s = two_point("S", 1.0);
        let id = Correlation::identity(&s, "s");
        assert_eq!(id.is_correlation(&s, &s).unwrap(), None);
        let full = Correlation::full(&s, &s).unwrap();
        assert_eq!(full.is_correlation(&s, &s).unwrap(), None);
    }

    #[test]
    fn empty_row_is_reported() {
        let s = two_point("S", 1.0);
        let mut c = Correlation::identity(&s, "s");
        c.relation[0].matrix[1] = vec![false, false];
        assert_eq!(
            c.is_correlation(&s, &s).unwrap(),
            Some(CorrelationFailure::EmptyRow { sort: "S".into(), row: 1 })
        );
    }

    #[test]
    fn compose_matches_brute_force_relational_product() {
        // r1 = {(0,0),(0,1)}, r2 = {(1,0),(0,0)}.
        let mk = |m: [[bool; 2]; 2]| Correlation {
            left: "a".into(),
            right: "b".into(),
            relation: vec![SortRelation {
                sort: "S".into(),
                matrix: m.iter().map(|r| r.to_vec()).collect(),
            }],
            anchors: vec![],
        };
        let c1 = mk([[true, true], [false, false]]);
        let c2 = mk([[true, false], [true, false]]);
        let composed = c1.compose(&c2).unwrap();
        let mut expect = [[false; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    if c1.relation[0].matrix[a][b] && c2.relation[0].matrix[b][c] {
                        expect[a][c] = true;
                    }
                }
            }
        }
        for a in 0..2 {
            for c in 0..2 {
                assert_eq!(composed.relation[0].matrix[a][c], expect[a][c]);
            }
        }
        let id = Correlation::identity(&two_point("S", 1.0), "s");
        assert_eq!(id.compose(&id).unwrap().relation, id.relation);
    }

    #[test]
    fn compose_with_inverse_contains_identity_support() {
        let s = two_point("S", 1.0);
        let c = Correlation {
            left: "a".into(),
            right: "b".into(),
            relation: vec![SortRelation {
                sort: "S".into(),
                matrix: vec![vec![true, false], vec![true, true]],
            }],
            anchors: vec![],
        };
        let round = c.compose(&c.inverse()).unwrap();
        for i in 0..2 {
            assert!(round.relation[0].matrix[i][i]);
        }
    }

    #[test]
    fn thicken_zero_is_identity_and_diameter_is_full() {
        let s = MetricStructure {
            sorts: vec![Sort {
                name: "S".into(),
                points: vec!["a".into(), "b".into(), "c".into()],
                metric: vec![
                    vec![0.0, 0.4, 0.8],
                    vec![0.4, 0.0, 0.4],
                    vec![0.8, 0.4, 0.0],
                ],
                diameter_bound: 1.0,
            }],
            predicates: vec![],
            constants: BTreeMap::new(),
        };
        let id = Correlation::identity(&s, "s");
        assert_eq!(id.thicken(&s, &s, 0.0).unwrap().relation, id.relation);
        let thick = id.thicken(&s, &s, 1.0).unwrap();
        assert!(thick.relation[0].matrix.iter().all(|row| row.iter().all(|&b| b)));
        assert!(id.thicken(&s, &s, -0.1).is_err());
    }

    #[test]
    fn thicken_matches_pairwise_scan_oracle() {
        let s = MetricStructure {
            sorts: vec![Sort {
                name: "S".into(),
                points: vec!["a".into(), "b".into(), "c".into()],
                metric: vec![
                    vec![0.0, 0.4, 0.8],
                    vec![0.4, 0.0, 0.4],
                    vec![0.8, 0.4, 0.0],
                ],
                diameter_bound: 1.0,
            }],
            predicates: vec![],
            constants: BTreeMap::new(),
        };
        let id = Correlation::identity(&s, "s");
        let delta = 0.5;
        let got = id.thicken(&s, &s, delta).unwrap();
        // Oracle: exhaustive pairwise scan.
        for a in 0..3 {
            for b in 0..3 {
                let mut expect = false;
                for c in 0..3 {
                    for d in 0..3 {
                        if id.relation[0].matrix[c][d]
                            && s.sorts[0].dist(a, c) <= delta
                            && s.sorts[0].dist(b, d) <= delta
                        {
                            expect = true;
                        }
                    }
                }
                assert_eq!(got.relation[0].matrix[a][b], expect, "cell ({a},{b})");
            }
        }
    }

    #[test]
    fn structure_file_round_trip() {
        let mut s = two_point("S", 1.0);
        s.predicates.push(Predicate {
            name: "U".into(),
            arity: 1,
            arg_sorts: vec!["S".into()],
            values: Table::new(vec![2], vec![0.0, 1.0]).unwrap(),
            range: (0.0, 1.0),
            lipschitz: vec![1.0],
        });
        s.constants.insert("origin".into(), ("S".into(), "p".into()));
        let json = serde_json::to_string(&s).unwrap();
        let back: MetricStructure = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
        // Normative field names appear in the serialization.
        for key in ["sorts", "points", "metric", "diameter_bound", "predicates", "values", "range", "lipschitz", "constants"] {
            assert!(json.contains(key), "missing field name {key}");
        }
    }
}
