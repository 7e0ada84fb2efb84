//! Sampled Banach spaces, their emboundments, and the Banach-Mazur
//! generator family.
//!
//! An emboundment encodes a normed space as a bounded metric structure: the
//! rescaling `theta(x) = x / (1 + x)` maps distances into [0, 1) and a point
//! at infinity closes the space off. The Banach-Mazur generators are the
//! products of a norm cutoff with a clamped logarithm of a linear
//! combination's norm; they are realized here as predicate tables computed
//! directly from the sample vectors (the definable-predicate detour the
//! theory allows is skipped), including every instance with the constant 0
//! substituted for some arguments.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::distsys::{DistortionSystem, Truncation};
use crate::formula::{Formula, VarIdx};
use crate::structure::{Anchor, Correlation, MetricStructure, Predicate, Sort, SortRelation, Table};
use crate::{Error, Result, TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

/// Named norms on K^dim. `Weighted` is the weighted 1-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
    Weighted(Vec<f64>),
}

impl Norm {
    pub fn eval(&self, v: &[Complex64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|z| z.norm()).sum(),
            Norm::L2 => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            Norm::Linf => v.iter().map(|z| z.norm()).fold(0.0, f64::max),
            Norm::Weighted(w) => v.iter().zip(w).map(|(z, wi)| wi * z.norm()).sum(),
        }
    }
}

/// A finite sample of a normed space over R or C, always containing the
/// zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBanach {
    pub dim: usize,
    pub field: Field,
    pub norm: Norm,
    pub samples: Vec<Vec<Complex64>>,
    pub radius_cap: f64,
}

/// On-disk form: real samples are rows of `dim` numbers, complex samples
/// rows of `2 * dim` numbers interleaving real and imaginary parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BanachSpec {
    pub dim: usize,
    pub field: Field,
    pub norm: Norm,
    pub samples: Vec<Vec<f64>>,
    pub radius_cap: f64,
}

impl TryFrom<BanachSpec> for SampledBanach {
    type Error = Error;
    fn try_from(spec: BanachSpec) -> Result<SampledBanach> {
        let want = match spec.field {
            Field::Real => spec.dim,
            Field::Complex => 2 * spec.dim,
        };
        let samples = spec
            .samples
            .iter()
            .map(|row| {
                if row.len() != want {
                    return Err(Error::input(format!(
                        "sample has {} entries, expected {want}",
                        row.len()
                    )));
                }
                Ok(match spec.field {
                    Field::Real => row.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
                    Field::Complex => row
                        .chunks(2)
                        .map(|c| Complex64::new(c[0], c[1]))
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledBanach {
            dim: spec.dim,
            field: spec.field,
            norm: spec.norm,
            samples,
            radius_cap: spec.radius_cap,
        })
    }
}

impl SampledBanach {
    pub fn to_spec(&self) -> BanachSpec {
        BanachSpec {
            dim: self.dim,
            field: self.field,
            norm: self.norm.clone(),
            samples: self
                .samples
                .iter()
                .map(|v| match self.field {
                    Field::Real => v.iter().map(|z| z.re).collect(),
                    Field::Complex => v.iter().flat_map(|z| [z.re, z.im]).collect(),
                })
                .collect(),
            radius_cap: self.radius_cap,
        }
    }

    pub fn norm_of(&self, v: &[Complex64]) -> f64 {
        self.norm.eval(v)
    }

    pub fn zero_index(&self) -> Option<usize> {
        self.samples.iter().position(|v| self.norm_of(v) <= 1e-12)
    }

    /// Checks the sample invariants: the zero vector is present, every
    /// sample respects the radius cap, and the norm axioms hold on sample
    /// combinations (spot checks).
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::input("sample set is empty"));
        }
        for v in &self.samples {
            if v.len() != self.dim {
                return Err(Error::input("sample dimension mismatch"));
            }
            if self.field == Field::Real && v.iter().any(|z| z.im != 0.0) {
                return Err(Error::input("real space has a complex sample"));
            }
            if self.norm_of(v) > self.radius_cap + TOL {
                return Err(Error::input(format!(
                    "sample norm {} exceeds radius cap {}",
                    self.norm_of(v),
                    self.radius_cap
                )));
            }
        }
        if self.zero_index().is_none() {
            return Err(Error::input("sample set must contain the zero vector"));
        }
        // Norm axioms on sample combinations.
        for a in &self.samples {
            let na = self.norm_of(a);
            let doubled: Vec<Complex64> = a.iter().map(|z| 2.0 * z).collect();
            if (self.norm_of(&doubled) - 2.0 * na).abs() > TOL * (1.0 + na) {
                return Err(Error::input("norm is not homogeneous on samples"));
            }
            for b in &self.samples {
                let sum: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                if self.norm_of(&sum) > na + self.norm_of(b) + TOL {
                    return Err(Error::input("norm violates the triangle inequality"));
                }
            }
        }
        Ok(())
    }
}

/// Loads a sampled Banach space from a JSON spec file.
pub fn load_banach(path: impl AsRef<std::path::Path>) -> Result<SampledBanach> {
    let text = std::fs::read_to_string(path)?;
    let spec: BanachSpec = serde_json::from_str(&text)?;
    spec.try_into()
}

pub fn theta(x: f64) -> f64 {
    x / (1.0 + x)
}

fn vec_sub(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// The emboundment metric between two finite vectors.
pub fn emb_dist(norm: &Norm, a: &[Complex64], b: &[Complex64]) -> f64 {
    let na = norm.eval(a);
    let nb = norm.eval(b);
    theta(norm.eval(&vec_sub(a, b))) / (1.0 + na.min(nb))
}

/// The emboundment metric from a finite vector to the point at infinity.
pub fn emb_dist_to_inf(norm: &Norm, a: &[Complex64]) -> f64 {
    1.0 / (1.0 + norm.eval(a))
}

/// A point of an embounded structure.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbPoint {
    Vector(Vec<Complex64>),
    Infinity,
}

/// A metric structure carrying the emboundment of a sampled Banach space,
/// together with the sample vectors behind each point.
#[derive(Debug, Clone)]
pub struct EmboundedStructure {
    pub structure: MetricStructure,
    pub points: Vec<EmbPoint>,
    pub norm: Norm,
}

pub const EMB_SORT: &str = "B";

fn scalar_tag(s: Complex64) -> String {
    if s.im == 0.0 {
        format!("{}", s.re).replace('.', "p").replace('-', "m")
    } else if s.re == 0.0 && s.im == 1.0 {
        "i".to_string()
    } else {
        format!("{}p{}i", s.re, s.im).replace('.', "p").replace('-', "m")
    }
}

/// Largest per-argument slope of a predicate table against the metric,
/// measured over all sample pairs. Used as the declared Lipschitz constant.
fn empirical_lipschitz(table: &Table, metric: &[Vec<f64>], arity: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; arity];
    let dims = vec![n; arity];
    let mut idx = vec![0usize; arity];
    loop {
        let base = table.get(&idx);
        for (arg, slope) in out.iter_mut().enumerate() {
            let mut other = idx.clone();
            for swap in (idx[arg] + 1)..n {
                other[arg] = swap;
                let d = metric[idx[arg]][swap];
                if d > 1e-12 {
                    *slope = slope.max((base - table.get(&other)).abs() / d);
                }
            }
        }
        if !crate::structure::next_index(&mut idx, &dims) {
            break;
        }
    }
    for slope in &mut out {
        *slope *= 1.0 + 1e-9;
    }
    out
}

/// Builds the emboundment of a sampled Banach space: points are the samples
/// plus infinity; the metric and the predicates P (addition defect) and S_r
/// (scalar-action defect, one per supplied scalar) follow the rescaling
/// formulas, with every value involving infinity equal to 0.
pub fn embound(b: &SampledBanach, scalars: &[Complex64]) -> Result<EmboundedStructure> {
    b.validate()?;
    if b.field == Field::Real {
        if let Some(s) = scalars.iter().find(|s| s.im != 0.0) {
            return Err(Error::input(format!("scalar {s} is outside the real field")));
        }
    }
    let n = b.samples.len();
    let total = n + 1; // infinity last
    let mut points: Vec<EmbPoint> =
        b.samples.iter().cloned().map(EmbPoint::Vector).collect();
    points.push(EmbPoint::Infinity);
    let labels: Vec<String> =
        (0..n).map(|i| format!("p{i}")).chain(["inf".to_string()]).collect();

    let mut metric = vec![vec![0.0; total]; total];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                metric[i][j] = emb_dist(&b.norm, &b.samples[i], &b.samples[j]);
            }
        }
        metric[i][n] = emb_dist_to_inf(&b.norm, &b.samples[i]);
        metric[n][i] = metric[i][n];
    }

    let norms: Vec<f64> = b.samples.iter().map(|v| b.norm_of(v)).collect();

    // P(x, y, z) = theta(||x + y - z||) / (1 + max norms), 0 at infinity.
    let mut p_data = vec![0.0f64; total * total * total];
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let combo: Vec<Complex64> = (0..b.dim)
                    .map(|k| b.samples[x][k] + b.samples[y][k] - b.samples[z][k])
                    .collect();
                let m = norms[x].max(norms[y]).max(norms[z]);
                p_data[(x * total + y) * total + z] = theta(b.norm_of(&combo)) / (1.0 + m);
            }
        }
    }
    let p_table = Table::new(vec![total, total, total], p_data)?;
    let p_lip = empirical_lipschitz(&p_table, &metric, 3, total);
    let mut predicates = vec![Predicate {
        name: "P".into(),
        arity: 3,
        arg_sorts: vec![EMB_SORT.into(); 3],
        values: p_table,
        range: (0.0, 1.0),
        lipschitz: p_lip,
    }];

    // S_r(x, y) = theta(||r x - y||) / (1 + max(||x||, ||y||)), 0 at infinity.
    for &s in scalars {
        let mut data = vec![0.0f64; total * total];
        for x in 0..n {
            for y in 0..n {
                let combo: Vec<Complex64> =
                    (0..b.dim).map(|k| s * b.samples[x][k] - b.samples[y][k]).collect();
                let m = norms[x].max(norms[y]);
                data[x * total + y] = theta(b.norm_of(&combo)) / (1.0 + m);
            }
        }
        let table = Table::new(vec![total, total], data)?;
        let lip = empirical_lipschitz(&table, &metric, 2, total);
        predicates.push(Predicate {
            name: format!("S_{}", scalar_tag(s)),
            arity: 2,
            arg_sorts: vec![EMB_SORT.into(); 2],
            values: table,
            range: (0.0, 1.0),
            lipschitz: lip,
        });
    }

    let zero = b.zero_index().expect("validated");
    let mut constants = std::collections::BTreeMap::new();
    constants.insert("zero".to_string(), (EMB_SORT.to_string(), labels[zero].clone()));
    constants.insert("inf".to_string(), (EMB_SORT.to_string(), "inf".to_string()));

    let structure = MetricStructure {
        sorts: vec![Sort {
            name: EMB_SORT.into(),
            points: labels,
            metric,
            diameter_bound: 1.0,
        }],
        predicates,
        constants,
    };
    Ok(EmboundedStructure { structure, points, norm: b.norm.clone() })
}

/// `phi_r` evaluated on vector norms: the cutoff times the clamped log of
/// the combination norm. `m` is the max input norm, `u` the combination
/// norm.
fn bm_core(r: f64, m: f64, u: f64) -> f64 {
    let cutoff = if m <= 0.0 { 1.0 } else { (r - m.ln() / (r * r)).clamp(0.0, 1.0) };
    let core = if u <= 0.0 { -r } else { ((2.0 - 1.0 / r) * u.ln()).clamp(-r, r) };
    cutoff * core
}

/// Evaluates phi_r on three vector arguments (None encodes infinity).
pub fn phi_r(
    norm: &Norm,
    r: f64,
    x: Option<&[Complex64]>,
    y: Option<&[Complex64]>,
    z: Option<&[Complex64]>,
) -> f64 {
    let (x, y, z) = match (x, y, z) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return 0.0,
    };
    let combo: Vec<Complex64> =
        (0..x.len()).map(|k| x[k] + y[k] - z[k]).collect();
    let m = norm.eval(x).max(norm.eval(y)).max(norm.eval(z));
    bm_core(r, m, norm.eval(&combo))
}

/// Evaluates psi_{r,s} on two vector arguments (None encodes infinity).
pub fn psi_rs(
    norm: &Norm,
    r: f64,
    s: Complex64,
    x: Option<&[Complex64]>,
    y: Option<&[Complex64]>,
) -> f64 {
    let (x, y) = match (x, y) {
        (Some(x), Some(y)) => (x, y),
        _ => return 0.0,
    };
    let combo: Vec<Complex64> = (0..x.len()).map(|k| s * x[k] - y[k]).collect();
    let m = norm.eval(x).max(norm.eval(y));
    bm_core(r, m, norm.eval(&combo))
}

/// Argument patterns for the 0-substituted Banach-Mazur instances.
const PHI_PATTERNS: [[bool; 3]; 7] = [
    [true, true, true],
    [true, true, false],
    [true, false, true],
    [false, true, true],
    [true, false, false],
    [false, true, false],
    [false, false, true],
];
const PSI_PATTERNS: [[bool; 2]; 3] = [[true, true], [true, false], [false, true]];

fn pattern_suffix(pattern: &[bool], names: &[char]) -> String {
    pattern
        .iter()
        .zip(names)
        .map(|(&keep, &c)| if keep { c } else { '0' })
        .collect()
}

/// Adds the Banach-Mazur predicate tables phi_r and psi_{r,s} (with every
/// 0-substituted instance) to an embounded structure and returns the
/// distortion system listing them as generators. Values involving the point
/// at infinity are 0.
pub fn bm_generators(
    emb: &mut EmboundedStructure,
    r_values: &[u32],
    s_values: &[Complex64],
) -> Result<DistortionSystem> {
    if r_values.is_empty() || r_values.iter().any(|&r| r == 0) {
        return Err(Error::input("bm generators need positive r values"));
    }
    let total = emb.points.len();
    let norm = emb.norm.clone();
    let metric: Vec<Vec<f64>> = emb.structure.sorts[0].metric.clone();
    let vec_of = |i: usize| -> Option<&[Complex64]> {
        match &emb.points[i] {
            EmbPoint::Vector(v) => Some(v.as_slice()),
            EmbPoint::Infinity => None,
        }
    };
    let zero: Vec<Complex64> = match emb
        .points
        .iter()
        .find(|p| matches!(p, EmbPoint::Vector(v) if norm.eval(v) <= 1e-12))
    {
        Some(EmbPoint::Vector(v)) => v.clone(),
        _ => return Err(Error::input("embounded structure lacks the zero point")),
    };

    let mut generators = Vec::new();
    let add_pred = |structure: &mut MetricStructure,
                        name: String,
                        arity: usize,
                        table: Table,
                        range: (f64, f64)|
     -> Formula {
        let lip = empirical_lipschitz(&table, &metric, arity, total);
        if structure.predicate(&name).is_none() {
            structure.predicates.push(Predicate {
                name: name.clone(),
                arity,
                arg_sorts: vec![EMB_SORT.into(); arity],
                values: table,
                range,
                lipschitz: lip,
            });
        }
        Formula::Pred { name, args: (0..arity as VarIdx).collect() }
    };

    for &r in r_values {
        let rf = f64::from(r);
        for pattern in &PHI_PATTERNS {
            let arity = pattern.iter().filter(|&&b| b).count();
            let dims = vec![total; arity];
            let mut data = vec![0.0f64; total.pow(arity as u32)];
            let mut idx = vec![0usize; arity];
            loop {
                let mut slots: [Option<&[Complex64]>; 3] = [None; 3];
                let mut at = 0;
                let mut is_inf = false;
                for (slot, &keep) in slots.iter_mut().zip(pattern) {
                    if keep {
                        *slot = vec_of(idx[at]);
                        if slot.is_none() {
                            is_inf = true;
                        }
                        at += 1;
                    } else {
                        *slot = Some(zero.as_slice());
                    }
                }
                let flat = idx.iter().fold(0, |acc, &i| acc * total + i);
                data[flat] = if is_inf {
                    0.0
                } else {
                    phi_r(&norm, rf, slots[0], slots[1], slots[2])
                };
                if !crate::structure::next_index(&mut idx, &dims) {
                    break;
                }
            }
            let name = format!("phi{r}_{}", pattern_suffix(pattern, &['x', 'y', 'z']));
            let table = Table::new(dims, data)?;
            generators.push(add_pred(&mut emb.structure, name, arity, table, (-rf, rf)));
        }
        for &s in s_values {
            for pattern in &PSI_PATTERNS {
                let arity = pattern.iter().filter(|&&b| b).count();
                let dims = vec![total; arity];
                let mut data = vec![0.0f64; total.pow(arity as u32)];
                let mut idx = vec![0usize; arity];
                loop {
                    let mut slots: [Option<&[Complex64]>; 2] = [None; 2];
                    let mut at = 0;
                    let mut is_inf = false;
                    for (slot, &keep) in slots.iter_mut().zip(pattern) {
                        if keep {
                            *slot = vec_of(idx[at]);
                            if slot.is_none() {
                                is_inf = true;
                            }
                            at += 1;
                        } else {
                            *slot = Some(zero.as_slice());
                        }
                    }
                    let flat = idx.iter().fold(0, |acc, &i| acc * total + i);
                    data[flat] = if is_inf {
                        0.0
                    } else {
                        psi_rs(&norm, rf, s, slots[0], slots[1])
                    };
                    if !crate::structure::next_index(&mut idx, &dims) {
                        break;
                    }
                }
                let name = format!(
                    "psi{r}_{}_{}",
                    scalar_tag(s),
                    pattern_suffix(pattern, &['x', 'y'])
                );
                let table = Table::new(dims, data)?;
                generators.push(add_pred(&mut emb.structure, name, arity, table, (-rf, rf)));
            }
        }
    }
    Ok(DistortionSystem::new(
        "bm",
        generators,
        Truncation { r_max: r_values.iter().max().copied(), ..Truncation::default() },
    ))
}

/// Inverts a real square matrix by Gaussian elimination.
fn invert(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return Err(Error::input("matrix must be square"));
    }
    let mut work: Vec<Vec<f64>> = a.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| work[i][col].abs().partial_cmp(&work[j][col].abs()).unwrap())
            .unwrap();
        if work[pivot][col].abs() < 1e-12 {
            return Err(Error::input("matrix is singular"));
        }
        work.swap(col, pivot);
        inv.swap(col, pivot);
        let p = work[col][col];
        for j in 0..n {
            work[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = work[i][col];
                for j in 0..n {
                    work[i][j] -= f * work[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    Ok(inv)
}

fn apply(a: &[Vec<f64>], v: &[Complex64]) -> Vec<Complex64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(&c, z)| c * z).sum())
        .collect()
}

/// Builds the correlation induced by a linear bijection: each left sample
/// pairs with the nearest right sample to its image (and symmetrically
/// through the inverse for surjectivity), plus the pairs (zero, zero) and
/// (infinity, infinity). Returns the correlation and the snapping residual,
/// the largest emboundment distance between an ideal image and the sample
/// chosen for it.
pub fn linear_map_correlation(
    left: &EmboundedStructure,
    right: &EmboundedStructure,
    matrix: &[Vec<f64>],
) -> Result<(Correlation, f64)> {
    let inverse = invert(matrix)?;
    let norm = &right.norm;
    let lnorm = &left.norm;
    let ln = left.points.len();
    let rn = right.points.len();
    let mut cells = vec![vec![false; rn]; ln];
    let mut residual = 0.0f64;

    let left_vec = |i: usize| match &left.points[i] {
        EmbPoint::Vector(v) => Some(v),
        EmbPoint::Infinity => None,
    };
    let right_vec = |j: usize| match &right.points[j] {
        EmbPoint::Vector(v) => Some(v),
        EmbPoint::Infinity => None,
    };

    for i in 0..ln {
        let Some(v) = left_vec(i) else {
            continue;
        };
        let image = apply(matrix, v);
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..rn {
            if let Some(w) = right_vec(j) {
                let d = emb_dist(norm, &image, w);
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        if best.1 == usize::MAX {
            return Err(Error::input("right structure has no finite points"));
        }
        cells[i][best.1] = true;
        residual = residual.max(best.0);
    }
    for j in 0..rn {
        let Some(w) = right_vec(j) else {
            continue;
        };
        let preimage = apply(&inverse, w);
        let mut best = (f64::INFINITY, usize::MAX);
        for i in 0..ln {
            if let Some(v) = left_vec(i) {
                let d = emb_dist(lnorm, &preimage, v);
                if d < best.0 {
                    best = (d, i);
                }
            }
        }
        cells[best.1][j] = true;
        residual = residual.max(best.0);
    }
    // Infinity maps to infinity.
    let li = left.points.iter().position(|p| matches!(p, EmbPoint::Infinity));
    let ri = right.points.iter().position(|p| matches!(p, EmbPoint::Infinity));
    let (Some(li), Some(ri)) = (li, ri) else {
        return Err(Error::input("embounded structures must contain infinity"));
    };
    cells[li][ri] = true;

    let zero_l = &left.structure.constants["zero"];
    let zero_r = &right.structure.constants["zero"];
    let corr = Correlation {
        left: "left".into(),
        right: "right".into(),
        relation: vec![SortRelation { sort: EMB_SORT.into(), matrix: cells }],
        anchors: vec![
            Anchor { sort: EMB_SORT.into(), left: zero_l.1.clone(), right: zero_r.1.clone() },
            Anchor { sort: EMB_SORT.into(), left: "inf".into(), right: "inf".into() },
        ],
    };
    Ok((corr, residual))
}

/// Largest ratio `||A x|| / ||x||` over the nonzero samples: a lower bound
/// for the operator norm that is exact on radial grids.
pub fn operator_norm_on_samples(b: &SampledBanach, matrix: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for v in &b.samples {
        let n = b.norm_of(v);
        if n > 1e-12 {
            worst = worst.max(b.norm_of(&apply(matrix, v)) / n);
        }
    }
    worst
}

/// The rebalancing factor `sqrt(||A^{-1}|| / ||A||)`: scaling `A` by it
/// makes both operator norms at most `sqrt(||A|| * ||A^{-1}||)`.
pub fn rebalance_factor(a_norm: f64, a_inv_norm: f64) -> f64 {
    (a_inv_norm / a_norm).sqrt()
}

/// A radial sample grid in the plane: the zero vector plus eight unit
/// directions (normalized for the given norm) scaled by `e^{j/2}` for `j`
/// in the inclusive range. Norm ratios of grid points land exactly on the
/// half-integer log scale the Banach-Mazur generators read.
pub fn radial_grid(norm: Norm, j_min: i32, j_max: i32) -> SampledBanach {
    let raw_dirs: [[f64; 2]; 8] = [
        [1.0, 0.0],
        [0.0, 1.0],
        [-1.0, 0.0],
        [0.0, -1.0],
        [1.0, 1.0],
        [1.0, -1.0],
        [-1.0, 1.0],
        [-1.0, -1.0],
    ];
    let mut samples: Vec<Vec<Complex64>> = vec![vec![Complex64::ZERO, Complex64::ZERO]];
    for dir in raw_dirs {
        let v: Vec<Complex64> = dir.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let n = norm.eval(&v);
        for j in j_min..=j_max {
            let scale = (f64::from(j) / 2.0).exp() / n;
            samples.push(v.iter().map(|z| scale * z).collect());
        }
    }
    let cap = samples.iter().map(|v| norm.eval(v)).fold(0.0, f64::max) * (1.0 + 1e-9);
    SampledBanach { dim: 2, field: Field::Real, norm, samples, radius_cap: cap }
}

/// Maps a sampled Banach space through a matrix: the image samples with the
/// same norm, suitable as an exactly-matched emboundment target.
pub fn image_space(b: &SampledBanach, matrix: &[Vec<f64>]) -> Result<SampledBanach> {
    invert(matrix)?;
    let samples: Vec<Vec<Complex64>> = b.samples.iter().map(|v| apply(matrix, v)).collect();
    let cap = samples.iter().map(|v| b.norm.eval(v)).fold(0.0, f64::max) * (1.0 + 1e-9);
    Ok(SampledBanach {
        dim: b.dim,
        field: b.field,
        norm: b.norm.clone(),
        samples,
        radius_cap: cap,
    })
}

/// A sampled unit ball with one linear-combination norm predicate `lc<i>`
/// per coefficient vector: `lc_i(x_1..x_m) = ||sum_j lambda_j x_j||`. These
/// predicates are what the Kadets builtin lifts into generators.
pub fn kadets_structure(b: &SampledBanach, vectors: &[Vec<f64>]) -> Result<MetricStructure> {
    b.validate()?;
    let n = b.samples.len();
    for v in &b.samples {
        if b.norm_of(v) > 1.0 + TOL {
            return Err(Error::input("kadets samples must lie in the unit ball"));
        }
    }
    let mut metric = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                metric[i][j] = b.norm_of(&vec_sub(&b.samples[i], &b.samples[j]));
            }
        }
    }
    let mut predicates = Vec::with_capacity(vectors.len());
    for (gi, lambda) in vectors.iter().enumerate() {
        let mass: f64 = lambda.iter().map(|l| l.abs()).sum();
        if mass > 1.0 + TOL {
            return Err(Error::input(format!(
                "coefficient vector {gi} has mass {mass} > 1"
            )));
        }
        let arity = lambda.len();
        let dims = vec![n; arity];
        let mut data = vec![0.0f64; n.pow(arity as u32)];
        let mut idx = vec![0usize; arity];
        loop {
            let mut combo = vec![Complex64::ZERO; b.dim];
            for (pos, &l) in lambda.iter().enumerate() {
                for k in 0..b.dim {
                    combo[k] += l * b.samples[idx[pos]][k];
                }
            }
            let flat = idx.iter().fold(0, |acc, &i| acc * n + i);
            data[flat] = b.norm_of(&combo);
            if !crate::structure::next_index(&mut idx, &dims) {
                break;
            }
        }
        predicates.push(Predicate {
            name: format!("lc{gi}"),
            arity,
            arg_sorts: vec![EMB_SORT.into(); arity],
            values: Table::new(dims, data)?,
            range: (0.0, 1.0),
            lipschitz: lambda.iter().map(|l| l.abs()).collect(),
        });
    }
    Ok(MetricStructure {
        sorts: vec![Sort {
            name: EMB_SORT.into(),
            points: (0..n).map(|i| format!("p{i}")).collect(),
            metric,
            diameter_bound: 2.0,
        }],
        predicates,
        constants: Default::default(),
    })
}
