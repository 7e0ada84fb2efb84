//! Command-line front end: validation, formula evaluation, distortion,
//! correlation search, back-and-forth analysis, emboundment, and the demo
//! suites.
//!
//! Machine output (`--format json`) is one JSON record per line with stable
//! key order, so identical invocations with identical seeds are
//! byte-identical; the human format is derived from the same records. Exit
//! codes: 0 success, 1 domain violation or failed check, 2 I/O or parse
//! error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;

use crate::backforth::{r_finite, r_infty_capped, scott_rank_capped};
use crate::distsys::{
    builtin, check_atomic_completeness, distortion, Builtin, DistortionSystem, SystemSpec,
    Truncation,
};
use crate::embound::{
    bm_generators, embound, image_space, linear_map_correlation, load_banach, radial_grid, Norm,
};
use crate::formula::{evaluate, Binding, WeakModulus};
use crate::pathology::disjoint_union_demo;
use crate::search::{rho_exact, rho_heuristic, SearchOptions};
use crate::structure::{
    load_correlation, load_structure, save_structure, Anchor, MetricStructure,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "apxiso",
    about = "Approximate-isomorphism distances between finite metric structures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format: human tables or line-delimited JSON records.
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// Worker threads (0 = hardware count). Results are identical across
    /// thread counts.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Args)]
struct SystemFlags {
    /// Builtin system: gh | lip | kadets | fghk | eghk | iu.
    #[arg(long)]
    system: Option<String>,
    /// JSON system spec file (name, optional builtin, truncation,
    /// generator strings).
    #[arg(long)]
    system_file: Option<PathBuf>,
    /// Clamp radius cutoff override (lip).
    #[arg(long)]
    r_max: Option<u32>,
    /// Coefficient cutoff override (iu).
    #[arg(long)]
    n_max: Option<u32>,
    /// Predicate index cutoff override (fghk).
    #[arg(long)]
    index_cutoff: Option<u32>,
}

impl SystemFlags {
    fn resolve(&self, s: &MetricStructure) -> Result<DistortionSystem> {
        let sig = s.signature();
        if let Some(path) = &self.system_file {
            let text = std::fs::read_to_string(path)?;
            let spec: SystemSpec = serde_json::from_str(&text)?;
            return spec.resolve(&sig);
        }
        let name = self.system.as_deref().unwrap_or("gh");
        let kind: Builtin = name.parse()?;
        builtin(
            kind,
            &sig,
            Truncation {
                r_max: self.r_max,
                n_max: self.n_max,
                index_cutoff: self.index_cutoff,
                kadets_level: None,
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check every structure invariant of a file.
    Validate { path: PathBuf },
    /// Evaluate a formula on a structure under an assignment.
    Eval {
        structure: PathBuf,
        /// Formula in the s-expression DSL.
        #[arg(long)]
        formula: String,
        /// Assignments var=point, e.g. -a x0=p -a x1=q.
        #[arg(long = "assign", short = 'a')]
        assign: Vec<String>,
    },
    /// Distortion of a correlation under a system.
    Dis {
        left: PathBuf,
        right: PathBuf,
        correlation: PathBuf,
        #[command(flatten)]
        system: SystemFlags,
    },
    /// Minimize distortion over correlations.
    Rho {
        left: PathBuf,
        right: PathBuf,
        #[command(flatten)]
        system: SystemFlags,
        /// Exact branch-and-bound search (the default).
        #[arg(long, conflicts_with = "heuristic")]
        exact: bool,
        /// Local-search upper bound instead of the exact search.
        #[arg(long)]
        heuristic: bool,
        /// Anchored pairs SORT:LEFT:RIGHT that every correlation must relate.
        #[arg(long = "anchor")]
        anchors: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Distortion evaluations granted to the heuristic.
        #[arg(long, default_value_t = 2000)]
        budget: u64,
        /// Per-sort cell cap for the exact search.
        #[arg(long, default_value_t = 36)]
        cell_cap: usize,
        /// Run the exact search past the cell cap.
        #[arg(long)]
        force: bool,
    },
    /// Back-and-forth pseudo-metric between two structures.
    Baf {
        left: PathBuf,
        right: PathBuf,
        #[command(flatten)]
        system: SystemFlags,
        /// Unroll exactly this many rounds.
        #[arg(long, conflicts_with = "fixpoint")]
        rounds: Option<usize>,
        /// Iterate to the capped fixed point.
        #[arg(long)]
        fixpoint: bool,
        /// Tuple length cap for the fixed point.
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Weak modulus weights, comma separated; indices past the end
        /// repeat the last weight.
        #[arg(long, default_value = "1")]
        omega: String,
        /// Declare the weights nondecreasing.
        #[arg(long)]
        shift_increasing: bool,
        /// Emit the full table with the record.
        #[arg(long)]
        dump_table: bool,
    },
    /// Scott rank: the stabilization index of the capped fixed point.
    Scott {
        left: PathBuf,
        right: PathBuf,
        #[command(flatten)]
        system: SystemFlags,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value = "1")]
        omega: String,
        #[arg(long)]
        shift_increasing: bool,
    },
    /// Embound a sampled Banach space into a structure file.
    Embound {
        banach: PathBuf,
        /// Scalars r for the S_r predicates, comma separated ("i" allowed
        /// for complex spaces).
        #[arg(long, default_value = "0.5")]
        scalars: String,
        /// Also add Banach-Mazur predicate tables for these r values.
        #[arg(long)]
        bm_r: Option<String>,
        /// Write the Banach-Mazur system spec here.
        #[arg(long)]
        system_out: Option<PathBuf>,
        /// Output structure file.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run a bundled demo suite: bm | iu | fghk.
    Demo { name: String },
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let format = cli.format;
    match pool.install(|| dispatch(cli.command, format)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Json(_) | Error::Parse { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn emit<T: Serialize>(format: Format, record: &T, human: impl FnOnce()) -> Result<()> {
    match format {
        Format::Json => {
            println!("{}", serde_json::to_string(record)?);
        }
        Format::Human => human(),
    }
    Ok(())
}

fn dispatch(command: Command, format: Format) -> Result<i32> {
    match command {
        Command::Validate { path } => cmd_validate(&path, format),
        Command::Eval { structure, formula, assign } => {
            cmd_eval(&structure, &formula, &assign, format)
        }
        Command::Dis { left, right, correlation, system } => {
            cmd_dis(&left, &right, &correlation, &system, format)
        }
        Command::Rho { left, right, system, heuristic, anchors, seed, budget, cell_cap, force, .. } => {
            cmd_rho(
                &left, &right, &system, heuristic, &anchors, seed, budget, cell_cap, force,
                format,
            )
        }
        Command::Baf {
            left,
            right,
            system,
            rounds,
            fixpoint,
            k,
            omega,
            shift_increasing,
            dump_table,
        } => cmd_baf(
            &left,
            &right,
            &system,
            rounds,
            fixpoint,
            k,
            &omega,
            shift_increasing,
            dump_table,
            format,
        ),
        Command::Scott { left, right, system, k, omega, shift_increasing } => {
            cmd_scott(&left, &right, &system, k, &omega, shift_increasing, format)
        }
        Command::Embound { banach, scalars, bm_r, system_out, output } => {
            cmd_embound(&banach, &scalars, bm_r.as_deref(), system_out.as_deref(), &output, format)
        }
        Command::Demo { name } => cmd_demo(&name, format),
    }
}

#[derive(Serialize)]
struct ValidateRecord {
    command: &'static str,
    path: String,
    valid: bool,
    violations: Vec<String>,
}

fn cmd_validate(path: &Path, format: Format) -> Result<i32> {
    let s = load_structure(path)?;
    let violations: Vec<String> = s.validate().iter().map(|v| v.to_string()).collect();
    let record = ValidateRecord {
        command: "validate",
        path: path.display().to_string(),
        valid: violations.is_empty(),
        violations,
    };
    emit(format, &record, || {
        if record.valid {
            println!("{}: valid", record.path);
        } else {
            println!("{}: {} violation(s)", record.path, record.violations.len());
            for v in &record.violations {
                println!("  {v}");
            }
        }
    })?;
    Ok(if record.valid { 0 } else { 1 })
}

#[derive(Serialize)]
struct EvalRecord {
    command: &'static str,
    formula: String,
    value: f64,
}

fn cmd_eval(path: &Path, formula: &str, assign: &[String], format: Format) -> Result<i32> {
    let s = load_structure(path)?;
    let sig = s.signature();
    let f = crate::formula::parse(formula, &sig)?;
    let free = f.free_vars(&sig)?;
    let mut binding = Binding::new();
    for entry in assign {
        let (var, point) = entry
            .split_once('=')
            .ok_or_else(|| Error::input(format!("bad assignment '{entry}', want x<N>=point")))?;
        let idx: u32 = var
            .strip_prefix('x')
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| Error::input(format!("bad variable '{var}'")))?;
        let sort_name = free
            .get(&idx)
            .ok_or_else(|| Error::input(format!("variable x{idx} is not free in the formula")))?;
        let si = s
            .sort_index(sort_name)
            .ok_or_else(|| Error::input(format!("unknown sort {sort_name}")))?;
        let pi = s.sorts[si]
            .point_index(point)
            .ok_or_else(|| Error::input(format!("unknown point {point} in {sort_name}")))?;
        binding.set(idx, si, pi);
    }
    let value = evaluate(&f, &s, &binding)?;
    let record = EvalRecord { command: "eval", formula: f.to_string(), value };
    emit(format, &record, || println!("{value}"))?;
    Ok(0)
}

#[derive(Serialize)]
struct DisRecord {
    command: &'static str,
    system: String,
    value: f64,
    witness: Option<crate::distsys::DisWitness>,
    truncation: Truncation,
}

fn cmd_dis(
    left: &Path,
    right: &Path,
    correlation: &Path,
    system: &SystemFlags,
    format: Format,
) -> Result<i32> {
    let l = load_structure(left)?;
    let r = load_structure(right)?;
    let corr = load_correlation(correlation)?;
    let sys = system.resolve(&l)?;
    let report = distortion(&sys, &l, &r, &corr)?;
    let record = DisRecord {
        command: "dis",
        system: sys.name.clone(),
        value: report.value,
        witness: report.witness,
        truncation: report.truncation,
    };
    emit(format, &record, || {
        println!("dis_{}(R) = {}", record.system, record.value);
        if let Some(w) = &record.witness {
            println!("  witness: generator {} = {}", w.generator, w.formula);
            for p in &w.assignment {
                println!("    x{} ({}): {} ~ {}", p.var, p.sort, p.left, p.right);
            }
        }
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct RhoRecord {
    command: &'static str,
    system: String,
    value: f64,
    exact: bool,
    nodes_explored: u64,
    truncation: Truncation,
    witness: crate::structure::Correlation,
}

fn parse_anchors(specs: &[String]) -> Result<Vec<Anchor>> {
    specs
        .iter()
        .map(|a| {
            let parts: Vec<&str> = a.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::input(format!(
                    "bad anchor '{a}', want SORT:LEFT:RIGHT"
                )));
            }
            Ok(Anchor {
                sort: parts[0].to_string(),
                left: parts[1].to_string(),
                right: parts[2].to_string(),
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_rho(
    left: &Path,
    right: &Path,
    system: &SystemFlags,
    heuristic: bool,
    anchors: &[String],
    seed: u64,
    budget: u64,
    cell_cap: usize,
    force: bool,
    format: Format,
) -> Result<i32> {
    let l = load_structure(left)?;
    let r = load_structure(right)?;
    let sys = system.resolve(&l)?;
    let anchors = parse_anchors(anchors)?;
    let result = if heuristic {
        if !anchors.is_empty() {
            return Err(Error::input("anchors require the exact search"));
        }
        rho_heuristic(&sys, &l, &r, budget, seed)?
    } else {
        let opts = SearchOptions { cell_cap, force, heuristic_budget: budget, seed };
        rho_exact(&sys, &l, &r, &anchors, &opts)?
    };
    let record = RhoRecord {
        command: "rho",
        system: sys.name.clone(),
        value: result.value,
        exact: result.exact,
        nodes_explored: result.nodes_explored,
        truncation: result.truncation,
        witness: result.witness,
    };
    emit(format, &record, || {
        let kind = if record.exact { "exact" } else { "upper bound" };
        println!("rho_{}({left:?}, {right:?}) = {} ({kind})", record.system, record.value);
        println!("  nodes explored: {}", record.nodes_explored);
        for rel in &record.witness.relation {
            println!("  witness [{}]:", rel.sort);
            for row in &rel.matrix {
                let bits: String =
                    row.iter().map(|&b| if b { '1' } else { '0' }).collect();
                println!("    {bits}");
            }
        }
    })?;
    Ok(0)
}

fn parse_omega(spec: &str, shift_increasing: bool) -> Result<WeakModulus> {
    let weights = spec
        .split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .map_err(|_| Error::input(format!("bad weight '{w}'")))
        })
        .collect::<Result<Vec<f64>>>()?;
    WeakModulus::new(weights, shift_increasing)
}

#[derive(Serialize)]
struct BafRecord {
    command: &'static str,
    system: String,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stabilized_at: Option<usize>,
    k: usize,
    omega: Vec<f64>,
    truncation: Truncation,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<Vec<crate::backforth::BafRow>>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_baf(
    left: &Path,
    right: &Path,
    system: &SystemFlags,
    rounds: Option<usize>,
    fixpoint: bool,
    k: usize,
    omega_spec: &str,
    shift_increasing: bool,
    dump_table: bool,
    format: Format,
) -> Result<i32> {
    let l = load_structure(left)?;
    let r = load_structure(right)?;
    let sys = system.resolve(&l)?;
    let omega = parse_omega(omega_spec, shift_increasing)?;
    let record = if fixpoint || rounds.is_none() {
        let table = r_infty_capped(&sys, &omega, &l, &r, k)?;
        BafRecord {
            command: "baf",
            system: sys.name.clone(),
            value: table.empty_value(),
            rounds: None,
            stabilized_at: Some(table.stabilized_at),
            k,
            omega: omega.weights.clone(),
            truncation: sys.truncation.clone(),
            table: dump_table.then(|| table.dump()),
        }
    } else {
        let rounds = rounds.expect("checked");
        let value = r_finite(&sys, &omega, &l, &r, rounds)?;
        BafRecord {
            command: "baf",
            system: sys.name.clone(),
            value,
            rounds: Some(rounds),
            stabilized_at: None,
            k: rounds,
            omega: omega.weights.clone(),
            truncation: sys.truncation.clone(),
            table: None,
        }
    };
    emit(format, &record, || {
        match record.rounds {
            Some(n) => println!("r_{n}({left:?}, {right:?}) = {}", record.value),
            None => println!(
                "r_infty[k={}]({left:?}, {right:?}) = {} (stabilized at {})",
                record.k,
                record.value,
                record.stabilized_at.unwrap_or_default()
            ),
        }
        if let Some(rows) = &record.table {
            for row in rows {
                println!(
                    "  alpha={} ({}) ~ ({}) = {}",
                    row.alpha,
                    row.left.join(","),
                    row.right.join(","),
                    row.value
                );
            }
        }
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct ScottRecord {
    command: &'static str,
    system: String,
    rank: usize,
    value: f64,
    k: usize,
    omega: Vec<f64>,
}

fn cmd_scott(
    left: &Path,
    right: &Path,
    system: &SystemFlags,
    k: usize,
    omega_spec: &str,
    shift_increasing: bool,
    format: Format,
) -> Result<i32> {
    let l = load_structure(left)?;
    let r = load_structure(right)?;
    let sys = system.resolve(&l)?;
    let omega = parse_omega(omega_spec, shift_increasing)?;
    let table = r_infty_capped(&sys, &omega, &l, &r, k)?;
    let record = ScottRecord {
        command: "scott",
        system: sys.name.clone(),
        rank: scott_rank_capped(&table),
        value: table.empty_value(),
        k,
        omega: omega.weights.clone(),
    };
    emit(format, &record, || {
        println!("scott rank (k={}) = {}, value {}", record.k, record.rank, record.value);
    })?;
    Ok(0)
}

fn parse_scalars(spec: &str) -> Result<Vec<Complex64>> {
    spec.split(',')
        .map(|raw| {
            let raw = raw.trim();
            if raw == "i" {
                return Ok(Complex64::new(0.0, 1.0));
            }
            raw.parse::<f64>()
                .map(|re| Complex64::new(re, 0.0))
                .map_err(|_| Error::input(format!("bad scalar '{raw}'")))
        })
        .collect()
}

#[derive(Serialize)]
struct EmboundRecord {
    command: &'static str,
    output: String,
    points: usize,
    predicates: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    system_out: Option<String>,
}

fn cmd_embound(
    banach: &Path,
    scalars: &str,
    bm_r: Option<&str>,
    system_out: Option<&Path>,
    output: &Path,
    format: Format,
) -> Result<i32> {
    let b = load_banach(banach)?;
    let scalars = parse_scalars(scalars)?;
    let mut emb = embound(&b, &scalars)?;
    let mut system_path = None;
    if let Some(spec) = bm_r {
        let r_values = spec
            .split(',')
            .map(|r| {
                r.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::input(format!("bad r value '{r}'")))
            })
            .collect::<Result<Vec<u32>>>()?;
        let sys = bm_generators(&mut emb, &r_values, &scalars)?;
        if let Some(path) = system_out {
            let spec = SystemSpec {
                name: sys.name.clone(),
                builtin: None,
                truncation: sys.truncation.clone(),
                generators: sys.generators.iter().map(|g| g.to_string()).collect(),
            };
            std::fs::write(path, serde_json::to_string_pretty(&spec)?)?;
            system_path = Some(path.display().to_string());
        }
    }
    save_structure(&emb.structure, output)?;
    let record = EmboundRecord {
        command: "embound",
        output: output.display().to_string(),
        points: emb.structure.sorts[0].len(),
        predicates: emb.structure.predicates.iter().map(|p| p.name.clone()).collect(),
        system_out: system_path,
    };
    emit(format, &record, || {
        println!(
            "wrote {} ({} points, {} predicates)",
            record.output,
            record.points,
            record.predicates.len()
        );
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct DemoCheck {
    name: String,
    pass: bool,
    detail: String,
}

#[derive(Serialize)]
struct DemoRecord {
    command: &'static str,
    name: String,
    pass: bool,
    checks: Vec<DemoCheck>,
}

fn cmd_demo(name: &str, format: Format) -> Result<i32> {
    let checks = match name {
        "iu" => demo_iu()?,
        "bm" => demo_bm()?,
        "fghk" => demo_fghk()?,
        other => return Err(Error::input(format!("unknown demo '{other}'"))),
    };
    let record = DemoRecord {
        command: "demo",
        name: name.to_string(),
        pass: checks.iter().all(|c| c.pass),
        checks,
    };
    emit(format, &record, || {
        for c in &record.checks {
            println!("{}: {} ({})", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
        }
        println!("demo {}: {}", record.name, if record.pass { "PASS" } else { "FAIL" });
    })?;
    Ok(if record.pass { 0 } else { 1 })
}

fn demo_iu() -> Result<Vec<DemoCheck>> {
    let report = disjoint_union_demo(3, 3)?;
    let mut checks = Vec::new();
    for row in &report.shifts {
        checks.push(DemoCheck {
            name: format!("shift correlation k={}", row.k),
            pass: row.within_bound,
            detail: format!("dis_iu {} <= {} + {}", row.dis_iu, row.bound, row.slack),
        });
    }
    for row in &report.divergence {
        checks.push(DemoCheck {
            name: format!("divergence n_max={}", row.n_max),
            pass: row.diverges,
            detail: format!("rho {} >= {}", row.rho, row.lower_bound),
        });
    }
    Ok(checks)
}

fn demo_bm() -> Result<Vec<DemoCheck>> {
    let mut checks = Vec::new();
    let eps = 0.2f64;
    let scale = (eps / 2.0).exp();
    let matrix = vec![vec![scale, 0.0], vec![0.0, scale]];
    for norm in [Norm::L1, Norm::L2, Norm::Linf] {
        let label = match norm {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
            Norm::Weighted(_) => unreachable!(),
        };
        let b = radial_grid(norm, -1, 1);
        let image = image_space(&b, &matrix)?;
        let mut left = embound(&b, &[])?;
        let mut right = embound(&image, &[])?;
        let sys = bm_generators(&mut left, &[1, 2, 3, 4], &[])?;
        bm_generators(&mut right, &[1, 2, 3, 4], &[])?;
        let (corr, residual) = linear_map_correlation(&left, &right, &matrix)?;
        let dis = distortion(&sys, &left.structure, &right.structure, &corr)?.value;
        checks.push(DemoCheck {
            name: format!("embound-cor (<=) on {label}"),
            pass: residual < 1e-9 && dis <= eps + 1e-9,
            detail: format!("dis {dis} <= eps {eps}, residual {residual}"),
        });
    }
    Ok(checks)
}

fn demo_fghk() -> Result<Vec<DemoCheck>> {
    let mut checks = Vec::new();
    // Weight of a [0,1]-valued predicate at index 0 is 1/(2^0 * 2) = 1/2.
    let j = crate::pathology::make_j(&[0.0, 0.25, 0.5, 1.0], 0.2)?;
    let sys = builtin(Builtin::Fghk, &j.signature(), Truncation::default())?;
    let weight_ok = sys
        .generators
        .iter()
        .any(|g| g.to_string() == "(scale 0.5 (pred U x0))");
    checks.push(DemoCheck {
        name: "fghk weight on [0,1] predicate".into(),
        pass: weight_ok,
        detail: "expected generator (scale 0.5 (pred U x0))".into(),
    });
    for (i, eps) in [0.2, 0.35, 0.5].iter().enumerate() {
        let grid: Vec<f64> = (0..4).map(|p| f64::from(p) / 4.0).collect();
        let s = crate::pathology::make_j(&grid, *eps)?;
        let sys = builtin(Builtin::Fghk, &s.signature(), Truncation::default())?;
        let res = check_atomic_completeness(&sys, &s)?;
        checks.push(DemoCheck {
            name: format!("fghk atomic completeness #{i}"),
            pass: res.complete,
            detail: match &res.counterexample {
                None => "no indistinguishable tuple pair".into(),
                Some(ce) => format!("counterexample on {}", ce.atomic),
            },
        });
    }
    Ok(checks)
}
