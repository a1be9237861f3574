//! End-to-end experiment driver: level sweep × subdomain counts, with
//! continuation of initial guesses between levels and table emission.
//!
//! Each (level, J) cell runs the full active-set solve and reports the
//! arithmetic mean of the per-inner-solve condition estimates and the wall
//! time of the solve loop (preconditioner setup included, assembly not).
//! Cells proceed level by level within a fixed J; the starting guess is the
//! previous level's state interpolated upward, reset to zero where the grid
//! has exactly one patch per subdomain (2^{2ℓ} = J). Cells with √J > 2^ℓ
//! have no admissible block partition and are emitted as "-".

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::assembly::{
    assemble_load, assemble_stiffness, build_quadrature, obstacle_vector, ProblemData,
    DEFAULT_QUADRATURE_ORDER,
};
use crate::expr::Expr;
use crate::pdas::{pdas_solve, ActiveState, InnerConfig};
use crate::pum::{Domain, PatchGrid};
use crate::schwarz::{FactorCache, Overlap, PrecondSpec};
use crate::sparse::SparseMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondMode {
    None,
    OneLevel,
    TwoLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

/// Full description of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub beta: f64,
    pub c: f64,
    pub tol: f64,
    pub f: Expr,
    pub psi: Expr,
    pub levels: Vec<u32>,
    pub subdomains: Vec<u32>,
    pub overlap: Overlap,
    pub precond: PrecondMode,
    pub format: Format,
    pub deterministic: bool,
    /// Worker threads for subdomain solves; 0 keeps the pool default.
    pub threads: usize,
    /// Inner iteration cap; None defaults to 20 × unknowns.
    pub max_iter: Option<usize>,
    pub trace: Option<PathBuf>,
}

/// The model configuration; levels 1..4 with J ∈ {4, 16}, unpreconditioned.
impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            domain: Domain::unit_centered(),
            beta: 0.1,
            c: 1e8,
            tol: 1e-15,
            f: Expr::parse("10*(sin(2*pi*(x1+0.5)) + (x2+0.5))").expect("model source"),
            psi: Expr::parse("0.01").expect("model obstacle"),
            levels: (1..=4).collect(),
            subdomains: vec![4, 16],
            overlap: Overlap::Small,
            precond: PrecondMode::None,
            format: Format::Markdown,
            deterministic: false,
            threads: 0,
            max_iter: None,
            trace: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 || self.c <= 0.0 || self.tol <= 0.0 {
            return Err(Error::Config {
                line: 0,
                message: "beta, c and tol must be positive".into(),
            });
        }
        for &l in &self.levels {
            if l < 1 {
                return Err(Error::InvalidLevel(l as i64));
            }
            if l > 6 {
                log::warn!("level {l} is long-running at desk scale");
            }
        }
        for &j in &self.subdomains {
            let s = (j as f64).sqrt().round() as u32;
            if j == 0 || s * s != j {
                return Err(Error::NotPerfectSquare(j));
            }
        }
        Ok(())
    }

    pub fn problem_data(&self) -> Result<ProblemData> {
        let f = self.f.clone();
        let psi = self.psi.clone();
        ProblemData::new(
            self.beta,
            self.domain,
            move |x, y| f.eval(x, y),
            move |x, y| psi.eval(x, y),
        )
    }
}

/// Partial settings from a config file or command line; unset fields leave
/// the target untouched.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub domain: Option<Domain>,
    pub beta: Option<f64>,
    pub c: Option<f64>,
    pub tol: Option<f64>,
    pub f: Option<Expr>,
    pub psi: Option<Expr>,
    pub level_min: Option<u32>,
    pub level_max: Option<u32>,
    pub subdomains: Option<Vec<u32>>,
    pub overlap: Option<Overlap>,
    pub precond: Option<PrecondMode>,
    pub format: Option<Format>,
    pub deterministic: Option<bool>,
    pub threads: Option<usize>,
    pub max_iter: Option<usize>,
    pub trace: Option<PathBuf>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(d) = self.domain {
            cfg.domain = d;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.c {
            cfg.c = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(e) = &self.f {
            cfg.f = e.clone();
        }
        if let Some(e) = &self.psi {
            cfg.psi = e.clone();
        }
        if self.level_min.is_some() || self.level_max.is_some() {
            let lo = self.level_min.unwrap_or_else(|| cfg.levels.iter().copied().min().unwrap_or(1));
            let hi = self.level_max.unwrap_or_else(|| cfg.levels.iter().copied().max().unwrap_or(lo));
            cfg.levels = (lo..=hi).collect();
        }
        if let Some(j) = &self.subdomains {
            cfg.subdomains = j.clone();
        }
        if let Some(o) = self.overlap {
            cfg.overlap = o;
        }
        if let Some(p) = self.precond {
            cfg.precond = p;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if let Some(d) = self.deterministic {
            cfg.deterministic = d;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(m) = self.max_iter {
            cfg.max_iter = Some(m);
        }
        if let Some(t) = &self.trace {
            cfg.trace = Some(t.clone());
        }
    }
}

pub fn parse_overlap(s: &str) -> Option<Overlap> {
    match s {
        "small" => Some(Overlap::Small),
        "generous" => Some(Overlap::Generous),
        _ => None,
    }
}

pub fn parse_precond(s: &str) -> Option<PrecondMode> {
    match s {
        "none" => Some(PrecondMode::None),
        "one-level" => Some(PrecondMode::OneLevel),
        "two-level" => Some(PrecondMode::TwoLevel),
        _ => None,
    }
}

pub fn parse_format(s: &str) -> Option<Format> {
    match s {
        "csv" => Some(Format::Csv),
        "markdown" => Some(Format::Markdown),
        _ => None,
    }
}

/// Parse a line-oriented `key = value` config text. Keys mirror the command
/// line flags; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<ConfigOverrides> {
    let mut over = ConfigOverrides::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected key = value, got '{stripped}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |message: String| Error::Config { line, message };
        match key {
            "domain" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("domain: {e}")))?;
                if parts.len() != 4 {
                    return Err(bad("domain needs 4 comma-separated numbers".into()));
                }
                if parts[0] >= parts[2] || parts[1] >= parts[3] {
                    return Err(bad("domain corners must be ordered".into()));
                }
                over.domain = Some(Domain::new([parts[0], parts[1]], [parts[2], parts[3]]));
            }
            "beta" => over.beta = Some(value.parse().map_err(|e| bad(format!("beta: {e}")))?),
            "c" => over.c = Some(value.parse().map_err(|e| bad(format!("c: {e}")))?),
            "tol" => over.tol = Some(value.parse().map_err(|e| bad(format!("tol: {e}")))?),
            "f" => over.f = Some(Expr::parse(value).map_err(|e| bad(format!("f: {e}")))?),
            "psi" => over.psi = Some(Expr::parse(value).map_err(|e| bad(format!("psi: {e}")))?),
            "level_min" => {
                over.level_min =
                    Some(value.parse().map_err(|e| bad(format!("level_min: {e}")))?)
            }
            "level_max" => {
                over.level_max =
                    Some(value.parse().map_err(|e| bad(format!("level_max: {e}")))?)
            }
            "subdomains" => {
                let list: Vec<u32> = value
                    .split(',')
                    .map(|p| p.trim().parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("subdomains: {e}")))?;
                over.subdomains = Some(list);
            }
            "overlap" => {
                over.overlap =
                    Some(parse_overlap(value).ok_or_else(|| {
                        bad(format!("overlap must be small or generous, got '{value}'"))
                    })?)
            }
            "precond" => {
                over.precond = Some(parse_precond(value).ok_or_else(|| {
                    bad(format!("precond must be none, one-level or two-level, got '{value}'"))
                })?)
            }
            "format" => {
                over.format = Some(parse_format(value).ok_or_else(|| {
                    bad(format!("format must be csv or markdown, got '{value}'"))
                })?)
            }
            "deterministic" => {
                over.deterministic = Some(match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(bad("deterministic must be true or false".into())),
                })
            }
            "threads" => {
                over.threads = Some(value.parse().map_err(|e| bad(format!("threads: {e}")))?)
            }
            "max_iter" => {
                over.max_iter =
                    Some(value.parse().map_err(|e| bad(format!("max_iter: {e}")))?)
            }
            "trace" => over.trace = Some(PathBuf::from(value)),
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
    }
    Ok(over)
}

pub fn parse_config_file(path: &std::path::Path) -> Result<ConfigOverrides> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFlag {
    Value,
    Dnc,
    Blank,
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TableReport {
    pub level: u32,
    pub j: Option<u32>,
    pub kappa: Option<f64>,
    pub time_s: Option<f64>,
    pub flag: CellFlag,
}

/// One inner solve as logged to the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub level: u32,
    pub j: Option<u32>,
    pub outer: usize,
    pub active: usize,
    pub iterations: usize,
    pub kappa: f64,
    pub seconds: f64,
}

/// Reports plus the per-solve trace behind them.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<TableReport>,
    pub trace: Vec<TraceRecord>,
}

impl ExperimentOutcome {
    pub fn any_dnc(&self) -> bool {
        self.reports.iter().any(|r| r.flag == CellFlag::Dnc)
    }
}

struct LevelData {
    grid: PatchGrid,
    a: SparseMatrix,
    b: Vec<f64>,
    psi: Vec<f64>,
}

fn prepare_level(level: u32, data: &ProblemData) -> Result<LevelData> {
    let grid = PatchGrid::build(level, data.domain)?;
    let quad = build_quadrature(&grid, DEFAULT_QUADRATURE_ORDER);
    let a = assemble_stiffness(&grid, data, &quad)?;
    let b = assemble_load(&grid, data, &quad);
    let psi = obstacle_vector(&grid, data);
    Ok(LevelData { grid, a, b, psi })
}

/// Level chain for one J column (or the unpreconditioned sweep, j = None).
#[allow(clippy::too_many_arguments)]
fn run_chain(
    config: &ExperimentConfig,
    levels: &[u32],
    level_data: &[LevelData],
    j: Option<u32>,
    reports: &mut Vec<TableReport>,
    trace: &mut Vec<TraceRecord>,
) -> Result<()> {
    let mut prev: Option<(usize, Vec<f64>)> = None;
    for (li, &level) in levels.iter().enumerate() {
        if let Some(jv) = j {
            let sqrt_j = (jv as f64).sqrt().round() as u64;
            if sqrt_j > 1u64 << level {
                reports.push(TableReport {
                    level,
                    j,
                    kappa: None,
                    time_s: None,
                    flag: CellFlag::Blank,
                });
                continue;
            }
        }
        let ld = &level_data[li];
        let dim = ld.a.dim();
        let diagonal = j.map_or(false, |jv| u64::from(jv) == 1u64 << (2 * level));

        let initial = match (&prev, diagonal) {
            (Some((pi, py)), false) => {
                let y0 = ld.grid.interpolate_coarse(&level_data[*pi].grid, py)?;
                let ay = ld.a.matvec_alloc(&y0);
                let lambda0: Vec<f64> =
                    ld.b.iter().zip(&ay).map(|(b, a)| (b - a).max(0.0)).collect();
                ActiveState { y: y0, lambda: lambda0, active: Vec::new() }
            }
            _ => ActiveState::cold(dim),
        };

        let spec = match (config.precond, j) {
            (PrecondMode::None, _) | (_, None) => PrecondSpec::None,
            (PrecondMode::OneLevel, Some(jv)) => {
                PrecondSpec::OneLevel { j: jv, overlap: config.overlap }
            }
            (PrecondMode::TwoLevel, Some(jv)) => {
                if diagonal {
                    // One patch per subdomain: the coarse space coincides with
                    // the fine space, so the one-level operator is used.
                    PrecondSpec::OneLevel { j: jv, overlap: config.overlap }
                } else if jv < 4 {
                    log::warn!("J = {jv} has no coarse level; using one-level");
                    PrecondSpec::OneLevel { j: jv, overlap: config.overlap }
                } else {
                    PrecondSpec::TwoLevel { j: jv, overlap: config.overlap }
                }
            }
        };

        let mut cache = FactorCache::new();
        let mut inner = InnerConfig {
            grid: &ld.grid,
            precond: spec,
            tol: config.tol,
            max_iter: config.max_iter,
            parallel: !config.deterministic,
            cache: &mut cache,
        };
        let started = Instant::now();
        match pdas_solve(&ld.a, &ld.b, &ld.psi, config.c, &initial, &mut inner) {
            Ok((state, records)) => {
                let time_s = started.elapsed().as_secs_f64();
                let kappa = if records.is_empty() {
                    // Every node pinned to the obstacle: no system was solved.
                    None
                } else {
                    Some(records.iter().map(|r| r.report.kappa).sum::<f64>() / records.len() as f64)
                };
                for (outer, rec) in records.iter().enumerate() {
                    trace.push(TraceRecord {
                        level,
                        j,
                        outer,
                        active: rec.active_count,
                        iterations: rec.report.iterations,
                        kappa: rec.report.kappa,
                        seconds: rec.report.seconds,
                    });
                }
                reports.push(TableReport {
                    level,
                    j,
                    kappa,
                    time_s: Some(time_s),
                    flag: CellFlag::Value,
                });
                prev = Some((li, state.y));
            }
            Err(Error::InnerSolveDiverged { iterations, residual }) => {
                log::warn!(
                    "level {level}, J {j:?}: no convergence in {iterations} iterations \
                     (residual {residual:.3e})"
                );
                reports.push(TableReport {
                    level,
                    j,
                    kappa: None,
                    time_s: None,
                    flag: CellFlag::Dnc,
                });
                prev = None;
            }
            Err(Error::OuterIterationCap { .. }) => {
                log::warn!("level {level}, J {j:?}: active set did not settle");
                reports.push(TableReport {
                    level,
                    j,
                    kappa: None,
                    time_s: None,
                    flag: CellFlag::Dnc,
                });
                prev = None;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Run the configured sweep and return every cell plus the solve trace.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut levels = config.levels.clone();
    levels.sort_unstable();
    levels.dedup();

    let mut outcome = ExperimentOutcome { reports: Vec::new(), trace: Vec::new() };
    if levels.is_empty() {
        return Ok(outcome);
    }

    let data = config.problem_data()?;
    let level_data: Vec<LevelData> =
        levels.iter().map(|&l| prepare_level(l, &data)).collect::<Result<_>>()?;

    match config.precond {
        PrecondMode::None => {
            run_chain(config, &levels, &level_data, None, &mut outcome.reports, &mut outcome.trace)?;
        }
        _ => {
            for &j in &config.subdomains {
                run_chain(
                    config,
                    &levels,
                    &level_data,
                    Some(j),
                    &mut outcome.reports,
                    &mut outcome.trace,
                )?;
            }
        }
    }
    outcome.reports.sort_by_key(|r| (r.level, r.j));

    if let Some(path) = &config.trace {
        write_trace(path, &outcome.trace)?;
    }
    Ok(outcome)
}

pub fn write_trace(path: &std::path::Path, trace: &[TraceRecord]) -> Result<()> {
    let mut text = String::from("level,J,outer,active,iterations,kappa,seconds\n");
    for t in trace {
        let j = t.j.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            t.level, j, t.outer, t.active, t.iterations, t.kappa, t.seconds
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn fmt_cell(value: Option<f64>, flag: CellFlag, scientific: bool) -> String {
    match flag {
        CellFlag::Blank => "-".to_string(),
        CellFlag::Dnc => "DNC".to_string(),
        CellFlag::Value => {
            let v = value.expect("value cell");
            if scientific {
                format!("{v:.4e}")
            } else {
                format!("{v:.3}")
            }
        }
    }
}

/// Render the reports in the requested format.
pub fn emit_table(reports: &[TableReport], format: Format) -> String {
    match format {
        Format::Csv => emit_csv(reports),
        Format::Markdown => emit_markdown(reports),
    }
}

fn emit_csv(reports: &[TableReport]) -> String {
    let mut out = String::from("level,J,kappa,time,flag\n");
    for r in reports {
        let j = r.j.map_or("-".to_string(), |v| v.to_string());
        let kappa = r.kappa.map_or(String::new(), |v| v.to_string());
        let time = r.time_s.map_or(String::new(), |v| v.to_string());
        let flag = match r.flag {
            CellFlag::Value => "value",
            CellFlag::Dnc => "DNC",
            CellFlag::Blank => "blank",
        };
        let _ = writeln!(out, "{},{},{},{},{}", r.level, j, kappa, time, flag);
    }
    out
}

/// Parse text produced by the CSV emitter back into reports.
pub fn parse_csv(text: &str) -> Result<Vec<TableReport>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "level,J,kappa,time,flag")) => {}
        other => {
            return Err(Error::Config {
                line: 1,
                message: format!("bad csv header: {:?}", other.map(|(_, l)| l)),
            })
        }
    }
    let mut reports = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Config {
                line: idx + 1,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let bad = |message: String| Error::Config { line: idx + 1, message };
        let level: u32 = fields[0].parse().map_err(|e| bad(format!("level: {e}")))?;
        let j = match fields[1] {
            "-" => None,
            s => Some(s.parse::<u32>().map_err(|e| bad(format!("J: {e}")))?),
        };
        let parse_opt = |s: &str, name: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse::<f64>().map_err(|e| bad(format!("{name}: {e}")))?))
            }
        };
        let kappa = parse_opt(fields[2], "kappa")?;
        let time_s = parse_opt(fields[3], "time")?;
        let flag = match fields[4] {
            "value" => CellFlag::Value,
            "DNC" => CellFlag::Dnc,
            "blank" => CellFlag::Blank,
            other => return Err(bad(format!("unknown flag '{other}'"))),
        };
        reports.push(TableReport { level, j, kappa, time_s, flag });
    }
    Ok(reports)
}

fn emit_markdown(reports: &[TableReport]) -> String {
    let mut levels: Vec<u32> = reports.iter().map(|r| r.level).collect();
    levels.sort_unstable();
    levels.dedup();
    let mut js: Vec<Option<u32>> = reports.iter().map(|r| r.j).collect();
    js.sort_unstable();
    js.dedup();

    let cell = |level: u32, j: Option<u32>| reports.iter().find(|r| r.level == level && r.j == j);

    if js == [None] {
        // Single sweep: one combined table.
        let mut out = String::from("| level | kappa | time (s) |\n|---|---|---|\n");
        for &l in &levels {
            let r = cell(l, None).expect("cell present");
            let _ = writeln!(
                out,
                "| {l} | {} | {} |",
                fmt_cell(r.kappa, r.flag, true),
                fmt_cell(r.time_s, r.flag, false)
            );
        }
        return out;
    }

    let header = |out: &mut String| {
        out.push_str("| level |");
        for j in &js {
            match j {
                Some(v) => {
                    let _ = write!(out, " J={v} |");
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &js {
            out.push_str("---|");
        }
        out.push('\n');
    };

    let mut out = String::from("**Average condition number**\n\n");
    header(&mut out);
    for &l in &levels {
        let _ = write!(out, "| {l} |");
        for &j in &js {
            let text = match cell(l, j) {
                Some(r) => fmt_cell(r.kappa, r.flag, true),
                None => "-".to_string(),
            };
            let _ = write!(out, " {text} |");
        }
        out.push('\n');
    }
    out.push_str("\n**Solve time (s)**\n\n");
    header(&mut out);
    for &l in &levels {
        let _ = write!(out, "| {l} |");
        for &j in &js {
            let text = match cell(l, j) {
                Some(r) => fmt_cell(r.time_s, r.flag, false),
                None => "-".to_string(),
            };
            let _ = write!(out, " {text} |");
        }
        out.push('\n');
    }
    out
}
