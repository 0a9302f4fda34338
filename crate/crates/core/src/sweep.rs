//! Parameter sweeps over `(c, u0_mean)` grids, the NE vs MLF-NE comparison
//! and their CSV formats.
//!
//! Reals are written with 12 significant digits. Output only depends on the
//! spec, never on thread scheduling: rows are sorted before emission.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};
use crate::mlfne::solve_mlfne;
use crate::model::EquilibriumKind;
use crate::ne::{solve_ne, DEFAULT_TOL};
use crate::params::{InitialDistribution, ModelParams, MIN_UNIT_COST};

pub const ROWS_HEADER: [&str; 9] = [
    "kind", "c", "u0_mean", "u1", "u2", "mu_bar", "cost1", "cost2", "residual",
];
pub const SUMMARY_HEADER: [&str; 8] = [
    "c", "u0_mean", "du1", "du2", "dcost1", "dcost2", "dmu", "leader_flip",
];
pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub c_values: Vec<f64>,
    pub u0_means: Vec<f64>,
    pub kinds: Vec<EquilibriumKind>,
    pub tol: f64,
    pub include_costs: bool,
}

/// `10^(-2 + k/4)` for `k = 0..=12`: 0.01 to 10, including 0.1 and 1.
pub fn default_c_grid() -> Vec<f64> {
    (0..=12).map(|k| 10f64.powf(-2.0 + k as f64 / 4.0)).collect()
}

/// 0, 0.1, ..., 1.
pub fn default_u0_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            c_values: default_c_grid(),
            u0_means: default_u0_grid(),
            kinds: vec![EquilibriumKind::Ne, EquilibriumKind::Mlfne],
            tol: DEFAULT_TOL,
            include_costs: true,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_input!(!self.c_values.is_empty(), "c grid is empty");
        ensure_input!(!self.u0_means.is_empty(), "u0 grid is empty");
        ensure_input!(!self.kinds.is_empty(), "no equilibrium kinds requested");
        for &c in &self.c_values {
            ensure_input!(c.is_finite() && c >= MIN_UNIT_COST, "unit cost c must be >= {MIN_UNIT_COST}, got {c}");
        }
        for &m in &self.u0_means {
            ensure_input!((0.0..=1.0).contains(&m), "u0_mean must lie in [0, 1], got {m}");
        }
        ensure_input!(self.tol > 0.0 && self.tol.is_finite(), "tolerance must be positive, got {}", self.tol);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: EquilibriumKind,
    pub c: f64,
    pub u0_mean: f64,
    pub u1: f64,
    pub u2: f64,
    pub mu_bar: f64,
    /// Firm costs at the equilibrium share; absent when costs were not requested.
    pub cost1: Option<f64>,
    pub cost2: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub kind: EquilibriumKind,
    pub c: f64,
    pub u0_mean: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Solves one grid point with canonical parameters and a mean-only law.
pub fn solve_point(kind: EquilibriumKind, c: f64, u0_mean: f64, tol: f64, include_costs: bool) -> Result<SweepRow> {
    let params = ModelParams::canonical(c);
    let eq = match kind {
        EquilibriumKind::Ne => solve_ne(&params, &InitialDistribution::mean_only(u0_mean)?, tol)?,
        EquilibriumKind::Mlfne => solve_mlfne(&params, u0_mean, tol)?,
    };
    let (cost1, cost2) = if include_costs {
        let (a, b) = eq.firm_costs(&params);
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(SweepRow {
        kind,
        c,
        u0_mean,
        u1: eq.u1,
        u2: eq.u2,
        mu_bar: eq.mu_bar,
        cost1,
        cost2,
        residual: eq.max_residual(),
    })
}

/// Solves every `(kind, c, u0_mean)` point. Failed points are collected in
/// [`SweepResult::failures`] and do not stop the run. Rows come out ordered
/// by kind, then `c`, then `u0_mean`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let mut points = Vec::new();
    for &kind in &spec.kinds {
        for &c in &spec.c_values {
            for &m in &spec.u0_means {
                points.push((kind, c, m));
            }
        }
    }
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    points.dedup();
    let outcomes: Vec<_> = points
        .par_iter()
        .map(|&(kind, c, m)| (kind, c, m, solve_point(kind, c, m, spec.tol, spec.include_costs)))
        .collect();
    let mut result = SweepResult::default();
    for (kind, c, u0_mean, outcome) in outcomes {
        match outcome {
            Ok(row) => result.rows.push(row),
            Err(e) => result.failures.push(SweepFailure {
                kind,
                c,
                u0_mean,
                message: e.to_string(),
            }),
        }
    }
    Ok(result)
}

/// NE minus MLF-NE at one `(c, u0_mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub c: f64,
    pub u0_mean: f64,
    pub du1: f64,
    pub du2: f64,
    pub dcost1: Option<f64>,
    pub dcost2: Option<f64>,
    pub dmu: f64,
    /// The MLF-NE share sits on the other side of 1/2 from the initial share.
    pub leader_flip: bool,
}

fn side(x: f64) -> i8 {
    if x > 0.5 {
        1
    } else if x < 0.5 {
        -1
    } else {
        0
    }
}

/// Pairs NE and MLF-NE rows by `(c, u0_mean)`; output is ordered by `c`, then `u0_mean`.
pub fn compare_report(rows: &[SweepRow]) -> Result<Vec<ComparisonRow>> {
    let key = |r: &SweepRow| (r.c.to_bits(), r.u0_mean.to_bits());
    let mut ne = std::collections::BTreeMap::new();
    let mut ml = std::collections::BTreeMap::new();
    for r in rows {
        let map = match r.kind {
            EquilibriumKind::Ne => &mut ne,
            EquilibriumKind::Mlfne => &mut ml,
        };
        if map.insert(key(r), r).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate {} row at c={}, u0_mean={}",
                r.kind, r.c, r.u0_mean
            )));
        }
    }
    for (map, other, kind) in [(&ne, &ml, EquilibriumKind::Mlfne), (&ml, &ne, EquilibriumKind::Ne)] {
        if let Some(r) = map.keys().find(|k| !other.contains_key(*k)).map(|k| map[k]) {
            return Err(Error::InvalidInput(format!(
                "{} row at c={}, u0_mean={} has no {kind} partner",
                r.kind, r.c, r.u0_mean
            )));
        }
    }
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    let mut out: Vec<ComparisonRow> = ne
        .iter()
        .map(|(k, a)| {
            let b = ml[k];
            ComparisonRow {
                c: a.c,
                u0_mean: a.u0_mean,
                du1: a.u1 - b.u1,
                du2: a.u2 - b.u2,
                dcost1: diff(a.cost1, b.cost1),
                dcost2: diff(a.cost2, b.cost2),
                dmu: a.mu_bar - b.mu_bar,
                leader_flip: a.u0_mean != 0.5 && side(b.mu_bar) != side(a.u0_mean),
            }
        })
        .collect();
    out.sort_by(|a, b| a.c.total_cmp(&b.c).then(a.u0_mean.total_cmp(&b.u0_mean)));
    Ok(out)
}

/// `x` rounded to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Shortest text that reads back as `round_sig(x)`.
pub fn format_real(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        return "0".to_string();
    }
    let a = r.abs();
    if (1e-5..1e15).contains(&a) || !a.is_finite() {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_real).unwrap_or_default()
}

fn write_records<W: Write>(w: W, header: &[&str], records: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(header)?;
    for rec in records {
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    write_records(
        w,
        &ROWS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.kind.as_str().to_string(),
                format_real(r.c),
                format_real(r.u0_mean),
                format_real(r.u1),
                format_real(r.u2),
                format_real(r.mu_bar),
                format_opt(r.cost1),
                format_opt(r.cost2),
                format_real(r.residual),
            ]
        }),
    )
}

pub fn write_summary_csv<W: Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    write_records(
        w,
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            vec![
                format_real(r.c),
                format_real(r.u0_mean),
                format_real(r.du1),
                format_real(r.du2),
                format_opt(r.dcost1),
                format_opt(r.dcost2),
                format_real(r.dmu),
                r.leader_flip.to_string(),
            ]
        }),
    )
}

fn emit_to_path(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn emit_rows_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    emit_to_path(path.as_ref(), |b| write_rows_csv(rows, b))
}

pub fn emit_summary_csv(rows: &[ComparisonRow], path: impl AsRef<Path>) -> Result<()> {
    emit_to_path(path.as_ref(), |b| write_summary_csv(rows, b))
}

fn parse_f64(field: &str, name: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("line {line}: column {name} is not a number: `{field}`")))
}

fn parse_opt(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name, line).map(Some)
    }
}

fn read_records<R: Read, T>(
    r: R,
    header: &[&str],
    mut parse: impl FnMut(&csv::StringRecord, u64) -> Result<T>,
) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(r);
    let found: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    ensure_input!(
        found.iter().map(String::as_str).eq(header.iter().copied()),
        "unexpected CSV header {found:?}, expected {header:?}"
    );
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(parse(&rec, line)?);
    }
    Ok(out)
}

pub fn read_rows_csv<R: Read>(r: R) -> Result<Vec<SweepRow>> {
    read_records(r, &ROWS_HEADER, |rec, line| {
        let f = |i: usize| parse_f64(&rec[i], ROWS_HEADER[i], line);
        Ok(SweepRow {
            kind: rec[0].parse()?,
            c: f(1)?,
            u0_mean: f(2)?,
            u1: f(3)?,
            u2: f(4)?,
            mu_bar: f(5)?,
            cost1: parse_opt(&rec[6], "cost1", line)?,
            cost2: parse_opt(&rec[7], "cost2", line)?,
            residual: f(8)?,
        })
    })
}

pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<ComparisonRow>> {
    read_records(r, &SUMMARY_HEADER, |rec, line| {
        let f = |i: usize| parse_f64(&rec[i], SUMMARY_HEADER[i], line);
        let leader_flip = match rec[7].trim() {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::InvalidInput(format!(
                    "line {line}: leader_flip must be true or false, got `{other}`"
                )))
            }
        };
        Ok(ComparisonRow {
            c: f(0)?,
            u0_mean: f(1)?,
            du1: f(2)?,
            du2: f(3)?,
            dcost1: parse_opt(&rec[4], "dcost1", line)?,
            dcost2: parse_opt(&rec[5], "dcost2", line)?,
            dmu: f(6)?,
            leader_flip,
        })
    })
}

pub fn parse_rows_csv_path(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows_csv(std::io::BufReader::new(file))
}

pub fn parse_summary_csv_path(path: impl AsRef<Path>) -> Result<Vec<ComparisonRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_summary_csv(std::io::BufReader::new(file))
}

/// Parses a grid argument: `default`, a comma list, `lin:a:b:n` or `log:a:b:n`.
/// `default` yields `default_grid`.
pub fn parse_grid(text: &str, default_grid: impl FnOnce() -> Vec<f64>) -> Result<Vec<f64>> {
    let text = text.trim();
    if text == "default" {
        return Ok(default_grid());
    }
    let ranged = |rest: &str, log: bool| -> Result<Vec<f64>> {
        let parts: Vec<&str> = rest.split(':').collect();
        ensure_input!(parts.len() == 3, "range `{text}` must look like lin:a:b:n or log:a:b:n");
        let a: f64 = parts[0].trim().parse().map_err(|_| Error::InvalidInput(format!("bad range start in `{text}`")))?;
        let b: f64 = parts[1].trim().parse().map_err(|_| Error::InvalidInput(format!("bad range end in `{text}`")))?;
        let n: usize = parts[2].trim().parse().map_err(|_| Error::InvalidInput(format!("bad point count in `{text}`")))?;
        ensure_input!(n >= 1, "range `{text}` needs at least one point");
        if log {
            ensure_input!(a > 0.0 && b > 0.0, "log range `{text}` needs positive ends");
        }
        let (la, lb) = if log { (a.log10(), b.log10()) } else { (a, b) };
        Ok((0..n)
            .map(|k| {
                if k == 0 {
                    return a;
                }
                if k + 1 == n {
                    return b;
                }
                let x = la + (lb - la) * k as f64 / (n - 1) as f64;
                if log {
                    10f64.powf(x)
                } else {
                    x
                }
            })
            .collect())
    };
    if let Some(rest) = text.strip_prefix("lin:") {
        return ranged(rest, false);
    }
    if let Some(rest) = text.strip_prefix("log:") {
        return ranged(rest, true);
    }
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("`{s}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            ensure_input!(!v.is_empty(), "grid `{text}` is empty");
            Ok(v)
        })
}

/// Parses `ne`, `mlfne` or a comma list of them.
pub fn parse_kinds(text: &str) -> Result<Vec<EquilibriumKind>> {
    let mut kinds = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<EquilibriumKind>>>()?;
    kinds.sort();
    kinds.dedup();
    ensure_input!(!kinds.is_empty(), "no equilibrium kinds in `{text}`");
    Ok(kinds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: Vec<f64>, u0: Vec<f64>, kinds: Vec<EquilibriumKind>) -> SweepSpec {
        SweepSpec {
            c_values: c,
            u0_means: u0,
            kinds,
            ..Default::default()
        }
    }

    #[test]
    fn default_grid_hits_figure_costs() {
        let g = default_c_grid();
        assert_eq!(g.len(), 13);
        for target in [0.01, 0.1, 1.0, 10.0] {
            assert!(g.iter().any(|&c| (c - target).abs() < 1e-12 * target));
        }
        assert_eq!(default_u0_grid().len(), 11);
    }

    #[test]
    fn single_ne_row() {
        let r = run_sweep(&spec(vec![1.0], vec![0.5], vec![EquilibriumKind::Ne])).unwrap();
        assert_eq!(r.rows.len(), 1);
        let row = &r.rows[0];
        assert!((row.u1 - 1.0).abs() < 1e-9 && (row.u2 - 1.0).abs() < 1e-9 && (row.mu_bar - 0.5).abs() < 1e-12);
        assert!(row.residual <= DEFAULT_TOL);
    }

    #[test]
    fn single_mlfne_row() {
        let r = run_sweep(&spec(vec![1.0], vec![0.5], vec![EquilibriumKind::Mlfne])).unwrap();
        assert!((r.rows[0].u1 - 0.661187).abs() < 1e-6);
    }

    #[test]
    fn six_rows_with_excess_ne_advertising() {
        let r = run_sweep(&spec(
            vec![0.01, 0.1, 1.0],
            vec![0.3],
            vec![EquilibriumKind::Mlfne, EquilibriumKind::Ne],
        ))
        .unwrap();
        assert_eq!(r.rows.len(), 6);
        assert!(r.failures.is_empty());
        assert!(r.rows[..3].iter().all(|x| x.kind == EquilibriumKind::Ne));
        for cmp in compare_report(&r.rows).unwrap() {
            assert!(cmp.du1 > 0.0, "{cmp:?}");
        }
    }

    #[test]
    fn comparison_examples() {
        let r = run_sweep(&spec(vec![0.01, 1.0], vec![0.3, 0.5], SweepSpec::default().kinds)).unwrap();
        let cmp = compare_report(&r.rows).unwrap();
        let at = |c: f64, m: f64| cmp.iter().find(|x| x.c == c && x.u0_mean == m).unwrap();
        assert!((at(1.0, 0.5).du1 - 0.338813).abs() < 1e-6);
        assert!(at(0.01, 0.3).leader_flip);
        assert!(!at(1.0, 0.3).leader_flip);
        assert!(!at(1.0, 0.5).leader_flip);
    }

    #[test]
    fn unpaired_rows_are_rejected() {
        let r = run_sweep(&spec(vec![1.0], vec![0.5], vec![EquilibriumKind::Ne])).unwrap();
        assert!(compare_report(&r.rows).unwrap_err().is_input_error());
        let mut rows = run_sweep(&spec(vec![1.0], vec![0.5], SweepSpec::default().kinds)).unwrap().rows;
        rows.push(rows[0].clone());
        assert!(compare_report(&rows).is_err());
    }

    #[test]
    fn bad_spec_is_input_error() {
        assert!(run_sweep(&spec(vec![], vec![0.5], vec![EquilibriumKind::Ne])).unwrap_err().is_input_error());
        assert!(run_sweep(&spec(vec![1.0], vec![1.5], vec![EquilibriumKind::Ne])).is_err());
        assert!(run_sweep(&spec(vec![0.0], vec![0.5], vec![EquilibriumKind::Ne])).is_err());
    }

    #[test]
    fn empty_rows_give_header_only() {
        let mut buf = Vec::new();
        write_rows_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "kind,c,u0_mean,u1,u2,mu_bar,cost1,cost2,residual\n");
    }

    #[test]
    fn one_row_gives_two_lines() {
        let r = run_sweep(&spec(vec![1.0], vec![0.5], vec![EquilibriumKind::Ne])).unwrap();
        let mut buf = Vec::new();
        write_rows_csv(&r.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("NE,1,0.5,1,1,0.5,"));
    }

    #[test]
    fn real_formatting() {
        assert_eq!(format_real(0.6611874208078342), "0.661187420808");
        assert_eq!(format_real(1.0), "1");
        assert_eq!(format_real(3.4e-17), "3.4e-17");
        assert_eq!(format_real(-0.0), "0");
        assert_eq!(round_sig(123456789.0123456), 123456789.012);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1, 1,10", Vec::new).unwrap(), vec![0.1, 1.0, 10.0]);
        assert_eq!(parse_grid("lin:0:1:3", Vec::new).unwrap(), vec![0.0, 0.5, 1.0]);
        let g = parse_grid("log:0.01:10:13", Vec::new).unwrap();
        assert_eq!(g.len(), 13);
        assert_eq!((g[0], g[12]), (0.01, 10.0));
        assert!((g[4] - 0.1).abs() < 1e-15);
        assert_eq!(parse_grid("default", default_u0_grid).unwrap().len(), 11);
        assert!(parse_grid("lin:0:1", Vec::new).is_err());
        assert!(parse_grid("a,b", Vec::new).unwrap_err().is_input_error());
        assert_eq!(parse_kinds("mlfne,ne,NE").unwrap(), vec![EquilibriumKind::Ne, EquilibriumKind::Mlfne]);
        assert!(parse_kinds("x").is_err());
    }

    #[test]
    fn summary_round_trip() {
        let r = run_sweep(&spec(vec![0.01, 1.0], vec![0.3], SweepSpec::default().kinds)).unwrap();
        let cmp = compare_report(&r.rows).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&cmp, &mut buf).unwrap();
        let back = read_summary_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), cmp.len());
        for (a, b) in cmp.iter().zip(&back) {
            assert_eq!(round_sig(a.du1), b.du1);
            assert_eq!(a.leader_flip, b.leader_flip);
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(read_rows_csv("a,b\n1,2\n".as_bytes()).unwrap_err().is_input_error());
    }
}
