//! Benchmark record persistence and table / plot-data rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use cdcov::matrix::fmt_f64;
use cdcov::{BenchRecord, Method};

use crate::error::CliError;

const MISSING: &str = "—";

type DimField = fn(&BenchRecord) -> Option<usize>;
type NormField = fn(&BenchRecord) -> (f64, f64);

const RECORD_HEADER: [&str; 14] = [
    "method",
    "setting",
    "n",
    "p",
    "ktr",
    "s",
    "replicates",
    "used",
    "op_err_mean",
    "op_err_se",
    "fro_err_mean",
    "fro_err_se",
    "k_hat_mode",
    "k_opt",
];

fn opt_usize(v: Option<usize>) -> String {
    v.map(|k| k.to_string()).unwrap_or_default()
}

pub fn write_records(records: &[BenchRecord], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(path))?;
    w.write_record(RECORD_HEADER).map_err(CliError::csv(path))?;
    for r in records {
        w.write_record([
            r.method.name().to_string(),
            r.setting.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.ktr.to_string(),
            fmt_f64(r.s),
            r.replicates.to_string(),
            r.used.to_string(),
            fmt_f64(r.op_err_mean),
            fmt_f64(r.op_err_se),
            fmt_f64(r.fro_err_mean),
            fmt_f64(r.fro_err_se),
            opt_usize(r.k_hat_mode),
            opt_usize(r.k_opt),
        ])
        .map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_records(path: &Path) -> Result<Vec<BenchRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    r.deserialize().map(|row| row.map_err(CliError::csv(path))).collect()
}

/// Layout of a results table: one row per method, one column per `(p, ktr)`.
/// Rendered in three panels: selected vs oracle dimension, operator-norm
/// error, Frobenius-norm error.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub title: String,
    pub rows: Vec<Method>,
    pub columns: Vec<(usize, usize)>,
}

impl TableSpec {
    /// Methods and `(p, ktr)` columns present in `records`, sorted.
    pub fn covering(title: impl Into<String>, records: &[BenchRecord]) -> Self {
        let rows: BTreeSet<Method> = records.iter().map(|r| r.method).collect();
        let columns: BTreeSet<(usize, usize)> = records.iter().map(|r| (r.p, r.ktr)).collect();
        Self {
            title: title.into(),
            rows: rows.into_iter().collect(),
            columns: columns.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    pub csv: String,
}

/// Records sharing everything except method, `p` and `ktr` form one table.
pub fn group_key(r: &BenchRecord) -> (u8, usize, String) {
    (r.setting, r.n, fmt_f64(r.s))
}

pub fn group_title(r: &BenchRecord) -> String {
    format!("Setting {}, n = {}, s = {}", r.setting, r.n, r.s)
}

/// Split records into table groups, in order of first appearance.
pub fn group_records(records: &[BenchRecord]) -> Vec<Vec<BenchRecord>> {
    let mut groups: Vec<((u8, usize, String), Vec<BenchRecord>)> = Vec::new();
    for r in records {
        let key = group_key(r);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r.clone()),
            None => groups.push((key, vec![r.clone()])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

pub fn render_table(records: &[BenchRecord], spec: &TableSpec) -> RenderedTable {
    let find = |m: Method, (p, ktr): (usize, usize)| {
        records.iter().find(|r| r.method == m && r.p == p && r.ktr == ktr)
    };
    let cd_cell = |col, f: DimField| {
        find(Method::Cd, col).and_then(f).map(|k| k.to_string())
    };

    let label_w = 14;
    let cell_w = 16;
    let mut text = String::new();
    let mut csv = String::from("panel,row,p,ktr,mean,se\n");
    writeln!(text, "{}", spec.title).unwrap();
    write!(text, "{:label_w$}", "").unwrap();
    for (p, _) in &spec.columns {
        write!(text, "{:>cell_w$}", format!("p = {p}")).unwrap();
    }
    write!(text, "\n{:label_w$}", "").unwrap();
    for (_, ktr) in &spec.columns {
        write!(text, "{:>cell_w$}", format!("ktr = {ktr}")).unwrap();
    }
    text.push('\n');

    let line = |text: &mut String, label: &str, cells: Vec<Option<String>>| {
        write!(text, "{label:label_w$}").unwrap();
        for c in cells {
            write!(text, "{:>cell_w$}", c.as_deref().unwrap_or(MISSING)).unwrap();
        }
        text.push('\n');
    };

    text.push_str("Dimension\n");
    let dims: [(&str, &str, DimField); 2] =
        [("k_hat_sure", "k-hat SURE", |r| r.k_hat_mode), ("k_opt", "k-opt", |r| r.k_opt)];
    for (key, label, f) in dims {
        let cells: Vec<Option<String>> = spec.columns.iter().map(|&c| cd_cell(c, f)).collect();
        for (&(p, ktr), c) in spec.columns.iter().zip(&cells) {
            writeln!(csv, "dimension,{key},{p},{ktr},{},", c.as_deref().unwrap_or("")).unwrap();
        }
        line(&mut text, label, cells);
    }

    let norms: [(&str, &str, NormField); 2] = [
        ("op", "Operator norm", |r| (r.op_err_mean, r.op_err_se)),
        ("fro", "Frobenius norm", |r| (r.fro_err_mean, r.fro_err_se)),
    ];
    for (key, heading, f) in norms {
        writeln!(text, "{heading}").unwrap();
        for &m in &spec.rows {
            let mut cells = Vec::new();
            for &(p, ktr) in &spec.columns {
                let cell = find(m, (p, ktr)).map(f);
                let (mean, se) = cell
                    .map(|(a, b)| (fmt_f64(a), fmt_f64(b)))
                    .unwrap_or_default();
                writeln!(csv, "{key},{m},{p},{ktr},{mean},{se}").unwrap();
                cells.push(cell.map(|(a, b)| format!("{a:.3} ({b:.3})")));
            }
            line(&mut text, &m.name().to_uppercase(), cells);
        }
    }
    RenderedTable { text, csv }
}

/// Long-format `s,method,norm,mean,se` rows, two per record.
pub fn plot_data(records: &[BenchRecord]) -> String {
    let mut out = String::from("s,method,norm,mean,se\n");
    for r in records {
        for (norm, mean, se) in [("op", r.op_err_mean, r.op_err_se), ("fro", r.fro_err_mean, r.fro_err_se)] {
            writeln!(out, "{},{},{norm},{},{}", fmt_f64(r.s), r.method, fmt_f64(mean), fmt_f64(se)).unwrap();
        }
    }
    out
}

pub fn emit_plot_data(records: &[BenchRecord], path: &Path) -> Result<(), CliError> {
    std::fs::write(path, plot_data(records)).map_err(CliError::io(path))
}
