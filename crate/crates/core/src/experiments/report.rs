//! Per-figure tables aggregated from `results.csv` rows over graph seeds.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;
use crate::experiments::metrics::mean_std;
use crate::experiments::runner::ResultRow;

pub const FIGURES: [&str; 10] = [
    "fig1a", "fig1b", "fig1c", "fig2a", "fig2b", "fig2c", "fig2d", "fig3a", "fig3b", "fig3c",
];

/// Threshold separating the mild and severe edge-drop regimes.
const SEVERE_P: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
enum Key {
    Num(f64),
    Text(String),
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Key::Num(a), Key::Num(b)) => a.total_cmp(b),
            (Key::Text(a), Key::Text(b)) => a.cmp(b),
            (Key::Num(_), Key::Text(_)) => Ordering::Less,
            (Key::Text(_), Key::Num(_)) => Ordering::Greater,
        }
    }
}

impl Key {
    fn render(&self) -> String {
        match self {
            Key::Num(v) => format!("{v}"),
            Key::Text(s) => s.clone(),
        }
    }
}

/// `(base task, variant key, variant value)` from `task[:key=value]`.
fn parse_task(task: &str) -> (&str, Option<(&str, f64)>) {
    match task.split_once(':') {
        None => (task, None),
        Some((base, rest)) => {
            let v = rest
                .split_once('=')
                .and_then(|(k, v)| v.parse::<f64>().ok().map(|v| (k, v)));
            (base, v)
        }
    }
}

/// A figure table: header plus rows of rendered cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

type Groups = BTreeMap<Vec<Key>, Vec<(f64, f64)>>;

fn group<'a>(rows: impl Iterator<Item = &'a ResultRow>, key: impl Fn(&ResultRow) -> Option<Vec<Key>>) -> Groups {
    let mut g = Groups::new();
    for r in rows {
        if let Some(k) = key(r) {
            g.entry(k).or_default().push((r.mean, r.std));
        }
    }
    g
}

/// Mean over graph seeds of the per-seed mean and of the per-seed spread.
fn mean_columns(groups: Groups) -> Vec<Vec<String>> {
    groups
        .into_iter()
        .map(|(k, v)| {
            let m = v.iter().map(|x| x.0).sum::<f64>() / v.len() as f64;
            let s = v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
            let mut row: Vec<String> = k.iter().map(Key::render).collect();
            row.push(format!("{m}"));
            row.push(format!("{s}"));
            row
        })
        .collect()
}

fn iter_of(metric: &str) -> Option<f64> {
    metric.strip_prefix("cost@")?.parse().ok()
}

fn base_rows<'a>(rows: &'a [ResultRow], task: &'a str) -> impl Iterator<Item = &'a ResultRow> {
    rows.iter().filter(move |r| parse_task(&r.task) == (task, None))
}

fn variant_rows<'a>(rows: &'a [ResultRow], task: &'a str, var: &'a str) -> impl Iterator<Item = (f64, &'a ResultRow)> {
    rows.iter().filter_map(move |r| match parse_task(&r.task) {
        (b, Some((k, v))) if b == task && k == var => Some((v, r)),
        _ => None,
    })
}

const SL: &str = "source_localization";
const RS: &str = "rec_sys";

fn accuracy_by_p(rows: &[ResultRow], keep: impl Fn(f64) -> bool) -> Table {
    let g = group(base_rows(rows, SL), |r| {
        (r.metric == "accuracy" && keep(r.p)).then(|| vec![Key::Num(r.p), Key::Text(r.mode.clone())])
    });
    Table {
        header: vec!["p", "mode", "mean_accuracy", "std_accuracy"],
        rows: mean_columns(g),
    }
}

fn accuracy_by_variant(rows: &[ResultRow], var: &str, header: &'static str) -> Table {
    let mut g = Groups::new();
    for (v, r) in variant_rows(rows, SL, var) {
        if r.metric == "accuracy" {
            g.entry(vec![Key::Num(v), Key::Num(r.p), Key::Text(r.mode.clone())])
                .or_default()
                .push((r.mean, r.std));
        }
    }
    Table {
        header: vec![header, "p", "mode", "mean_accuracy", "std_accuracy"],
        rows: mean_columns(g),
    }
}

/// Builds one named figure table.
pub fn figure(name: &str, rows: &[ResultRow]) -> Option<Table> {
    Some(match name {
        "fig1a" => {
            let g = group(base_rows(rows, SL), |r| {
                let it = iter_of(&r.metric)?;
                (r.mode == "primal_dual").then(|| vec![Key::Num(r.p), Key::Num(it)])
            });
            Table {
                header: vec!["p", "iter", "mean_cost", "std"],
                rows: mean_columns(g),
            }
        }
        "fig1b" => accuracy_by_p(rows, |p| p < SEVERE_P),
        "fig1c" => accuracy_by_p(rows, |p| p >= SEVERE_P),
        "fig2a" => accuracy_by_variant(rows, "n_realizations", "n_realizations"),
        "fig2b" => {
            let mut g = Groups::new();
            for (v, r) in variant_rows(rows, SL, "gamma_steps") {
                if let Some(it) = iter_of(&r.metric) {
                    g.entry(vec![Key::Num(v), Key::Num(it)]).or_default().push((r.mean, r.std));
                }
            }
            Table {
                header: vec!["gamma_steps", "iter", "mean_cost", "std"],
                rows: mean_columns(g),
            }
        }
        "fig2c" => accuracy_by_variant(rows, "m_d", "m_d"),
        "fig2d" => {
            let mut by: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
            for (v, r) in variant_rows(rows, SL, "c_v") {
                if r.metric == "c_l" {
                    by.entry(Key::Num(v)).or_default().push(r.mean);
                }
            }
            Table {
                header: vec!["c_v", "mean_c_l", "std_c_l"],
                rows: by
                    .into_iter()
                    .map(|(k, v)| {
                        let (m, s) = mean_std(&v);
                        vec![k.render(), format!("{m}"), format!("{s}")]
                    })
                    .collect(),
            }
        }
        "fig3a" => {
            let g = group(base_rows(rows, RS), |r| {
                (r.metric == "rmse").then(|| vec![Key::Num(r.p), Key::Text(r.mode.clone())])
            });
            Table {
                header: vec!["p", "mode", "mean_rmse", "std_rmse"],
                rows: mean_columns(g),
            }
        }
        "fig3b" | "fig3c" => {
            let g = group(base_rows(rows, RS), |r| {
                r.metric.starts_with("ad@").then(|| vec![Key::Num(r.p), Key::Text(r.mode.clone())])
            });
            let full = mean_columns(g);
            let col = if name == "fig3b" { 2 } else { 3 };
            Table {
                header: vec!["p", "mode", if name == "fig3b" { "mean_ad" } else { "std_ad" }],
                rows: full
                    .into_iter()
                    .map(|r| vec![r[0].clone(), r[1].clone(), r[col].clone()])
                    .collect(),
            }
        }
        _ => return None,
    })
}

/// Writes every figure table into `dir` as `<name>.csv`.
pub fn write_figures(rows: &[ResultRow], dir: &Path) -> Result<Vec<String>> {
    let mut written = Vec::new();
    for name in FIGURES {
        let t = figure(name, rows).expect("known figure");
        let path = dir.join(format!("{name}.csv"));
        t.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        written.push(path.display().to_string());
    }
    Ok(written)
}
