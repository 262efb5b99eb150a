//! Table-style summaries of a results CSV: per-method means with paired
//! significance against the best method, and per-query learning curves.

use std::collections::{BTreeMap, BTreeSet};

use crate::acquisition::Method;
use crate::error::{Error, Result};
use crate::experiment::{format_float, ResultRow};
use crate::stats::paired_t_test;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: Method,
    pub mean_mse: f64,
    pub stderr: f64,
    /// t statistic of `method - best` over replicate means (0 for the best).
    pub t_stat: f64,
    pub p_value: f64,
    pub best_equivalent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub dataset: String,
    pub method: Method,
    pub query_index: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub table: Vec<SummaryRow>,
    pub curves: Vec<CurvePoint>,
}

/// Mean and standard error (sample std / sqrt(n)); stderr is 0 for n = 1.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

type Cell = (String, Method);

/// `mse[dataset, method][replicate][query - 1]`, checked complete.
fn grid(rows: &[ResultRow]) -> Result<BTreeMap<Cell, Vec<Vec<f64>>>> {
    let mut raw: BTreeMap<Cell, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    let mut reps: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut queries: BTreeMap<String, usize> = BTreeMap::new();
    for r in rows {
        if r.query_index < 1 {
            return Err(Error::invalid(format!("query_index must be >= 1 in {r:?}")));
        }
        let prev = raw
            .entry((r.dataset.clone(), r.method))
            .or_default()
            .insert((r.replicate, r.query_index), r.mse);
        if prev.is_some() {
            return Err(Error::invalid(format!(
                "duplicate row for ({}, {}, {}, {})",
                r.dataset, r.method, r.replicate, r.query_index
            )));
        }
        reps.entry(r.dataset.clone()).or_default().insert(r.replicate);
        let q = queries.entry(r.dataset.clone()).or_default();
        *q = (*q).max(r.query_index);
    }

    let mut gaps = Vec::new();
    let mut out = BTreeMap::new();
    for ((dataset, method), cells) in raw {
        let t = queries[&dataset];
        let mut per_rep = Vec::new();
        for &rep in &reps[&dataset] {
            let mut curve = Vec::with_capacity(t);
            for q in 1..=t {
                match cells.get(&(rep, q)) {
                    Some(&v) => curve.push(v),
                    None => gaps.push(format!("({dataset}, {method}, replicate {rep}, query {q})")),
                }
            }
            per_rep.push(curve);
        }
        out.insert((dataset, method), per_rep);
    }
    if !gaps.is_empty() {
        return Err(Error::invalid(format!(
            "{} missing result cells: {}",
            gaps.len(),
            gaps.join(", ")
        )));
    }
    Ok(out)
}

pub fn summarize(rows: &[ResultRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::invalid("no result rows to summarize"));
    }
    let grid = grid(rows)?;
    let mut table = Vec::new();
    let mut curves = Vec::new();

    let datasets: BTreeSet<&String> = grid.keys().map(|(d, _)| d).collect();
    for dataset in datasets {
        let cells: Vec<(Method, &Vec<Vec<f64>>)> = grid
            .iter()
            .filter(|((d, _), _)| d == dataset)
            .map(|((_, m), v)| (*m, v))
            .collect();
        let rep_means: Vec<(Method, Vec<f64>)> = cells
            .iter()
            .map(|(m, reps)| {
                let means = reps
                    .iter()
                    .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                    .collect();
                (*m, means)
            })
            .collect();
        let overall: Vec<(f64, f64)> = rep_means.iter().map(|(_, v)| mean_stderr(v)).collect();
        // lowest mean wins; ties go to the first method in name order
        let best = (0..overall.len())
            .min_by(|&a, &b| overall[a].0.total_cmp(&overall[b].0))
            .expect("at least one method");

        for (i, (method, means)) in rep_means.iter().enumerate() {
            let (t_stat, p_value) = if means.len() < 2 {
                if i == best {
                    (0.0, 1.0)
                } else {
                    (f64::NAN, f64::NAN)
                }
            } else {
                let r = paired_t_test(means, &rep_means[best].1)?;
                (r.t, r.p)
            };
            table.push(SummaryRow {
                dataset: dataset.clone(),
                method: *method,
                mean_mse: overall[i].0,
                stderr: overall[i].1,
                t_stat,
                p_value,
                best_equivalent: p_value >= 0.05,
            });
        }
        for (method, reps) in &cells {
            for q in 0..reps[0].len() {
                let at: Vec<f64> = reps.iter().map(|c| c[q]).collect();
                let (mean, stderr) = mean_stderr(&at);
                curves.push(CurvePoint {
                    dataset: dataset.clone(),
                    method: *method,
                    query_index: q + 1,
                    mean,
                    stderr,
                });
            }
        }
    }
    Ok(Summary { table, curves })
}

fn lf_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

pub fn summary_to_csv(table: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = lf_writer();
    w.write_record(["dataset", "method", "mean_mse", "stderr", "t_stat", "p_value", "best_equivalent"])?;
    for r in table {
        w.write_record([
            r.dataset.clone(),
            r.method.name().to_owned(),
            format_float(r.mean_mse),
            format_float(r.stderr),
            format_float(r.t_stat),
            format_float(r.p_value),
            r.best_equivalent.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn curves_to_csv(curves: &[CurvePoint]) -> Result<Vec<u8>> {
    let mut w = lf_writer();
    w.write_record(["dataset", "method", "query_index", "mean", "stderr"])?;
    for c in curves {
        w.write_record([
            c.dataset.clone(),
            c.method.name().to_owned(),
            c.query_index.to_string(),
            format_float(c.mean),
            format_float(c.stderr),
        ])?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}
