//! Per-seed records, seed aggregates, envelope checks and report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use probequot_core::metrics;
use serde::Serialize;

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub seed: u64,
    pub keys: Vec<(String, String)>,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub keys: Vec<(String, String)>,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Normal-approximation 95% interval of the mean; equal to the mean for one seed.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// One acceptance envelope evaluated on an experiment's results.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub criterion: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(criterion: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            criterion: criterion.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.criterion, self.detail)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub key_columns: Vec<String>,
    pub records: Vec<Record>,
    pub checks: Vec<Check>,
    pub markdown: String,
    pub elapsed_secs: f64,
}

pub type Keys<'a> = &'a [(&'a str, String)];

fn owned_keys(keys: Keys<'_>) -> Vec<(String, String)> {
    keys.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

impl ExperimentReport {
    pub fn new(experiment: &str, key_columns: &[&str]) -> Self {
        Self {
            experiment: experiment.to_string(),
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, seed: u64, keys: Keys<'_>, metric: &str, value: f64) {
        self.records.push(Record {
            seed,
            keys: owned_keys(keys),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn check(&mut self, criterion: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(criterion, passed, detail));
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn values(&self, keys: Keys<'_>, metric: &str) -> Vec<f64> {
        let keys = owned_keys(keys);
        self.records
            .iter()
            .filter(|r| r.metric == metric && keys.iter().all(|k| r.keys.contains(k)))
            .map(|r| r.value)
            .collect()
    }

    /// Mean over every record matching the given keys (a subset of the
    /// record's keys) and metric.
    pub fn mean(&self, keys: Keys<'_>, metric: &str) -> f64 {
        let v = self.values(keys, metric);
        if v.is_empty() {
            f64::NAN
        } else {
            metrics::mean(&v)
        }
    }

    pub fn max(&self, keys: Keys<'_>, metric: &str) -> f64 {
        self.values(keys, metric).into_iter().fold(f64::NAN, f64::max)
    }

    pub fn min(&self, keys: Keys<'_>, metric: &str) -> f64 {
        self.values(keys, metric).into_iter().fold(f64::NAN, f64::min)
    }

    /// `mean ± std` cell for markdown tables.
    pub fn cell(&self, keys: Keys<'_>, metric: &str, digits: usize) -> String {
        let v = self.values(keys, metric);
        if v.is_empty() {
            return "n/a".into();
        }
        let m = metrics::mean(&v);
        if v.len() < 2 {
            format!("{m:.digits$}")
        } else {
            format!("{m:.digits$} ± {:.digits$}", metrics::sample_std(&v))
        }
    }

    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut order: Vec<(Vec<(String, String)>, String)> = Vec::new();
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            let id = (r.keys.clone(), r.metric.clone());
            let pos = match order.iter().position(|o| *o == id) {
                Some(p) => p,
                None => {
                    order.push(id);
                    order.len() - 1
                }
            };
            groups.entry(pos).or_default().push(r.value);
        }
        order
            .into_iter()
            .enumerate()
            .map(|(i, (keys, metric))| {
                let v = &groups[&i];
                let mean = metrics::mean(v);
                let std = if v.len() > 1 { metrics::sample_std(v) } else { 0.0 };
                let half = 1.96 * std / (v.len() as f64).sqrt();
                Aggregate {
                    keys,
                    metric,
                    n: v.len(),
                    mean,
                    std,
                    min: v.iter().copied().fold(f64::INFINITY, f64::min),
                    max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    ci_low: mean - half,
                    ci_high: mean + half,
                }
            })
            .collect()
    }

    fn key_cells(&self, keys: &[(String, String)]) -> Vec<String> {
        self.key_columns
            .iter()
            .map(|c| {
                keys.iter()
                    .find(|(k, _)| k == c)
                    .map(|(_, v)| v.clone())
                    .unwrap_or_default()
            })
            .collect()
    }

    pub fn per_seed_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["seed".to_string()];
        header.extend(self.key_columns.iter().cloned());
        header.extend(["metric".to_string(), "value".to_string()]);
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.seed.to_string()];
            row.extend(self.key_cells(&r.keys));
            row.extend([r.metric.clone(), format!("{}", r.value)]);
            w.write_record(&row)?;
        }
        finish(w)
    }

    pub fn aggregate_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.key_columns.clone();
        header.extend(
            ["metric", "n", "mean", "std", "min", "max", "ci_low", "ci_high"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        for a in self.aggregate() {
            let mut row = self.key_cells(&a.keys);
            row.push(a.metric.clone());
            row.push(a.n.to_string());
            for v in [a.mean, a.std, a.min, a.max, a.ci_low, a.ci_high] {
                row.push(format!("{v}"));
            }
            w.write_record(&row)?;
        }
        finish(w)
    }

    pub fn checks_markdown(&self) -> String {
        let mut s = String::from("\n## Checks\n\n");
        for c in &self.checks {
            s.push_str(&format!("- {c}\n"));
        }
        s
    }

    /// Writes `per_seed.csv`, `aggregate.csv`, `report.md` and
    /// `checks.json` under `dir/<experiment>/`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let out = dir.join(&self.experiment);
        std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
        let write = |name: &str, body: String| {
            let p = out.join(name);
            std::fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))
        };
        write("per_seed.csv", self.per_seed_csv()?)?;
        write("aggregate.csv", self.aggregate_csv()?)?;
        write("report.md", format!("{}{}", self.markdown, self.checks_markdown()))?;
        write("checks.json", serde_json::to_string_pretty(&self.checks)?)?;
        Ok(out)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::Config(format!("CSV buffer: {}", e.error())))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Markdown table from a header and rows of cells.
pub fn markdown_table(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = format!("### {title}\n\n| {} |\n|", header.join(" | "));
    for _ in header {
        s.push_str("---|");
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_by_keys() {
        let mut r = ExperimentReport::new("t", &["method"]);
        for (seed, v) in [(1, 0.9), (2, 0.7)] {
            r.push(seed, &[("method", "a".into())], "bacc", v);
        }
        r.push(1, &[("method", "b".into())], "bacc", 0.5);
        let agg = r.aggregate();
        assert_eq!(agg.len(), 2);
        assert!((agg[0].mean - 0.8).abs() < 1e-12);
        assert!((agg[0].std - 0.2f64.hypot(0.0) / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(agg[1].n, 1);
        assert_eq!(agg[1].ci_low, 0.5);
        assert!((r.mean(&[("method", "a".into())], "bacc") - 0.8).abs() < 1e-12);
        assert!(r.mean(&[], "missing").is_nan());
        let csv = r.per_seed_csv().unwrap();
        assert!(csv.starts_with("seed,method,metric,value\n1,a,bacc,0.9\n"));
        assert!(r
            .aggregate_csv()
            .unwrap()
            .starts_with("method,metric,n,mean,std,min,max,ci_low,ci_high\n"));
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ExperimentReport::new("demo", &[]);
        r.push(3, &[], "x", 1.0);
        r.check("x is one", true, "x = 1");
        r.markdown = markdown_table("Demo", &["a", "b"], &[vec!["1".into(), "2".into()]]);
        let out = r.write(dir.path()).unwrap();
        for f in ["per_seed.csv", "aggregate.csv", "report.md", "checks.json"] {
            assert!(out.join(f).exists());
        }
        let md = std::fs::read_to_string(out.join("report.md")).unwrap();
        assert!(md.contains("| a | b |") && md.contains("[PASS] x is one"));
    }
}
