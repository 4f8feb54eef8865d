//! Long-format summary table: one row per reported value or check.

use std::path::Path;

use crate::config::LoadedConfig;
use crate::csvio::{format_f64, write_table};
use crate::error::Result;
use crate::runner::TOOL_VERSION;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub group: String,
    pub metric: String,
    pub value: f64,
    pub threshold: f64,
    /// Comparison used, e.g. `<` or `>=`.
    pub relation: &'static str,
    pub pass: bool,
}

impl Check {
    fn new(group: &str, metric: &str, value: f64, threshold: f64, relation: &'static str, pass: bool) -> Self {
        Self {
            group: group.to_string(),
            metric: metric.to_string(),
            value,
            threshold,
            relation,
            pass,
        }
    }

    pub fn below(group: &str, metric: &str, value: f64, threshold: f64) -> Self {
        Self::new(group, metric, value, threshold, "<", value < threshold)
    }

    pub fn at_most(group: &str, metric: &str, value: f64, threshold: f64) -> Self {
        Self::new(group, metric, value, threshold, "<=", value <= threshold)
    }

    pub fn above(group: &str, metric: &str, value: f64, threshold: f64) -> Self {
        Self::new(group, metric, value, threshold, ">", value > threshold)
    }

    pub fn at_least(group: &str, metric: &str, value: f64, threshold: f64) -> Self {
        Self::new(group, metric, value, threshold, ">=", value >= threshold)
    }

    /// More than half of `total` runs passed.
    pub fn majority(group: &str, metric: &str, passed: usize, total: usize) -> Self {
        Self::new(group, metric, passed as f64, total as f64 / 2.0, ">", 2 * passed > total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    Value {
        kind: String,
        group: String,
        metric: String,
        value: f64,
    },
    /// Decides the exit status.
    Check(Check),
    /// Per-run check that feeds an aggregate check.
    Detail(Check),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<Row>,
}

impl Summary {
    pub fn value(&mut self, kind: &str, group: &str, metric: &str, value: f64) {
        self.rows.push(Row::Value {
            kind: kind.into(),
            group: group.into(),
            metric: metric.into(),
            value,
        });
    }

    pub fn check(&mut self, c: Check) {
        self.rows.push(Row::Check(c));
    }

    pub fn check_detail(&mut self, c: Check) {
        self.rows.push(Row::Detail(c));
    }

    pub fn checks(&self) -> impl Iterator<Item = &Check> {
        self.rows.iter().filter_map(|r| match r {
            Row::Check(c) => Some(c),
            _ => None,
        })
    }

    pub fn failed(&self) -> usize {
        self.checks().filter(|c| !c.pass).count()
    }

    pub fn passed(&self) -> bool {
        self.failed() == 0
    }

    /// Look up a reported value.
    pub fn get(&self, kind: &str, group: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find_map(|r| match r {
            Row::Value {
                kind: k,
                group: g,
                metric: m,
                value,
            } if k == kind && g == group && m == metric => Some(*value),
            _ => None,
        })
    }

    pub fn write(&self, path: &Path, loaded: &LoadedConfig) -> Result<()> {
        let header: Vec<String> = ["kind", "group", "metric", "value", "relation", "threshold", "pass"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let check_row = |kind: &str, c: &Check| {
            vec![
                kind.to_string(),
                c.group.clone(),
                c.metric.clone(),
                format_f64(c.value),
                c.relation.to_string(),
                format_f64(c.threshold),
                c.pass.to_string(),
            ]
        };
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| match r {
                Row::Value {
                    kind,
                    group,
                    metric,
                    value,
                } => vec![
                    kind.clone(),
                    group.clone(),
                    metric.clone(),
                    format_f64(*value),
                    String::new(),
                    String::new(),
                    String::new(),
                ],
                Row::Check(c) => check_row("check", c),
                Row::Detail(c) => check_row("detail", c),
            })
            .collect();
        let meta = vec![
            ("config_hash".to_string(), loaded.hash.clone()),
            ("experiment".to_string(), loaded.config.experiment.name().to_string()),
            ("tool_version".to_string(), TOOL_VERSION.to_string()),
        ];
        write_table(path, &meta, &header, &rows)
    }
}
