// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::stats::{mean, paired_t_test_with, sample_std, Tails};
use crate::error::{Error, Result};
use crate::synth::WordPairSet;

pub const TABLE1_COLUMNS: [&str; 8] = [
    "Evaluation Set",
    "N",
    "Pre-TLI Mean Sim. (Std.Dev.)",
    "Post-TLI Mean Sim. (Std.Dev.)",
    "Abs. Impr.",
    "% Impr.",
    "T-statistic",
    "p-value",
];

pub const TABLE2_COLUMNS: [&str; 5] = [
    "Source",
    "Target",
    "Pre-TLI Sim.",
    "Post-TLI Sim.",
    "Change",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub source: String,
    pub target: String,
    pub sim_pre: f64,
    pub sim_post: f64,
    pub delta: f64,
}

/// Pre/post comparison of one evaluation set at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub label: String,
    pub layer: usize,
    pub n: usize,
    pub mean_pre: f64,
    pub std_pre: f64,
    pub mean_post: f64,
    pub std_post: f64,
    pub abs_improvement: f64,
    /// Relative to `|mean_pre|`, in percent, so the sign follows the change;
    /// `None` when `mean_pre` is 0.
    pub pct_improvement: Option<f64>,
    pub t_statistic: f64,
    pub p_value: f64,
    pub df: usize,
    pub tails: Tails,
    pub per_pair: Vec<PairRow>,
}

pub fn build_report(
    label: &str,
    pre: &[f64],
    post: &[f64],
    pairs: &WordPairSet,
    layer: usize,
    tails: Tails,
) -> Result<AlignmentReport> {
    if pre.len() != post.len() || pre.len() != pairs.len() {
        return Err(Error::shape(
            "build_report",
            &[pre.len(), post.len()],
            &[pairs.len()],
        ));
    }
    let test = paired_t_test_with(pre, post, tails)?;
    let (mean_pre, mean_post) = (mean(pre), mean(post));
    let abs_improvement = mean_post - mean_pre;
    Ok(AlignmentReport {
        label: label.to_string(),
        layer,
        n: pre.len(),
        mean_pre,
        std_pre: sample_std(pre),
        mean_post,
        std_post: sample_std(post),
        abs_improvement,
        pct_improvement: (mean_pre != 0.0).then(|| 100.0 * abs_improvement / mean_pre.abs()),
        t_statistic: test.t,
        p_value: test.p,
        df: test.df,
        tails,
        per_pair: pairs
            .pairs()
            .iter()
            .zip(pre.iter().zip(post))
            .map(|(p, (&a, &b))| PairRow {
                source: p.source.clone(),
                target: p.target.clone(),
                sim_pre: a,
                sim_post: b,
                delta: b - a,
            })
            .collect(),
    })
}

fn row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn header(cols: &[&str]) -> String {
    let mut s = row(&cols.iter().map(|c| c.to_string()).collect::<Vec<_>>());
    s.push_str(&row(&vec!["---".to_string(); cols.len()]));
    s
}

fn signed(x: f64) -> String {
    format!("{x:+.4}")
}

impl AlignmentReport {
    /// One row per report, in the summary-table column order.
    pub fn table1(reports: &[AlignmentReport]) -> String {
        let mut out = header(&TABLE1_COLUMNS);
        for r in reports {
            out.push_str(&row(&[
                r.label.clone(),
                r.n.to_string(),
                format!("{:.4} ({:.4})", r.mean_pre, r.std_pre),
                format!("{:.4} ({:.4})", r.mean_post, r.std_post),
                signed(r.abs_improvement),
                r.pct_improvement
                    .map_or("n/a".into(), |p| format!("{p:+.2}%")),
                format!("{:.2}", r.t_statistic),
                format!("{:.3e}", r.p_value),
            ]));
        }
        out
    }

    /// Per-pair table; `limit` keeps the first rows only.
    pub fn table2(&self, limit: Option<usize>) -> String {
        let mut out = header(&TABLE2_COLUMNS);
        for p in self.per_pair.iter().take(limit.unwrap_or(usize::MAX)) {
            out.push_str(&row(&[
                p.source.clone(),
                p.target.clone(),
                format!("{:.4}", p.sim_pre),
                format!("{:.4}", p.sim_post),
                signed(p.delta),
            ]));
        }
        out
    }

    /// Key/value summary followed by the per-pair table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "evaluation_set: {}", self.label);
        let _ = writeln!(out, "layer: {}", self.layer);
        let _ = writeln!(out, "n: {}", self.n);
        let _ = writeln!(
            out,
            "mean_pre: {:.6} (std {:.6})",
            self.mean_pre, self.std_pre
        );
        let _ = writeln!(
            out,
            "mean_post: {:.6} (std {:.6})",
            self.mean_post, self.std_post
        );
        let _ = writeln!(out, "abs_improvement: {:+.6}", self.abs_improvement);
        if let Some(p) = self.pct_improvement {
            let _ = writeln!(out, "pct_improvement: {p:+.2}%");
        }
        let _ = writeln!(
            out,
            "t_statistic: {:.4} (df {}, {} tailed)",
            self.t_statistic, self.df, self.tails
        );
        let _ = writeln!(out, "p_value: {:.4e}", self.p_value);
        out.push('\n');
        out.push_str(&self.table2(None));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Corrupt(e.to_string()))
    }
}
