//! Delimited and plain-text summary tables.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm::CostSummary;
use crate::metrics::{Metric, MetricReport};

/// Per-run operational counts gathered while re-ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTelemetry {
    pub run: String,
    pub reranker: String,
    pub users: usize,
    pub n: usize,
    /// Entries filled with random candidates after unusable output.
    pub fills: usize,
    /// Users whose re-ranking failed outright.
    pub failures: usize,
    /// Mean over users of the deepest candidate rank chosen by the re-ranker itself.
    pub mean_lowest_rank: Option<f64>,
}

impl RunTelemetry {
    /// Share of delivered entries that are random fills, in percent.
    pub fn fill_percentage(&self) -> f64 {
        let slots = self.users * self.n;
        if slots == 0 {
            0.0
        } else {
            100.0 * self.fills as f64 / slots as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub runs: Vec<RunTelemetry>,
    pub cost: CostSummary,
}

impl Default for Telemetry {
    fn default() -> Self {
        Self {
            runs: Vec::new(),
            cost: CostSummary {
                per_model: Default::default(),
                total: 0.0,
            },
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |p| format!("{p:+.2}"))
}

fn write(dir: &Path, name: &str, body: String, out: &mut Vec<PathBuf>) -> io::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    out.push(path);
    Ok(())
}

/// Writes the metric table, lowest-rank and random-fill summaries and the cost table.
/// The first report whose name equals `baseline` is shown in absolute terms; every
/// other report as a percentage difference against it.
pub fn emit_report(
    dir: &Path,
    reports: &[MetricReport],
    baseline: &str,
    telemetry: &Telemetry,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let base = reports.iter().find(|r| r.name == baseline);

    let mut tsv = String::from("run\trow");
    for m in Metric::ALL {
        write!(tsv, "\t{m}").unwrap();
    }
    tsv.push('\n');
    let name_w = reports.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
    let mut txt = format!("{:<name_w$}", "Run");
    for m in Metric::ALL {
        write!(txt, "  {:>17}", m.name()).unwrap();
    }
    txt.push('\n');

    for r in reports {
        if r.name == baseline || base.is_none() {
            tsv.push_str(&format!("{}\tmean", r.name));
            for m in Metric::ALL {
                write!(tsv, "\t{:.6}", r.mean(m)).unwrap();
            }
            tsv.push_str(&format!("\n{}\thalf_width", r.name));
            for m in Metric::ALL {
                write!(tsv, "\t{:.6}", r.summary.get(&m).map_or(0.0, |s| s.half_width)).unwrap();
            }
            tsv.push('\n');
            write!(txt, "{:<name_w$}", r.name).unwrap();
            for m in Metric::ALL {
                let hw = r.summary.get(&m).map_or(0.0, |s| s.half_width);
                write!(txt, "  {:>17}", format!("{:.4}±{:.4}", r.mean(m), hw)).unwrap();
            }
            txt.push('\n');
        } else if let Some(b) = base {
            let diffs = r.pct_vs(b);
            tsv.push_str(&format!("{}\tpct_diff", r.name));
            write!(txt, "{:<name_w$}", r.name).unwrap();
            for m in Metric::ALL {
                write!(tsv, "\t{}", pct(diffs[&m])).unwrap();
                write!(txt, "  {:>17}", pct(diffs[&m]).replace("NA", "n/a") + "%").unwrap();
            }
            tsv.push('\n');
            txt.push('\n');
        }
    }
    write(dir, "metrics.tsv", tsv, &mut written)?;

    let mut lowest = String::from("run\treranker\tusers\tmean_lowest_rank\n");
    let mut fills = String::from("run\treranker\tusers\tn\tfills\tfailures\tfill_percentage\n");
    for t in &telemetry.runs {
        let lr = t.mean_lowest_rank.map_or_else(|| "NA".into(), |v| format!("{v:.4}"));
        writeln!(lowest, "{}\t{}\t{}\t{lr}", t.run, t.reranker, t.users).unwrap();
        writeln!(
            fills,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}",
            t.run,
            t.reranker,
            t.users,
            t.n,
            t.fills,
            t.failures,
            t.fill_percentage()
        )
        .unwrap();
    }
    write(dir, "lowest_rank.tsv", lowest, &mut written)?;
    write(dir, "random_fill.tsv", fills, &mut written)?;

    let mut cost = String::from("model\tcalls\tinput_tokens\toutput_tokens\testimated_calls\tcost_usd\n");
    for (model, c) in &telemetry.cost.per_model {
        writeln!(
            cost,
            "{model}\t{}\t{}\t{}\t{}\t{:.6}",
            c.calls, c.input_tokens, c.output_tokens, c.estimated_calls, c.cost
        )
        .unwrap();
    }
    writeln!(cost, "total\t\t\t\t\t{:.6}", telemetry.cost.total).unwrap();
    write(dir, "cost.tsv", cost, &mut written)?;

    txt.push_str("\nDeepest candidate rank used (mean over users)\n");
    for t in &telemetry.runs {
        let lr = t.mean_lowest_rank.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"));
        writeln!(txt, "  {:<name_w$}  {lr}", t.run).unwrap();
    }
    txt.push_str("\nRandom fills (% of delivered items)\n");
    for t in &telemetry.runs {
        writeln!(
            txt,
            "  {:<name_w$}  {:.2}%  ({} failed users)",
            t.run,
            t.fill_percentage(),
            t.failures
        )
        .unwrap();
    }
    writeln!(txt, "\nInference cost: ${:.2}", telemetry.cost.total).unwrap();
    for (model, c) in &telemetry.cost.per_model {
        writeln!(
            txt,
            "  {model}: {} in / {} out tokens, ${:.2}",
            c.input_tokens, c.output_tokens, c.cost
        )
        .unwrap();
    }
    write(dir, "report.txt", txt, &mut written)?;
    Ok(written)
}
