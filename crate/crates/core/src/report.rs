//! Static tables and charts built from run logs. Output depends only on the
//! log contents, so regenerating a report is byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{threshold_key, AblationTable, CellSummary, EvalMetrics, Regime};
use crate::train::StepLog;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const ABLATION_FILE: &str = "ablation.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const REPORT_FILE: &str = "report.md";
pub const CURVE_SVG: &str = "training_curve.svg";
pub const BARS_SVG: &str = "ablation_bars.svg";

/// Training-log row as written to disk: the step report plus provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    #[serde(flatten)]
    pub step: StepLog,
    pub seed: u64,
    pub config_digest: String,
}

/// Column label in the style "Linear 10%" / "Finetune 100%".
pub fn setting_label(regime: Regime, labeled_fraction: f64) -> String {
    let name = match regime {
        Regime::Frozen => "Linear",
        Regime::Finetuned => "Finetune",
    };
    format!("{name} {}%", fmt_percent(labeled_fraction))
}

fn fmt_percent(f: f64) -> String {
    let p = f * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p:.1}")
    }
}

fn fmt_acc(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn first_seen<T: Clone + PartialEq>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Rows are representations, columns are settings; one table per task.
/// Seeds are averaged.
pub fn metrics_markdown(rows: &[EvalMetrics]) -> String {
    let reps = first_seen(rows.iter().map(|m| m.representation.clone()));
    let settings = first_seen(rows.iter().map(|m| setting_label(m.regime, m.labeled_fraction)));
    let mut thresholds = first_seen(rows.iter().flat_map(|m| m.loc_accuracy_at.keys().cloned()));
    sort_widest_first(&mut thresholds);

    let cell = |rep: &str, setting: &str, f: &dyn Fn(&EvalMetrics) -> Option<f64>| -> String {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|m| m.representation == rep && setting_label(m.regime, m.labeled_fraction) == setting)
            .filter_map(f)
            .collect();
        if vals.is_empty() {
            "-".into()
        } else {
            fmt_acc(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let table = |title: &str, f: &dyn Fn(&EvalMetrics) -> Option<f64>| -> String {
        let mut s = format!("### {title}\n\n| Representation |");
        for c in &settings {
            let _ = write!(s, " {c} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---:|".repeat(settings.len()));
        s.push('\n');
        for r in &reps {
            let _ = write!(s, "| {r} |");
            for c in &settings {
                let _ = write!(s, " {} |", cell(r, c, f));
            }
            s.push('\n');
        }
        s.push('\n');
        s
    };

    let mut out = table("Classification accuracy (%)", &|m| Some(m.cls_accuracy));
    for th in &thresholds {
        out.push_str(&table(&format!("Localization accuracy at {th} s (%)"), &|m| m.loc_accuracy_at.get(th).copied()));
    }
    out.push_str(&table("Anticipation accuracy (%)", &|m| Some(m.ant_accuracy)));
    out
}

pub fn ablation_markdown(table: &AblationTable) -> String {
    let keys = ablation_loc_keys(table);
    let mut s = String::from("### Ablation (mean ± std over seeds, %)\n\n| Scope | Loss | Runs | Failed | Cls |");
    for k in &keys {
        let _ = write!(s, " Loc@{k} |");
    }
    s.push_str(" Ant |\n|---|---|---:|---:|---:|");
    s.push_str(&"---:|".repeat(keys.len() + 1));
    s.push('\n');
    let ms = |m: Option<&crate::evaluation::MeanSpread>| {
        m.map_or("-".to_string(), |m| format!("{} ± {}", fmt_acc(m.mean), fmt_acc(m.std)))
    };
    for c in &table.summary {
        let _ = write!(
            s,
            "| {} | {} | {} | {} | {} |",
            c.scope.name(),
            c.loss_mode.name(),
            c.runs,
            c.failed,
            ms(c.cls.as_ref())
        );
        for k in &keys {
            let _ = write!(s, " {} |", ms(c.loc.get(k)));
        }
        let _ = writeln!(s, " {} |", ms(c.ant.as_ref()));
    }
    s.push('\n');
    s
}

fn ablation_loc_keys(table: &AblationTable) -> Vec<String> {
    let mut keys: Vec<String> = first_seen(table.summary.iter().flat_map(|c| c.loc.keys().cloned()));
    sort_widest_first(&mut keys);
    keys
}

fn sort_widest_first(keys: &mut [String]) {
    keys.sort_by(|a, b| {
        let (x, y) = (a.parse::<f64>().unwrap_or(0.0), b.parse::<f64>().unwrap_or(0.0));
        y.total_cmp(&x)
    });
}

/// One row per (scope, loss mode, seed). Failed runs keep their key and
/// leave the metric fields empty.
pub fn ablation_csv(table: &AblationTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidRecord(format!("csv: {e}"));
    w.write_record(["scope", "loss_mode", "seed", "cls_acc", "loc_acc_1.0", "loc_acc_0.25", "ant_acc", "regime"])
        .map_err(csv_err)?;
    for r in &table.rows {
        let seed = r.seed.to_string();
        let (cls, l1, l025, ant, regime) = match &r.metrics {
            Some(m) => (
                m.cls_accuracy.to_string(),
                m.loc_at(1.0).map_or(String::new(), |v| v.to_string()),
                m.loc_at(0.25).map_or(String::new(), |v| v.to_string()),
                m.ant_accuracy.to_string(),
                m.regime.name().to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([r.scope.name(), r.loss_mode.name(), &seed, &cls, &l1, &l025, &ant, &regime])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidRecord(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const MAX_POINTS: usize = 400;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    )
}

/// Bucket means, at most [`MAX_POINTS`] of them.
fn downsample(xs: &[f64]) -> Vec<(usize, f64)> {
    let bucket = xs.len().div_ceil(MAX_POINTS).max(1);
    xs.chunks(bucket)
        .enumerate()
        .map(|(i, c)| (i * bucket + c.len() / 2, c.iter().sum::<f64>() / c.len() as f64))
        .collect()
}

/// Loss curves (total, temporal, order) against step.
pub fn training_curve_svg(log: &[StepLog]) -> String {
    let series: [(&str, &str, Vec<f64>); 3] = [
        ("l_total", "#1f77b4", log.iter().map(|l| l.report.l_total).collect()),
        ("l_temp", "#ff7f0e", log.iter().map(|l| l.report.l_temp).collect()),
        ("l_ord", "#2ca02c", log.iter().map(|l| l.report.l_ord).collect()),
    ];
    let n = log.len().max(2) as f64 - 1.0;
    let y_max =
        series.iter().flat_map(|s| s.2.iter().copied()).filter(|v| v.is_finite()).fold(0.0_f64, f64::max).max(1e-12);
    let mut s = svg_open("Training loss");
    let _ = writeln!(
        s,
        "<text x=\"{PAD}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">0</text>\n\
         <text x=\"4\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{y_max:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">step {}</text>",
        H - PAD + 14.0,
        PAD + 4.0,
        W - PAD,
        H - PAD + 14.0,
        log.len().saturating_sub(1)
    );
    for (k, (name, color, vals)) in series.iter().enumerate() {
        let pts: Vec<String> = downsample(vals)
            .into_iter()
            .map(|(i, v)| {
                let x = PAD + (W - 2.0 * PAD) * i as f64 / n;
                let y = H - PAD - (H - 2.0 * PAD) * (v / y_max);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline class=\"series\" data-name=\"{name}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{name}</text>",
            pts.join(" "),
            W - PAD - 60.0,
            PAD + 14.0 * (k as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One `<g class="cell">` per grid cell with bars for classification,
/// localization at the widest threshold and anticipation.
pub fn ablation_bars_svg(summary: &[CellSummary]) -> String {
    let loc_key = threshold_key(1.0);
    let metrics: [(&str, &str); 3] = [("cls", "#1f77b4"), ("loc@1.0", "#ff7f0e"), ("ant", "#2ca02c")];
    let mut s = svg_open("Ablation (mean accuracy over seeds)");
    let groups = summary.len().max(1) as f64;
    let group_w = (W - 2.0 * PAD) / groups;
    let bar_w = group_w * 0.8 / metrics.len() as f64;
    let plot_h = H - 2.0 * PAD;
    for (g, c) in summary.iter().enumerate() {
        let label = format!("{}/{}", c.scope.name(), c.loss_mode.name());
        let _ = writeln!(s, "<g class=\"cell\" data-cell=\"{label}\">");
        let vals =
            [c.cls.as_ref().map(|m| m.mean), c.loc.get(&loc_key).map(|m| m.mean), c.ant.as_ref().map(|m| m.mean)];
        for (k, ((name, color), v)) in metrics.iter().zip(vals).enumerate() {
            let v = v.unwrap_or(0.0).clamp(0.0, 1.0);
            let x = PAD + g as f64 * group_w + group_w * 0.1 + k as f64 * bar_w;
            let h = plot_h * v;
            let _ = writeln!(
                s,
                "<rect data-metric=\"{name}\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"{color}\"/>",
                H - PAD - h
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"8\">{label}</text>\n</g>",
            PAD + (g as f64 + 0.5) * group_w,
            H - PAD + 12.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| Error::Json { path: path.to_path_buf(), line: i + 1, source })
        })
        .collect()
}

/// Logs found under a directory, by file name.
#[derive(Clone, Debug, Default)]
pub struct RunLogs {
    pub metrics: Vec<EvalMetrics>,
    pub train: Vec<TrainLogRow>,
    pub ablation: Option<AblationTable>,
}

impl RunLogs {
    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty() && self.train.is_empty() && self.ablation.is_none()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::NoMetricsFound(dir.to_path_buf()));
        }
        let mut logs = RunLogs::default();
        let metrics = dir.join(METRICS_FILE);
        if metrics.is_file() {
            logs.metrics = read_lines(&metrics)?;
        }
        let train = dir.join(TRAIN_LOG_FILE);
        if train.is_file() {
            logs.train = read_lines(&train)?;
        }
        let ablation = dir.join(ABLATION_FILE);
        if ablation.is_file() {
            let text = std::fs::read_to_string(&ablation).map_err(|e| Error::io(&ablation, e))?;
            logs.ablation = Some(serde_json::from_str(&text).map_err(|source| Error::Json {
                path: ablation.clone(),
                line: 1,
                source,
            })?);
        }
        if logs.is_empty() {
            return Err(Error::NoMetricsFound(dir.to_path_buf()));
        }
        Ok(logs)
    }
}

/// Renders `report.md` plus the charts the logs allow. Returns
/// `(file name, contents)` pairs in a fixed order.
pub fn render(logs: &RunLogs) -> Vec<(&'static str, String)> {
    let mut md = String::from("# Run report\n\n");
    let mut files = Vec::new();
    if !logs.metrics.is_empty() {
        md.push_str("## Downstream evaluation\n\n");
        md.push_str(&metrics_markdown(&logs.metrics));
        let provenance: BTreeMap<u64, Vec<String>> = logs.metrics.iter().fold(BTreeMap::new(), |mut acc, m| {
            let d: &mut Vec<String> = acc.entry(m.seed).or_default();
            if !d.contains(&m.config_digest) {
                d.push(m.config_digest.clone());
            }
            acc
        });
        md.push_str("Provenance (seed: config digests):\n\n");
        for (seed, digests) in provenance {
            let _ = writeln!(md, "- {seed}: {}", digests.join(", "));
        }
        md.push('\n');
    }
    if !logs.train.is_empty() {
        let steps: Vec<StepLog> = logs.train.iter().map(|r| r.step.clone()).collect();
        let tenth = (steps.len() / 10).max(1);
        let mean = |s: &[StepLog]| s.iter().map(|l| l.report.l_total).sum::<f64>() / s.len() as f64;
        let _ = write!(
            md,
            "## Pretraining\n\n{} steps; mean l_total first 10%: {:.4}, last 10%: {:.4}.\n\n![training curve]({CURVE_SVG})\n\n",
            steps.len(),
            mean(&steps[..tenth]),
            mean(&steps[steps.len() - tenth..])
        );
        files.push((CURVE_SVG, training_curve_svg(&steps)));
    }
    if let Some(table) = &logs.ablation {
        md.push_str("## Ablation\n\n");
        md.push_str(&ablation_markdown(table));
        let _ = write!(md, "![ablation bars]({BARS_SVG})\n\n");
        files.push((BARS_SVG, ablation_bars_svg(&table.summary)));
    }
    files.insert(0, (REPORT_FILE, md));
    files
}

/// Loads logs from `log_dir` and writes the report into `out_dir`.
pub fn write_report(log_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let logs = RunLogs::load(log_dir)?;
    let mut written = Vec::new();
    for (name, body) in render(&logs) {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
