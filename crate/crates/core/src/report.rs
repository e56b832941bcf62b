//! Result tables and the bundled comparison rows.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetKind;
use crate::metrics::MetricsReport;
use crate::zoo::BackboneKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Text,
    Csv,
}

impl TableFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::Config(format!("unknown table format `{other}`"))),
        }
    }
}

/// One model's line in a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub dataset: DatasetKind,
    /// Native resolution of the dataset, used in the caption.
    pub resolution: usize,
    pub report: MetricsReport,
}

/// Fixed 4-decimal rendering used by every table.
pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn caption(dataset: DatasetKind, resolution: usize) -> String {
    format!("Results - {dataset} {resolution}x{resolution}x3")
}

/// Per column, whether each row holds the best value (lowest loss, highest
/// otherwise). Ties are all marked; comparison is on the rendered value.
fn best_marks(rows: &[TableRow]) -> Vec<[bool; 5]> {
    let rendered: Vec<[f64; 5]> = rows
        .iter()
        .map(|r| r.report.values().map(|v| fmt4(v).parse().unwrap_or(v)))
        .collect();
    let mut best = [0.0; 5];
    for col in 0..5 {
        let vals = rendered.iter().map(|r| r[col]);
        best[col] = if col == 0 {
            vals.fold(f64::INFINITY, f64::min)
        } else {
            vals.fold(f64::NEG_INFINITY, f64::max)
        };
    }
    rendered
        .iter()
        .map(|r| core::array::from_fn(|col| r[col] == best[col]))
        .collect()
}

/// Rows are models, columns Loss, ACC, Precision, AUC, Recall. The text form
/// carries the caption and marks the best value per column with `*`; the
/// CSV form is plain values.
pub fn results_table(rows: &[TableRow], format: TableFormat) -> Result<String> {
    let first = rows.first().ok_or(Error::Empty("results table without records"))?;
    if let Some(r) = rows.iter().find(|r| r.dataset != first.dataset) {
        return Err(Error::Config(format!(
            "one table per dataset: {} and {} records mixed",
            first.dataset, r.dataset
        )));
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("model,loss,acc,precision,auc,recall\n");
            for r in rows {
                let vals: Vec<String> = r.report.values().iter().map(|&v| fmt4(v)).collect();
                let _ = writeln!(out, "{},{}", r.model, vals.join(","));
            }
        }
        TableFormat::Text => {
            let marks = best_marks(rows);
            let _ = writeln!(out, "{}", caption(first.dataset, first.resolution));
            let _ = write!(out, "{:<10}", "");
            for col in MetricsReport::COLUMNS {
                let _ = write!(out, "{col:>11}");
            }
            out.push('\n');
            for (r, m) in rows.iter().zip(marks) {
                let _ = write!(out, "{:<10}", r.model);
                for (v, best) in r.report.values().iter().zip(m) {
                    let cell = if best { format!("{}*", fmt4(*v)) } else { fmt4(*v) };
                    let _ = write!(out, "{cell:>11}");
                }
                out.push('\n');
            }
            let _ = writeln!(out, "(* best in column; precision/recall: {})", first.report.aggregation_mode.as_str());
        }
    }
    Ok(out)
}

/// An accuracy figure from prior work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineRow {
    pub source: &'static str,
    pub dataset: &'static str,
    pub method: &'static str,
    /// Accuracy exactly as published.
    pub acc_text: &'static str,
    pub acc: f64,
}

const fn row(source: &'static str, dataset: &'static str, method: &'static str, acc_text: &'static str, acc: f64) -> BaselineRow {
    BaselineRow {
        source,
        dataset,
        method,
        acc_text,
        acc,
    }
}

pub const BASELINES: [BaselineRow; 9] = [
    row("yang2021medmnist", "DermaMNIST", "GAutoML Vision", "0.766", 0.766),
    row("abhishek2024investigating", "DermaMNIST-C", "ResNet-50", "0.851", 0.851),
    row("win2020hybrid", "DermaMNIST", "GAutoML Vision", "0.768", 0.768),
    row("app12052634", "DermaMNIST", "AOC-Caps", "0.786", 0.786),
    row("mercaldo2024extreme", "DermaMNIST", "ELM", "0.674", 0.674),
    row("yang2024skin", "DermaMNIST", "-", "0.826", 0.826),
    row("xu2022medrdf", "DermaMNIST", "ResNet-18", "0.741", 0.741),
    row("ahmed2022failure", "DermaMNIST", "ResNet-18", "0.7367", 0.7367),
    row("jiang2022deeply", "DermaMNIST", "LSANet+SimAM", "0.7940", 0.7940),
];

/// One `source|dataset|method|acc` line per bundled row; checksummed in tests.
pub fn baseline_canonical() -> String {
    let mut s = String::new();
    for b in &BASELINES {
        let _ = writeln!(s, "{}|{}|{}|{}", b.source, b.dataset, b.method, b.acc_text);
    }
    s
}

/// This harness's own line in the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub model: String,
    pub dataset: DatasetKind,
    pub backbone: BackboneKind,
    pub accuracy: f64,
}

pub fn method_name(backbone: BackboneKind) -> &'static str {
    match backbone {
        BackboneKind::ResNet50 => "ResNet-50",
        BackboneKind::EfficientNetV2L => "EfficientNetV2L",
        BackboneKind::None => "CNN from scratch",
    }
}

/// Accuracy-only comparison: the bundled rows followed by `entries`.
pub fn comparison_table(entries: &[ComparisonEntry], format: TableFormat) -> String {
    let mut out = String::new();
    let ours: Vec<(String, &str, &str, String)> = entries
        .iter()
        .map(|e| {
            (
                format!("this work ({})", e.model),
                e.dataset.as_str(),
                method_name(e.backbone),
                fmt4(e.accuracy),
            )
        })
        .collect();
    let lines = BASELINES
        .iter()
        .map(|b| (b.source, b.dataset, b.method, b.acc_text))
        .chain(ours.iter().map(|(s, d, m, a)| (s.as_str(), *d, *m, a.as_str())));
    match format {
        TableFormat::Csv => {
            out.push_str("source,dataset,method,acc\n");
            for (s, d, m, a) in lines {
                let _ = writeln!(out, "{s},{d},{m},{a}");
            }
        }
        TableFormat::Text => {
            out.push_str("Comparison with state-of-the-art methods.\n");
            let _ = writeln!(out, "{:<28}{:<15}{:<18}{:>7}", "Source", "Dataset", "Method", "ACC");
            for (s, d, m, a) in lines {
                let _ = writeln!(out, "{s:<28}{d:<15}{m:<18}{a:>7}");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::AggregationMode;
    use alloc::string::ToString;
    use alloc::vec;

    fn report(values: [f64; 5]) -> MetricsReport {
        MetricsReport {
            loss: values[0],
            accuracy: values[1],
            precision: values[2],
            auc: values[3],
            recall: values[4],
            aggregation_mode: AggregationMode::ThresholdMicro,
            precision_undefined: false,
            recall_undefined: false,
            auc_excluded: vec![],
        }
    }

    fn table1() -> Vec<TableRow> {
        vec![
            TableRow {
                model: "Res50_e".into(),
                dataset: DatasetKind::DermaMnist,
                resolution: 28,
                report: report([1.2829, 0.6663, 0.7152, 0.9178, 0.6299]),
            },
            TableRow {
                model: "Eff_e".into(),
                dataset: DatasetKind::DermaMnist,
                resolution: 28,
                report: report([1.2933, 0.7017, 0.8977, 0.9334, 0.5556]),
            },
        ]
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(fmt4(0.84897), "0.8490");
        assert_eq!(fmt4(1.0), "1.0000");
    }

    #[test]
    fn text_table_marks_best() {
        let t = results_table(&table1(), TableFormat::Text).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Results - DermaMNIST 28x28x3");
        let header: Vec<&str> = lines[1].split_whitespace().collect();
        assert_eq!(header, ["Loss", "ACC", "Precision", "AUC", "Recall"]);
        let res: Vec<&str> = lines[2].split_whitespace().collect();
        assert_eq!(res, ["Res50_e", "1.2829*", "0.6663", "0.7152", "0.9178", "0.6299*"]);
        let eff: Vec<&str> = lines[3].split_whitespace().collect();
        assert_eq!(eff, ["Eff_e", "1.2933", "0.7017*", "0.8977*", "0.9334*", "0.5556"]);
    }

    #[test]
    fn csv_table() {
        let t = results_table(&table1(), TableFormat::Csv).unwrap();
        assert_eq!(
            t,
            "model,loss,acc,precision,auc,recall\n\
             Res50_e,1.2829,0.6663,0.7152,0.9178,0.6299\n\
             Eff_e,1.2933,0.7017,0.8977,0.9334,0.5556\n"
        );
    }

    #[test]
    fn mixed_datasets_rejected() {
        let mut rows = table1();
        rows[1].dataset = DatasetKind::DermaMnistC;
        assert!(results_table(&rows, TableFormat::Text).is_err());
        assert!(results_table(&[], TableFormat::Text).is_err());
    }

    #[test]
    fn comparison_rows() {
        let entry = ComparisonEntry {
            model: "Effv3_e".to_string(),
            dataset: DatasetKind::DermaMnistC,
            backbone: BackboneKind::EfficientNetV2L,
            accuracy: 0.84897,
        };
        let t = comparison_table(&[entry], TableFormat::Text);
        assert!(t.lines().any(|l| l.contains("DermaMNIST-C") && l.contains("ResNet-50") && l.ends_with("0.851")));
        assert!(t.lines().nth(2).unwrap().contains("GAutoML Vision"));
        let last = t.lines().last().unwrap();
        assert!(last.contains("EfficientNetV2L") && last.ends_with("0.8490"));
        assert_eq!(t.lines().count(), 2 + 9 + 1);
    }
}
