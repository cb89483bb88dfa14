use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::ParameterReport;

use super::metrics::EvalReport;

/// Where a row of the comparison table comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    /// Published result of another method, with its citation.
    Reference { citation: String },
    /// Figure reported for the original transformer + clustering model.
    Reported,
    /// Produced by this build.
    Measured,
}

impl RowSource {
    fn label(&self) -> &str {
        match self {
            RowSource::Reference { citation } => citation,
            RowSource::Reported => "reported",
            RowSource::Measured => "measured",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    /// Percent, two decimals as printed.
    pub accuracy: f64,
    pub params: Option<usize>,
    pub source: RowSource,
}

impl TableRow {
    /// Row for a model evaluated here. The parameter count always comes from
    /// the model itself.
    pub fn measured(model: impl Into<String>, report: &EvalReport, params: &ParameterReport) -> Self {
        TableRow {
            model: model.into(),
            accuracy: 100.0 * report.accuracy,
            params: Some(params.classifier_total()),
            source: RowSource::Measured,
        }
    }
}

fn reference(model: &str, accuracy: f64, params: Option<usize>, citation: &str) -> TableRow {
    TableRow {
        model: model.into(),
        accuracy,
        params,
        source: RowSource::Reference {
            citation: citation.into(),
        },
    }
}

fn reported(model: &str, accuracy: f64) -> TableRow {
    TableRow {
        model: model.into(),
        accuracy,
        params: Some(851_713),
        source: RowSource::Reported,
    }
}

/// Published CMU-MOSI binary accuracies of prior methods followed by the
/// figures reported for the transformer + clustering model.
pub fn static_rows() -> Vec<TableRow> {
    vec![
        reference("TFN", 74.60, Some(14_707_911), "gkoumas2021makes"),
        reference("DF", 72.30, None, "zadeh2018multi"),
        reference("MARNN", 84.31, Some(1_350_389), "kim2020multi"),
        reference("MMUU-BA", 82.31, Some(2_424_965), "ghosal-etal-2018-contextual"),
        reported("Transformer-based (40%)", 73.14),
        reported("Transformer + DEC Pretraining (40%)", 75.86),
        reported("Transformer + DEC Pretraining (Full Dataset)", 81.50),
    ]
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn params_cell(p: Option<usize>) -> String {
    p.map(thousands).unwrap_or_else(|| "-".into())
}

/// Plain-text table: static rows first, then measured rows.
pub fn comparison_table(measured: &[TableRow], static_rows: &[TableRow]) -> String {
    let rows: Vec<&TableRow> = static_rows.iter().chain(measured).collect();
    let header = ["Model", "Accuracy (%)", "Param Count", "Source"];
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                format!("{:.2}", r.accuracy),
                params_cell(r.params),
                r.source.label().to_string(),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let rule = format!(
        "{}\n",
        "-".repeat(width.iter().sum::<usize>() + 3 * (width.len() - 1))
    );
    let line = |c: [&str; 4]| {
        format!(
            "{:<w0$} | {:>w1$} | {:>w2$} | {:<w3$}",
            c[0],
            c[1],
            c[2],
            c[3],
            w0 = width[0],
            w1 = width[1],
            w2 = width[2],
            w3 = width[3]
        )
        .trim_end()
        .to_string()
    };
    let mut out = String::new();
    out.push_str(&rule);
    out.push_str(&line(header));
    out.push('\n');
    out.push_str(&rule);
    for c in &cells {
        out.push_str(&line([&c[0], &c[1], &c[2], &c[3]]));
        out.push('\n');
    }
    out.push_str(&rule);
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Comma-separated form of [`comparison_table`]; params are plain integers.
pub fn comparison_csv(measured: &[TableRow], static_rows: &[TableRow]) -> String {
    let mut out = String::from("model,accuracy,params,source\n");
    for r in static_rows.iter().chain(measured) {
        let _ = writeln!(
            out,
            "{},{:.2},{},{}",
            csv_field(&r.model),
            r.accuracy,
            r.params.map(|p| p.to_string()).unwrap_or_default(),
            csv_field(r.source.label())
        );
    }
    out
}
