//! Row-oriented output shared by every subcommand.

use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum ReportFormat {
    /// Aligned columns for humans.
    #[default]
    Table,
    /// One JSON object per line.
    Json,
}

/// Renders rows in the requested format. Each row must serialize to a JSON
/// object; the table takes its columns from the first row.
pub fn render<T: Serialize>(rows: &[T], format: ReportFormat) -> String {
    let values: Vec<Value> = rows
        .iter()
        .map(|r| serde_json::to_value(r).expect("report rows serialize"))
        .collect();
    match format {
        ReportFormat::Json => values.iter().map(|v| format!("{v}\n")).collect(),
        ReportFormat::Table => table(&values),
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:.6}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn table(rows: &[Value]) -> String {
    let Some(Value::Object(first)) = rows.first() else {
        return String::new();
    };
    let columns: Vec<&String> = first.keys().collect();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| columns.iter().map(|c| r.get(c.as_str()).map(cell).unwrap_or_default()).collect())
        .collect();
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| cells.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
        .collect();
    let line = |items: Vec<&str>| {
        let padded: Vec<String> = items.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut out = line(columns.iter().map(|c| c.as_str()).collect());
    for r in &cells {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        metric: &'static str,
        value: f64,
        pixel_count: usize,
    }

    #[test]
    fn json_lines_keep_field_order() {
        let rows = [Row { metric: "rmse_depth", value: 0.5, pixel_count: 4 }];
        assert_eq!(
            render(&rows, ReportFormat::Json),
            "{\"metric\":\"rmse_depth\",\"value\":0.5,\"pixel_count\":4}\n"
        );
    }

    #[test]
    fn table_aligns_columns() {
        let rows = [
            Row { metric: "a", value: 1.0, pixel_count: 10 },
            Row { metric: "longer", value: 0.25, pixel_count: 2 },
        ];
        let t = render(&rows, ReportFormat::Table);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "metric  value     pixel_count");
        assert_eq!(lines[1], "a       1.000000  10");
        assert_eq!(lines[2], "longer  0.250000  2");
        assert_eq!(render::<Row>(&[], ReportFormat::Table), "");
    }
}
