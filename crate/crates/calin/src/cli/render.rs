//! Report rendering in the standard table convention: one row of
//! Acc / ECE / EOR / CCEG-per-attribute / CCEG-intersection, optionally
//! scaled by x100 with 2-decimal display. Scaling never touches stored
//! values.

use crate::domain::AttributeSchema;
use crate::metrics::MetricReport;

pub fn format_value(value: f64, scale_x100: bool) -> String {
    if value.is_nan() {
        return "--".to_string();
    }
    if scale_x100 {
        format!("{:.2}", value * 100.0)
    } else {
        format!("{value:.4}")
    }
}

/// Column labels matching [`metric_row`]'s value order.
pub fn column_labels(schema: &AttributeSchema) -> Vec<String> {
    let mut labels = vec!["Acc.".to_string(), "ECE".to_string(), "EOR".to_string()];
    for attr in schema.attributes() {
        labels.push(format!("CCEG({})", attr.name));
    }
    if schema.attributes().len() >= 2 {
        labels.push("CCEG(Inter.)".to_string());
    }
    labels
}

/// The space-joined metric row for one report, e.g.
/// "78.57 5.97 34.38 1.53 9.52 6.14" under x100 scaling.
pub fn metric_row(report: &MetricReport, schema: &AttributeSchema, scale_x100: bool) -> String {
    let mut cells = vec![
        format_value(report.accuracy, scale_x100),
        format_value(report.ece, scale_x100),
        format_value(report.mean_eor, scale_x100),
    ];
    for attr in schema.attributes() {
        cells.push(
            report
                .cceg
                .get(&attr.name)
                .map(|&v| format_value(v, scale_x100))
                .unwrap_or_else(|| "--".to_string()),
        );
    }
    if schema.attributes().len() >= 2 {
        cells.push(
            report
                .cceg
                .get("intersection")
                .map(|&v| format_value(v, scale_x100))
                .unwrap_or_else(|| "--".to_string()),
        );
    }
    cells.join(" ")
}

/// Multi-row comparison table with a method column.
pub fn render_table(
    rows: &[(String, &MetricReport)],
    schema: &AttributeSchema,
    scale_x100: bool,
) -> String {
    let method_width = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(std::iter::once("Method".len()))
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<width$}  {}\n",
        "Method",
        column_labels(schema).join("  "),
        width = method_width
    ));
    for (name, report) in rows {
        out.push_str(&format!(
            "{:<width$}  {}\n",
            name,
            metric_row(report, schema, scale_x100),
            width = method_width
        ));
    }
    if scale_x100 {
        out.push_str("(values x100, 2 decimals; stored reports are unscaled)\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Attribute;
    use std::collections::BTreeMap;

    fn schema() -> AttributeSchema {
        AttributeSchema::new(
            vec![
                Attribute {
                    name: "sex".into(),
                    values: vec!["male".into(), "female".into()],
                },
                Attribute {
                    name: "age".into(),
                    values: vec!["young".into(), "elder".into()],
                },
            ],
            vec![],
        )
        .unwrap()
    }

    fn report() -> MetricReport {
        let mut cceg = BTreeMap::new();
        cceg.insert("sex".to_string(), 0.0153);
        cceg.insert("age".to_string(), 0.0952);
        cceg.insert("intersection".to_string(), 0.0614);
        MetricReport {
            accuracy: 0.7857,
            ece: 0.0597,
            mean_eor: 0.3438,
            cceg,
            esce: 0.08,
            subgroup_ece: BTreeMap::new(),
            counts: BTreeMap::new(),
            missing: BTreeMap::new(),
            skipped_unlabeled: 0,
            bins: Vec::new(),
        }
    }

    #[test]
    fn scaled_row_matches_published_convention() {
        let row = metric_row(&report(), &schema(), true);
        assert_eq!(row, "78.57 5.97 34.38 1.53 9.52 6.14");
    }

    #[test]
    fn unscaled_row_differs_only_by_scale() {
        let row = metric_row(&report(), &schema(), false);
        assert_eq!(row, "0.7857 0.0597 0.3438 0.0153 0.0952 0.0614");
    }

    #[test]
    fn missing_cell_renders_as_dashes() {
        let mut r = report();
        r.cceg.remove("sex");
        let row = metric_row(&r, &schema(), true);
        assert!(row.contains("--"));
    }
}
