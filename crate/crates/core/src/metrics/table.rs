use super::{AggregateMetrics, Stat};

pub const MISSING_CELL: &str = "n/a";

const HEADERS: [&str; 7] = [
    "Config",
    "Runs",
    "Success Rate",
    "Driving Score",
    "Efficiency",
    "Comfortness",
    "Skill Score",
];

pub fn format_cell(stat: Option<&Stat>) -> String {
    match stat {
        Some(s) => format!("{:.2}±{:.2}", s.mean, s.std),
        None => MISSING_CELL.to_string(),
    }
}

/// Aligned plain-text table, one row per labelled aggregate, in the given order.
pub fn render_table(rows: &[(String, AggregateMetrics)]) -> String {
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|(label, a)| {
            [
                label.clone(),
                a.runs.to_string(),
                format_cell(Some(&a.success_rate)),
                format_cell(Some(&a.driving_score)),
                format_cell(Some(&a.efficiency)),
                format_cell(a.comfort.as_ref()),
                format_cell(a.skill_score.as_ref()),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&HEADERS.map(String::from)));
    out.push('\n');
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(comfort: Option<Stat>) -> AggregateMetrics {
        let s = Stat { mean: 12.345, std: 0.5, n: 3 };
        AggregateMetrics {
            runs: 3,
            success_rate: s,
            driving_score: s,
            efficiency: s,
            comfort,
            skill_score: Some(s),
        }
    }

    #[test]
    fn cells_and_missing() {
        let out = render_table(&[("cng".into(), agg(None))]);
        let lines: Vec<_> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("12.35±0.50"));
        assert!(lines[2].contains(MISSING_CELL));
        assert_eq!(out, render_table(&[("cng".into(), agg(None))]));
    }

    #[test]
    fn columns_align() {
        let s = Stat { mean: 1.0, std: 0.0, n: 1 };
        let out = render_table(&[("a".into(), agg(Some(s))), ("longer-label".into(), agg(None))]);
        let lens: Vec<usize> = out.lines().skip(2).map(|l| l.chars().count()).collect();
        assert_eq!(lens[0], lens[1]);
    }
}
