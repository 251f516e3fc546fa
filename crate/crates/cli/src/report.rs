//! Markdown summary of rollout CSVs: one row per input, seen and unseen
//! tasks pooled separately.

use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::runner::{write_file, ROLLOUT_COLUMNS, ROLLOUT_CSV_VERSION};
use crate::stats::Rate;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRow {
    pub method: String,
    pub task: String,
    pub tag: String,
    pub success: Rate,
    pub compliance: Rate,
    pub d_key_mean: Option<f64>,
}

pub fn parse_rollout_csv(label: &str, text: &str) -> CliResult<Vec<RolloutRow>> {
    let first = text.lines().next().unwrap_or_default();
    if first != ROLLOUT_CSV_VERSION {
        return Err(CliError::config(
            label,
            format!("expected header line {ROLLOUT_CSV_VERSION:?}, found {first:?}"),
        ));
    }
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let bad = |what: String| CliError::config(label, what);
    let headers = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.iter().ne(ROLLOUT_COLUMNS.iter().copied()) {
        return Err(bad(format!("unexpected columns {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let count = |i: usize| -> CliResult<usize> {
            rec[i]
                .parse()
                .map_err(|_| bad(format!("row {}: column {} is not a count: {:?}", k + 1, ROLLOUT_COLUMNS[i], &rec[i])))
        };
        rows.push(RolloutRow {
            method: rec[0].to_string(),
            task: rec[1].to_string(),
            tag: rec[2].to_string(),
            success: Rate {
                hits: count(4)?,
                n: count(3)?,
            },
            compliance: Rate {
                hits: count(8)?,
                n: count(7)?,
            },
            d_key_mean: rec[11].parse().ok(),
        });
    }
    Ok(rows)
}

fn rate_cell(r: Rate) -> String {
    match (r.value(), r.half_width()) {
        (Some(p), Some(h)) => format!("{p:.3} ± {h:.3} (n={})", r.n),
        _ => "-".to_string(),
    }
}

/// Renders `(input name, rows)` pairs.
pub fn render(inputs: &[(String, Vec<RolloutRow>)]) -> String {
    let mut s = String::from("# Rollout summary\n\n");
    s.push_str("Rates with 95% half-widths; tasks pooled by seen/unseen tag.\n\n");
    s.push_str("| method | input | seen success | seen compliance | unseen success | unseen compliance |\n");
    s.push_str("| --- | --- | --- | --- | --- | --- |\n");
    for (name, rows) in inputs {
        let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        let method = if methods.windows(2).all(|w| w[0] == w[1]) {
            methods.first().copied().unwrap_or("-").to_string()
        } else {
            "mixed".to_string()
        };
        let pool = |tag: &str, f: fn(&RolloutRow) -> Rate| Rate::pooled(rows.iter().filter(|r| r.tag == tag).map(f));
        s.push_str(&format!(
            "| {method} | {name} | {} | {} | {} | {} |\n",
            rate_cell(pool("seen", |r| r.success)),
            rate_cell(pool("seen", |r| r.compliance)),
            rate_cell(pool("unseen", |r| r.success)),
            rate_cell(pool("unseen", |r| r.compliance)),
        ));
    }
    s.push_str("\n## Per task\n\n");
    s.push_str("| method | task | tag | success | compliance | mean D^key |\n");
    s.push_str("| --- | --- | --- | --- | --- | --- |\n");
    for (_, rows) in inputs {
        for r in rows {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                r.method,
                r.task,
                r.tag,
                rate_cell(r.success),
                rate_cell(r.compliance),
                r.d_key_mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            ));
        }
    }
    s
}

/// `parent/file` of an input, stable across machines for a fixed layout.
fn input_name(path: &Path) -> String {
    let file = path.file_name().map(|n| n.to_string_lossy().into_owned());
    let parent = path
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned());
    match (parent, file) {
        (Some(p), Some(f)) => format!("{p}/{f}"),
        (None, Some(f)) => f,
        _ => path.display().to_string(),
    }
}

/// Reads rollout CSVs and returns the markdown, also writing it to `out`.
pub fn cmd_report(inputs: &[PathBuf], out: Option<&Path>) -> CliResult<String> {
    if inputs.is_empty() {
        return Err(CliError::config("inputs", "no rollout CSV given"));
    }
    let mut parsed = Vec::with_capacity(inputs.len());
    for (k, path) in inputs.iter().enumerate() {
        let label = format!("inputs[{k}] ({})", path.display());
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(&label, e))?;
        parsed.push((input_name(path), parse_rollout_csv(&label, &text)?));
    }
    let md = render(&parsed);
    if let Some(out) = out {
        write_file(out, &md)?;
    }
    Ok(md)
}
