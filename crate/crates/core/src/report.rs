//! Summary tables rebuilt from the CSV artifacts of a run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::experiment::{fmt_float, mean_std};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            other => Err(Error::Argument(format!(
                "unknown table format {other:?}; expected csv or md"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(title: &str, header: &[&str]) -> Self {
        Table {
            title: title.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn render(&self, format: TableFormat) -> String {
        let mut out = String::new();
        match format {
            TableFormat::Markdown => {
                let _ = writeln!(out, "## {}\n", self.title);
                let header: Vec<String> =
                    self.header.iter().map(|c| c.replace('|', "\\|")).collect();
                let _ = writeln!(out, "| {} |", header.join(" | "));
                let _ = writeln!(out, "|{}", "---|".repeat(self.header.len()));
                for r in &self.rows {
                    let cells: Vec<String> = r.iter().map(|c| c.replace('|', "\\|")).collect();
                    let _ = writeln!(out, "| {} |", cells.join(" | "));
                }
            }
            TableFormat::Csv => {
                let _ = writeln!(out, "# {}", self.title);
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.header).expect("in-memory write");
                for r in &self.rows {
                    w.write_record(r).expect("in-memory write");
                }
                out.push_str(
                    &String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"),
                );
            }
        }
        out
    }
}

pub fn render_all(tables: &[Table], format: TableFormat) -> String {
    tables
        .iter()
        .map(|t| t.render(format))
        .collect::<Vec<_>>()
        .join("\n")
}

type Records = Vec<BTreeMap<String, String>>;

fn read_csv(path: &Path) -> Result<Option<Records>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let header = reader
        .headers()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .clone();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: i + 2,
            message: format!("{}: {e}", path.display()),
        })?;
        out.push(
            header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    Ok(Some(out))
}

fn field<'a>(r: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    r.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Schema(format!("missing column {key}")))
}

fn number(r: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    let v = field(r, key)?;
    if v.is_empty() {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| Error::Schema(format!("column {key}: {v:?} is not a number")))
}

fn pm(xs: &[f64]) -> String {
    mean_std(xs)
        .map(|m| format!("{} ± {}", fmt_float(m.mean), fmt_float(m.std)))
        .unwrap_or_else(|| "n/a".into())
}

/// Mean ± std of `value` grouped by the `keys` columns, in first-seen order.
fn grouped(records: &Records, keys: &[&str], value: &str) -> Result<Vec<(Vec<String>, Vec<f64>)>> {
    let mut groups: Vec<(Vec<String>, Vec<f64>)> = Vec::new();
    for r in records {
        let key = keys
            .iter()
            .map(|k| field(r, k).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let pos = match groups.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                groups.push((key, Vec::new()));
                groups.len() - 1
            }
        };
        if let Some(v) = number(r, value)? {
            groups[pos].1.push(v);
        }
    }
    Ok(groups)
}

fn learning_curve(rounds: &Records) -> Result<Table> {
    let mut t = Table::new(
        "Validation accuracy by round",
        &["strategy", "round", "labelled", "val_acc"],
    );
    for (key, vals) in grouped(rounds, &["strategy", "round", "labelled_size"], "val_acc")? {
        t.rows.push(vec![
            key[0].clone(),
            key[1].clone(),
            key[2].clone(),
            pm(&vals),
        ]);
    }
    Ok(t)
}

fn profile_table(profile: &Records) -> Result<Table> {
    let Some(first) = profile.first() else {
        return Ok(Table::new(
            "Acquired data profile",
            &["strategy", "input_diversity", "output_uncertainty"],
        ));
    };
    let classes: Vec<String> = first
        .keys()
        .filter(|k| k.starts_with("class_"))
        .cloned()
        .collect();
    let mut columns = vec![
        "input_diversity".to_string(),
        "output_uncertainty".to_string(),
    ];
    columns.extend(classes);
    let mut header = vec!["strategy"];
    header.extend(columns.iter().map(String::as_str));
    let mut t = Table::new("Acquired data profile", &header);
    let per_column = columns
        .iter()
        .map(|c| grouped(profile, &["strategy"], c))
        .collect::<Result<Vec<_>>>()?;
    for (i, (key, _)) in per_column[0].iter().enumerate() {
        let mut row = vec![key[0].clone()];
        row.extend(per_column.iter().map(|g| pm(&g[i].1)));
        t.rows.push(row);
    }
    Ok(t)
}

fn acquisition_table(rounds: &Records) -> Result<Option<Table>> {
    let Some(first) = rounds.first() else {
        return Ok(None);
    };
    let sources: Vec<String> = first
        .keys()
        .filter_map(|k| k.strip_prefix("af_").map(str::to_string))
        .collect();
    let mut header = vec!["strategy"];
    header.extend(sources.iter().map(String::as_str));
    let mut t = Table::new(
        "Acquisition factor by source (mean over rounds and seeds)",
        &header,
    );
    let mut per_source = Vec::new();
    for s in &sources {
        per_source.push(grouped(rounds, &["strategy"], &format!("af_{s}"))?);
    }
    if let Some(groups) = per_source.first() {
        for (i, (key, _)) in groups.iter().enumerate() {
            let mut row = vec![key[0].clone()];
            row.extend(per_source.iter().map(|g| pm(&g[i].1)));
            t.rows.push(row);
        }
    }
    Ok(Some(t))
}

fn test_columns(records: &Records) -> Vec<String> {
    records.first().map_or_else(Vec::new, |r| {
        r.keys()
            .filter(|k| k.starts_with("acc_"))
            .cloned()
            .collect()
    })
}

/// Per-run summary rows grouped into `(strategy, test_set) -> accuracies`.
fn accuracy_groups(summary: &Records) -> Result<Vec<((String, String), Vec<f64>)>> {
    let mut out = Vec::new();
    for col in test_columns(summary) {
        let test = col.trim_start_matches("acc_").to_string();
        for (key, vals) in grouped(summary, &["strategy"], &col)? {
            out.push(((key[0].clone(), test.clone()), vals));
        }
    }
    out.sort_by(|a, b| a.0 .1.cmp(&b.0 .1));
    Ok(out)
}

fn summary_table(summary: &Records) -> Result<Table> {
    let mut t = Table::new(
        "Final test accuracy",
        &["strategy", "test_set", "accuracy", "runs"],
    );
    for ((strategy, test), vals) in accuracy_groups(summary)? {
        t.rows
            .push(vec![strategy, test, pm(&vals), vals.len().to_string()]);
    }
    Ok(t)
}

fn splits_table(records: &Records) -> Result<Table> {
    let mut t = Table::new(
        "Accuracy by training difficulty mix",
        &["combo", "test_set", "accuracy", "runs", "failed"],
    );
    for r in records {
        let (mean, std) = (
            number(r, "mean")?.unwrap_or(f64::NAN),
            number(r, "std")?.unwrap_or(f64::NAN),
        );
        t.rows.push(vec![
            field(r, "combo")?.into(),
            field(r, "test_set")?.into(),
            format!("{} ± {}", fmt_float(mean), fmt_float(std)),
            field(r, "runs")?.into(),
            field(r, "failed")?.into(),
        ]);
    }
    Ok(t)
}

fn paired_table(original: &Records, ablated: &Records) -> Result<Table> {
    let mut t = Table::new(
        "Ablated vs original pool",
        &["strategy", "test_set", "ablated | original"],
    );
    let ablated = accuracy_groups(ablated)?;
    for (key, vals) in accuracy_groups(original)? {
        let a = ablated
            .iter()
            .find(|(k, _)| *k == key)
            .map_or_else(|| "n/a".to_string(), |(_, v)| pm(v));
        t.rows
            .push(vec![key.0, key.1, format!("{a} | {}", pm(&vals))]);
    }
    Ok(t)
}

fn stratified_table(records: &Records) -> Result<Table> {
    let mut t = Table::new(
        "Test accuracy by difficulty",
        &["strategy", "difficulty", "count", "accuracy"],
    );
    let counts = grouped(records, &["strategy", "difficulty"], "count")?;
    for ((key, accs), (_, n)) in grouped(records, &["strategy", "difficulty"], "accuracy")?
        .into_iter()
        .zip(counts)
    {
        let count = n.first().map(|c| fmt_float(*c)).unwrap_or_default();
        t.rows
            .push(vec![key[0].clone(), key[1].clone(), count, pm(&accs)]);
    }
    Ok(t)
}

/// Every table that the artifacts present in `dir` support.
pub fn build_report(dir: &Path) -> Result<Vec<Table>> {
    if !dir.is_dir() {
        return Err(Error::Argument(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let required = |name: &str| -> Result<Records> {
        let path = dir.join(name);
        read_csv(&path)?
            .ok_or_else(|| Error::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)))
    };
    let summary = required("summary.csv")?;
    let rounds = required("rounds.csv")?;
    let mut tables = vec![summary_table(&summary)?];
    if let Some(ablated) = read_csv(&dir.join("summary_ablated.csv"))? {
        tables.push(paired_table(&summary, &ablated)?);
    }
    tables.push(learning_curve(&rounds)?);
    tables.extend(acquisition_table(&rounds)?);
    if let Some(profile) = read_csv(&dir.join("profile.csv"))? {
        tables.push(profile_table(&profile)?);
    }
    if let Some(strat) = read_csv(&dir.join("stratified.csv"))? {
        tables.push(stratified_table(&strat)?);
    }
    if let Some(splits) = read_csv(&dir.join("splits_summary.csv"))? {
        tables.push(splits_table(&splits)?);
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markdown_and_csv_rendering() {
        let mut t = Table::new("T", &["a", "b"]);
        t.rows.push(vec!["x".into(), "1 ± 0".into()]);
        assert_eq!(
            t.render(TableFormat::Markdown),
            "## T\n\n| a | b |\n|---|---|\n| x | 1 ± 0 |\n"
        );
        assert_eq!(t.render(TableFormat::Csv), "# T\na,b\nx,1 ± 0\n");
    }

    #[test]
    fn report_from_csv_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("summary.csv"),
            "strategy,seed,final_labelled,acc_clean\nrandom,1,40,0.7\nrandom,2,40,0.9\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("summary_ablated.csv"),
            "strategy,seed,final_labelled,acc_clean\nrandom,1,40,0.9\nrandom,2,40,0.9\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("rounds.csv"),
            "strategy,seed,round,labelled_size,val_acc,af_a\nrandom,1,0,10,0.5,1\nrandom,2,0,10,0.7,1.2\n",
        )
        .unwrap();
        let tables = build_report(dir.path()).unwrap();
        assert_eq!(tables[0].rows[0], vec!["random", "clean", "0.8 ± 0.1", "2"]);
        assert_eq!(
            tables[1].rows[0],
            vec!["random", "clean", "0.9 ± 0 | 0.8 ± 0.1"]
        );
        assert!(tables[1]
            .render(TableFormat::Markdown)
            .contains("| random | clean | 0.9 ± 0 \\| 0.8 ± 0.1 |"));
        assert_eq!(tables[2].rows[0], vec!["random", "0", "10", "0.6 ± 0.1"]);
        assert_eq!(tables[3].rows[0], vec!["random", "1.1 ± 0.1"]);
    }

    #[test]
    fn missing_rounds_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("summary.csv"),
            "strategy,seed,final_labelled\n",
        )
        .unwrap();
        let err = build_report(dir.path()).unwrap_err().to_string();
        assert!(err.contains("rounds.csv"), "{err}");
    }
}
