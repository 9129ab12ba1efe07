//! CSV result files. The first line is `#schema=<name>/v1`, then a header
//! row and one row per record.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "v1";

/// Known schemas and their columns.
pub const SCHEMAS: &[(&str, &[&str])] = &[
    (
        "synth",
        &[
            "experiment",
            "setting",
            "lambda",
            "alpha",
            "seed",
            "round",
            "ndcg_test",
            "div_pre",
            "div_post",
        ],
    ),
    (
        "dynamics",
        &[
            "method",
            "alpha",
            "target",
            "lambda",
            "seed",
            "round",
            "ndcg_test",
            "div_pre",
            "div_post",
        ],
    ),
    ("pareto", &["lambda", "seed", "round", "ndcg", "div"]),
    ("verify", &["check", "value", "threshold", "pass"]),
];

pub fn columns(schema: &str) -> Option<&'static [&'static str]> {
    SCHEMAS.iter().find(|(s, _)| *s == schema).map(|(_, c)| *c)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        reason: e.to_string(),
    }
}

/// CSV text for `rows` under `schema`.
pub fn to_csv<T: Serialize>(schema: &str, rows: &[T]) -> Result<String> {
    let cols = columns(schema).ok_or_else(|| Error::invalid("schema", format!("unknown schema {schema:?}")))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(cols).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let mut out = format!("#schema={schema}/{SCHEMA_VERSION}\n");
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    let text = to_csv(schema, rows)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// A parsed result file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid("column", format!("missing column {name:?}")))
    }

    pub fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        cell.parse().map_err(|_| Error::Parse {
            line: row + 3,
            reason: format!("{cell:?} in column {:?} is not a number", self.header[col]),
        })
    }
}

fn expected_list() -> String {
    SCHEMAS
        .iter()
        .map(|(s, c)| format!("{s}: {}", c.join(",")))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses CSV text, detecting the schema from the comment line or, failing
/// that, from the header row.
pub fn parse_table(text: &str) -> Result<Table> {
    let (declared, body) = match text.strip_prefix("#schema=") {
        Some(rest) => {
            let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
            let name = line.trim().split('/').next().unwrap_or("").to_string();
            (Some(name), body)
        }
        None => (None, text),
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let schema = SCHEMAS
        .iter()
        .find(|(s, c)| declared.as_deref().is_none_or(|d| d == *s) && header.iter().map(String::as_str).eq(c.iter().copied()))
        .map(|(s, _)| s.to_string())
        .ok_or_else(|| {
            Error::invalid(
                "schema",
                format!("unrecognized columns [{}]; expected one of {}", header.join(","), expected_list()),
            )
        })?;
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
    }
    Ok(Table { schema, header, rows })
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_table(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RoundRecord;

    #[test]
    fn dynamics_round_trip() {
        let rec = RoundRecord {
            method: "hybrid@5".into(),
            alpha: 0.1,
            target: "0.9".into(),
            lambda: 0.42,
            seed: 3,
            round: 2,
            ndcg_test: 0.95,
            div_pre: 0.3,
            div_post: 0.1,
        };
        let text = to_csv("dynamics", &[rec]).unwrap();
        assert!(text.starts_with("#schema=dynamics/v1\nmethod,alpha,target,lambda,seed,round,ndcg_test,div_pre,div_post\n"));
        let t = parse_table(&text).unwrap();
        assert_eq!(t.schema, "dynamics");
        assert_eq!(t.rows, vec![vec!["hybrid@5", "0.1", "0.9", "0.42", "3", "2", "0.95", "0.3", "0.1"]]);
    }

    #[test]
    fn unknown_header_lists_expected() {
        let err = parse_table("a,b\n1,2\n").unwrap_err();
        assert!(err.to_string().contains("dynamics: method,alpha"), "{err}");
    }
}
