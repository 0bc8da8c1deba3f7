//! Trial records as CSV.
//!
//! Column order: `participant_id`, the four arm labels, one `{variable}_w{t}`
//! column per variable and week, then `R` (1 responder, 0 nonresponder),
//! `classification_week`, `A`, `rescue_week`, `rescue_option`, `Y`, `Y_bin`,
//! `Y_adj` and `path`. Unset values are empty cells. `path` lists decisions
//! as `week:action:probability` joined by `;`, where the action is `W` (wait)
//! or `R=option`. Numbers use the shortest representation that parses back
//! to the same `f64`, so writing and reading is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    Action, ArmLabels, AssignmentPath, AssignmentStep, Classification, ObservedTrajectory, Response, TrialRecord,
    VariableId, Week,
};

const LEADING: [&str; 5] = ["participant_id", "cutoff_arm", "time_arm", "variable_arm", "rescue_arm"];
const TRAILING: [&str; 9] = [
    "R",
    "classification_week",
    "A",
    "rescue_week",
    "rescue_option",
    "Y",
    "Y_bin",
    "Y_adj",
    "path",
];

/// Header for records observing `variables` over `horizon` weeks.
pub fn header(variables: &[VariableId], horizon: Week) -> Vec<String> {
    let mut h: Vec<String> = LEADING.iter().map(|s| s.to_string()).collect();
    for v in variables {
        for t in 1..=horizon {
            h.push(format!("{v}_w{t}"));
        }
    }
    h.extend(TRAILING.iter().map(|s| s.to_string()));
    h
}

fn encode_path(path: &AssignmentPath) -> String {
    path.steps
        .iter()
        .map(|s| {
            let action = match &s.action {
                Action::Wait => "W".to_string(),
                Action::Rescue(o) => format!("R={o}"),
            };
            format!("{}:{action}:{}", s.week, s.probability)
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn decode_path(cell: &str, row: usize) -> Result<AssignmentPath> {
    let bad = || Error::Schema(format!("row {row}: malformed path `{cell}`"));
    if cell.is_empty() {
        return Ok(AssignmentPath::default());
    }
    let steps = cell
        .split(';')
        .map(|step| {
            let mut parts = step.splitn(3, ':');
            let week = parts.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?;
            let action = match parts.next().ok_or_else(bad)? {
                "W" => Action::Wait,
                a => Action::Rescue(a.strip_prefix("R=").filter(|o| !o.is_empty()).ok_or_else(bad)?.to_string()),
            };
            let probability = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
            Ok(AssignmentStep {
                week,
                action,
                probability,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AssignmentPath { steps })
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes `records` as CSV. All records must observe the same variables over
/// the same horizon.
pub fn write_records<W: Write>(writer: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let (variables, horizon) = match records.first() {
        Some(r) => (r.trajectory.variables().cloned().collect::<Vec<_>>(), r.trajectory.horizon()),
        None => (Vec::new(), 0),
    };
    w.write_record(header(&variables, horizon))?;
    for r in records {
        let same = r.trajectory.horizon() == horizon && r.trajectory.variables().eq(variables.iter());
        if !same {
            return Err(Error::Schema(format!(
                "record {} observes different variables or weeks than the first record",
                r.participant_id
            )));
        }
        let mut row = vec![
            r.participant_id.to_string(),
            opt(&r.arms.cutoff),
            opt(&r.arms.time),
            opt(&r.arms.variable),
            opt(&r.arms.rescue),
        ];
        for (_, values) in r.trajectory.series() {
            row.extend(values.iter().map(f64::to_string));
        }
        row.push(
            r.classification
                .map(|c| flag(!c.response.is_nonresponder()).to_string())
                .unwrap_or_default(),
        );
        row.push(r.classification.map(|c| c.week.to_string()).unwrap_or_default());
        row.push(flag(r.rescued).into());
        row.push(opt(&r.rescue_week));
        row.push(opt(&r.rescue_option));
        row.push(r.outcome.to_string());
        row.push(flag(r.success).into());
        row.push(r.adjusted_outcome.to_string());
        row.push(encode_path(&r.path));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_records(File::create(path)?, records)
}

/// `(variable, horizon)` pairs in column order.
fn observed_layout(columns: &[String]) -> Result<(Vec<VariableId>, Week)> {
    let mut variables: Vec<VariableId> = Vec::new();
    let mut horizon: Option<Week> = None;
    let mut expected_week = 1;
    for col in columns {
        let (name, week) = col
            .rsplit_once("_w")
            .and_then(|(n, w)| Some((n, w.parse::<Week>().ok()?)))
            .ok_or_else(|| Error::Schema(format!("unexpected column `{col}`")))?;
        if variables.last().is_none_or(|v| v.as_str() != name) {
            if let Some(prev) = variables.last() {
                let h = expected_week - 1;
                if *horizon.get_or_insert(h) != h {
                    return Err(Error::Schema(format!("variable `{prev}` has {h} week columns")));
                }
            }
            variables.push(VariableId::new(name).map_err(|e| Error::Schema(e.to_string()))?);
            expected_week = 1;
        }
        if week != expected_week {
            return Err(Error::Schema(format!("column `{col}` out of order; expected week {expected_week}")));
        }
        expected_week += 1;
    }
    let last = expected_week - 1;
    if !variables.is_empty() && *horizon.get_or_insert(last) != last {
        return Err(Error::Schema("variables have different numbers of week columns".into()));
    }
    Ok((variables, horizon.unwrap_or(0)))
}

fn parse<T: std::str::FromStr>(cell: &str, column: &str, row: usize) -> Result<T> {
    cell.parse()
        .map_err(|_| Error::Schema(format!("row {row}: cannot parse `{cell}` in column `{column}`")))
}

fn parse_opt<T: std::str::FromStr>(cell: &str, column: &str, row: usize) -> Result<Option<T>> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse(cell, column, row).map(Some)
    }
}

fn parse_flag(cell: &str, column: &str, row: usize) -> Result<bool> {
    match cell {
        "1" => Ok(true),
        "0" => Ok(false),
        _ => Err(Error::Schema(format!("row {row}: `{column}` must be 0 or 1, got `{cell}`"))),
    }
}

fn text(cell: &str) -> Option<String> {
    (!cell.is_empty()).then(|| cell.to_string())
}

/// Reads records written by [`write_records`], checking the header exactly.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if head.len() < LEADING.len() + TRAILING.len() || head[..LEADING.len()] != LEADING {
        return Err(Error::Schema(format!("header must start with {}", LEADING.join(","))));
    }
    if head[head.len() - TRAILING.len()..] != TRAILING {
        return Err(Error::Schema(format!("header must end with {}", TRAILING.join(","))));
    }
    let (variables, horizon) = observed_layout(&head[LEADING.len()..head.len() - TRAILING.len()])?;
    let t = horizon as usize;
    let mut out = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let line = k + 2;
        let cell = |j: usize| row.get(j).unwrap_or("");
        let participant_id = parse(cell(0), "participant_id", line)?;
        let arms = ArmLabels {
            cutoff: text(cell(1)),
            time: text(cell(2)),
            variable: text(cell(3)),
            rescue: text(cell(4)),
        };
        let mut series = Vec::with_capacity(variables.len());
        for (vi, v) in variables.iter().enumerate() {
            let start = LEADING.len() + vi * t;
            let values = (start..start + t)
                .map(|j| parse::<f64>(cell(j), &head[j], line))
                .collect::<Result<Vec<_>>>()?;
            series.push((v.clone(), values));
        }
        let trajectory = ObservedTrajectory::new(series).map_err(|e| Error::Schema(format!("row {line}: {e}")))?;
        let base = LEADING.len() + variables.len() * t;
        let response: Option<bool> = match cell(base) {
            "" => None,
            c => Some(parse_flag(c, "R", line)?),
        };
        let week: Option<Week> = parse_opt(cell(base + 1), "classification_week", line)?;
        let classification = match (response, week) {
            (Some(responder), Some(week)) => Some(Classification {
                response: if responder {
                    Response::Responder
                } else {
                    Response::Nonresponder
                },
                week,
            }),
            (None, None) => None,
            _ => {
                return Err(Error::Schema(format!(
                    "row {line}: `R` and `classification_week` must both be set or both empty"
                )))
            }
        };
        out.push(TrialRecord {
            participant_id,
            arms,
            trajectory,
            classification,
            rescued: parse_flag(cell(base + 2), "A", line)?,
            rescue_week: parse_opt(cell(base + 3), "rescue_week", line)?,
            rescue_option: text(cell(base + 4)),
            outcome: parse(cell(base + 5), "Y", line)?,
            success: parse_flag(cell(base + 6), "Y_bin", line)?,
            adjusted_outcome: parse(cell(base + 7), "Y_adj", line)?,
            path: decode_path(cell(base + 8), line)?,
        });
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrialRecord>> {
    read_records(File::open(path)?)
}
