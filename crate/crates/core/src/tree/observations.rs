//! Tab-separated observation files: `node_label<TAB>value` per line.

use crate::error::{Error, Result};

pub type ObservationRecord = (String, u32);

/// Parses observation records. A first line whose second column is not an
/// integer is treated as a header; blank lines are ignored.
pub fn parse_observation_records(text: &str) -> Result<Vec<ObservationRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let label = cols.next().unwrap_or("").trim();
        let value = cols.next().map(str::trim);
        if cols.next().is_some() {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected exactly two tab-separated columns".into(),
            });
        }
        let Some(value) = value else {
            return Err(Error::Parse {
                line: idx + 1,
                message: "missing value column".into(),
            });
        };
        match value.parse::<u32>() {
            Ok(v) if !label.is_empty() => records.push((label.to_string(), v)),
            Ok(_) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "empty node label".into(),
                })
            }
            Err(_) if records.is_empty() && idx == first_content_line(text) => {}
            Err(_) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("value '{value}' is not a non-negative integer"),
                })
            }
        }
    }
    Ok(records)
}

fn first_content_line(text: &str) -> usize {
    text.lines()
        .position(|l| !l.trim().is_empty())
        .unwrap_or(0)
}
