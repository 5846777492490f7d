//! Delimited-text ingestion into observation tables.

use crate::config::Columns;
use crate::error::{CliError, CliResult};
use drdid_core::{Observation, ObservationTable, PanelMode};
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawData {
    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| CliError::MissingColumn(name.to_string()))
    }
}

pub fn read_raw(path: &Path, delimiter: char) -> CliResult<RawData> {
    let io = |e: &dyn std::fmt::Display| CliError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io(&e))?;
    let headers = reader.headers().map_err(|e| io(&e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(RawData { headers, rows })
}

fn numeric(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Maps a two-level column to {0, 1}: configured order, else numeric order when
/// both levels are numbers, else lexicographic.
fn binary_levels(raw: &RawData, col: usize, name: &str, order: Option<&[String; 2]>) -> CliResult<HashMap<String, u8>> {
    let levels: BTreeSet<&str> = raw.rows.iter().map(|r| r[col].as_str()).collect();
    let found: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
    let bad = || CliError::NonBinaryTimeOrGroup { column: name.to_string(), found: found.clone() };
    if levels.len() != 2 {
        return Err(bad());
    }
    let (lo, hi) = match order {
        Some([a, b]) => {
            if !levels.contains(a.as_str()) || !levels.contains(b.as_str()) || a == b {
                return Err(bad());
            }
            (a.clone(), b.clone())
        }
        None => {
            let mut v = found.clone();
            if let (Some(a), Some(b)) = (numeric(&v[0]), numeric(&v[1])) {
                if a > b {
                    v.swap(0, 1);
                }
            }
            (v[0].clone(), v[1].clone())
        }
    };
    Ok(HashMap::from([(lo, 0), (hi, 1)]))
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub table: ObservationTable,
    /// Rows dropped for a non-numeric outcome or covariate.
    pub dropped: usize,
}

/// Builds the table for `outcome` (and `outcome2`). With `check`, the table is
/// validated; otherwise [`drdid_core::model::validate`] can report every violation.
pub fn build_table(
    raw: &RawData,
    columns: &Columns,
    outcome: &str,
    outcome2: Option<&str>,
    check: bool,
) -> CliResult<Ingested> {
    let t_col = raw.column(&columns.time)?;
    let g_col = raw.column(&columns.group)?;
    let y_col = raw.column(outcome)?;
    let z_col = outcome2.map(|z| raw.column(z)).transpose()?;
    let id_col = columns.id.as_deref().map(|c| raw.column(c)).transpose()?;
    let x_cols = columns.covariates.iter().map(|c| raw.column(c)).collect::<CliResult<Vec<_>>>()?;
    let t_map = binary_levels(raw, t_col, &columns.time, columns.time_levels.as_ref())?;
    let g_map = binary_levels(raw, g_col, &columns.group, columns.group_levels.as_ref())?;

    let mut ids: HashMap<&str, u64> = HashMap::new();
    let mut rows = Vec::with_capacity(raw.rows.len());
    let mut dropped = 0;
    for (i, r) in raw.rows.iter().enumerate() {
        let id = match id_col {
            Some(c) => {
                let next = ids.len() as u64;
                *ids.entry(r[c].as_str()).or_insert(next)
            }
            None => i as u64,
        };
        let y = numeric(&r[y_col]);
        let z = z_col.map(|c| numeric(&r[c]));
        let x: Option<Vec<f64>> = x_cols.iter().map(|&c| numeric(&r[c])).collect();
        let (Some(y), Some(x)) = (y, x) else {
            dropped += 1;
            continue;
        };
        let mut obs = Observation::new(id, t_map[&r[t_col]], g_map[&r[g_col]], y).with_x(x);
        match z {
            Some(Some(z)) => obs = obs.with_z(z),
            Some(None) => {
                dropped += 1;
                continue;
            }
            None => {}
        }
        rows.push(obs);
    }
    if rows.is_empty() {
        return Err(CliError::EmptyAfterFiltering { dropped });
    }
    let mode = match columns.panel {
        Some(true) => PanelMode::Panel,
        Some(false) => PanelMode::RepeatedCrossSection,
        None => {
            let mut periods: HashMap<u64, u8> = HashMap::new();
            let repeated = id_col.is_some()
                && rows.iter().any(|o| {
                    let seen = periods.entry(o.id).or_insert(o.t);
                    *seen != o.t
                });
            if repeated {
                PanelMode::Panel
            } else {
                PanelMode::RepeatedCrossSection
            }
        }
    };
    let names = columns.covariates.clone();
    let table = if check {
        ObservationTable::new(rows, names, mode)?
    } else {
        ObservationTable::from_rows(rows, names, mode)
    };
    Ok(Ingested { table, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn columns() -> Columns {
        Columns {
            id: Some("id".into()),
            time: "time".into(),
            group: "state".into(),
            outcomes: vec!["y".into()],
            outcome2: None,
            covariates: vec![],
            time_levels: None,
            group_levels: None,
            panel: None,
        }
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_panel_and_drops_non_numeric() {
        let f = write("id,time,state,y\na,1,NJ,3\na,2,NJ,4\nb,1,PA,.\nb,2,PA,1\nc,1,PA,2\nc,2,NJ2,5\n");
        let raw = read_raw(f.path(), ',').unwrap();
        // three group levels
        assert!(matches!(
            build_table(&raw, &columns(), "y", None, true),
            Err(CliError::NonBinaryTimeOrGroup { .. })
        ));
        let f = write("id,time,state,y\na,1,NJ,3\na,2,NJ,4\nb,1,PA,.\nb,2,PA,1\nc,1,PA,2\nc,2,PA,5\n");
        let raw = read_raw(f.path(), ',').unwrap();
        let cols = Columns { group_levels: Some(["PA".into(), "NJ".into()]), ..columns() };
        let ing = build_table(&raw, &cols, "y", None, true).unwrap();
        assert_eq!(ing.dropped, 1);
        assert_eq!(ing.table.len(), 5);
        assert_eq!(ing.table.panel_mode(), PanelMode::Panel);
        assert_eq!(ing.table.cell_sizes(), [[1, 2], [1, 1]]);
        assert_eq!(ing.table.rows()[0].id, ing.table.rows()[1].id);
    }

    #[test]
    fn numeric_levels_sort_numerically() {
        let f = write("time\tstate\ty\n10\t0\t1\n2\t0\t2\n10\t1\t3\n2\t1\t4\n");
        let raw = read_raw(f.path(), '\t').unwrap();
        let cols = Columns { id: None, ..columns() };
        let ing = build_table(&raw, &cols, "y", None, true).unwrap();
        assert_eq!(ing.table.rows()[0].t, 1);
        assert_eq!(ing.table.rows()[1].t, 0);
        assert_eq!(ing.table.panel_mode(), PanelMode::RepeatedCrossSection);
    }

    #[test]
    fn missing_column_and_empty() {
        let f = write("time,state,y\n0,0,NA\n1,1,NA\n");
        let raw = read_raw(f.path(), ',').unwrap();
        let cols = Columns { id: None, ..columns() };
        assert!(matches!(build_table(&raw, &cols, "w", None, true), Err(CliError::MissingColumn(c)) if c == "w"));
        assert!(matches!(build_table(&raw, &cols, "y", None, true), Err(CliError::EmptyAfterFiltering { dropped: 2 })));
    }
}
