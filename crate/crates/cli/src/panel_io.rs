//! Long-format panel CSV: `subject,time,x,z1,...,zp`, sorted by subject then time.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use sdecov_core::model::{DiffusionSpec, ModelSpec, TimeGrid};
use sdecov_core::simulate::{CovariatePath, Panel, Subject, SubjectPath};

use crate::error::{CliError, CliResult};

/// Largest relative deviation of a time step from the uniform step.
pub const SPACING_TOL: f64 = 1e-9;

/// One subject as read from disk, before a model is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSubject {
    pub id: String,
    pub grid: TimeGrid,
    pub states: Vec<f64>,
    /// Covariate columns, each with one value per knot.
    pub covariates: Vec<Vec<f64>>,
    /// File row of the subject's first record (the header is row 1).
    pub first_row: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub n_covariates: usize,
    pub subjects: Vec<RawSubject>,
}

impl RawPanel {
    pub fn n_rows(&self) -> usize {
        self.subjects.iter().map(|s| s.states.len()).sum()
    }

    /// Attaches `spec`; per-subject diffusions are looked up by id.
    pub fn into_panel(self, spec: &ModelSpec, diffusions: &BTreeMap<String, DiffusionSpec>) -> CliResult<Panel> {
        if self.n_covariates != spec.n_covariates() {
            return Err(CliError::Usage(format!(
                "data has {} covariate columns but the model uses {}",
                self.n_covariates,
                spec.n_covariates()
            )));
        }
        if let Some(id) = diffusions.keys().find(|id| !self.subjects.iter().any(|s| &s.id == *id)) {
            return Err(CliError::config(
                &format!("subject_diffusions.{id}"),
                "no such subject in the data",
            ));
        }
        let subjects = self
            .subjects
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let path = SubjectPath::new(i, s.grid, s.states)?;
                let covariates = if s.covariates.is_empty() {
                    CovariatePath::empty(i, s.grid)
                } else {
                    CovariatePath::from_columns(i, s.grid, &s.covariates)?
                };
                Ok(Subject {
                    diffusion: diffusions.get(&s.id).copied(),
                    id: s.id,
                    path,
                    covariates,
                })
            })
            .collect::<sdecov_core::Result<Vec<_>>>()?;
        Ok(Panel::new(spec.clone(), subjects)?)
    }
}

fn header(p: usize) -> Vec<String> {
    let mut h = vec!["subject".to_string(), "time".into(), "x".into()];
    h.extend((1..=p).map(|l| format!("z{l}")));
    h
}

pub fn panel_to_csv(panel: &Panel) -> CliResult<Vec<u8>> {
    let p = panel.spec.n_covariates();
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Usage(format!("writing panel CSV: {e}"));
    w.write_record(header(p)).map_err(to_err)?;
    for s in &panel.subjects {
        let grid = &s.path.grid;
        for k in 0..grid.n_knots() {
            let mut rec = vec![s.id.clone(), grid.knot(k).to_string(), s.path.states[k].to_string()];
            rec.extend(s.covariates.at(k).iter().map(|z| z.to_string()));
            w.write_record(&rec).map_err(to_err)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Usage(format!("writing panel CSV: {e}")))
}

pub fn read_panel(path: &Path) -> CliResult<RawPanel> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_panel(path, &bytes)
}

struct Builder {
    id: String,
    first_row: u64,
    times: Vec<(u64, f64)>,
    states: Vec<f64>,
    covariates: Vec<Vec<f64>>,
}

pub fn parse_panel(path: &Path, bytes: &[u8]) -> CliResult<RawPanel> {
    let row_err = |row: u64, message: String| CliError::Ingest {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let head = reader
        .headers()
        .map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = head.iter().collect();
    if names.len() < 3 || names[..3] != ["subject", "time", "x"] {
        return Err(row_err(1, "header must start with subject,time,x".into()));
    }
    let p = names.len() - 3;
    for (l, name) in names[3..].iter().enumerate() {
        if *name != format!("z{}", l + 1) {
            return Err(row_err(1, format!("covariate column {} must be named z{}, found `{name}`", l + 1, l + 1)));
        }
    }

    let mut done: Vec<Builder> = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<Builder> = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let row = rec.position().map(|pos| pos.line()).unwrap_or(0);
        if rec.len() != names.len() {
            return Err(row_err(row, format!("expected {} fields, found {}", names.len(), rec.len())));
        }
        let num = |col: usize| -> CliResult<f64> {
            let field = rec[col].trim();
            if field.is_empty() {
                return Err(row_err(row, format!("missing value in column `{}`", names[col])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| row_err(row, format!("column `{}`: `{field}` is not a number", names[col])))?;
            if !v.is_finite() {
                return Err(row_err(row, format!("column `{}` is not finite", names[col])));
            }
            Ok(v)
        };
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(row_err(row, "missing value in column `subject`".into()));
        }
        let t = num(1)?;
        let x = num(2)?;
        let z: Vec<f64> = (3..names.len()).map(num).collect::<CliResult<_>>()?;
        if current.as_ref().map(|b| b.id != id).unwrap_or(true) {
            if seen.contains(&id) {
                return Err(row_err(row, format!("subject `{id}` reappears after other subjects; rows must be grouped")));
            }
            seen.insert(id.clone());
            done.extend(current.take());
            current = Some(Builder {
                id,
                first_row: row,
                times: Vec::new(),
                states: Vec::new(),
                covariates: vec![Vec::new(); p],
            });
        }
        let b = current.as_mut().expect("set above");
        b.times.push((row, t));
        b.states.push(x);
        for (col, v) in b.covariates.iter_mut().zip(z) {
            col.push(v);
        }
    }
    done.extend(current);
    if done.is_empty() {
        return Err(row_err(2, "no data rows".into()));
    }
    let subjects = done
        .into_iter()
        .map(|b| {
            let grid = infer_grid(&b.id, b.first_row, &b.times).map_err(|(row, m)| row_err(row, m))?;
            Ok(RawSubject {
                id: b.id,
                grid,
                states: b.states,
                covariates: b.covariates,
                first_row: b.first_row,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(RawPanel {
        n_covariates: p,
        subjects,
    })
}

/// Uniform grid through the given `(row, time)` pairs, starting at zero.
fn infer_grid(id: &str, first_row: u64, times: &[(u64, f64)]) -> Result<TimeGrid, (u64, String)> {
    if times.len() < 2 {
        return Err((first_row, format!("subject `{id}` needs at least two rows")));
    }
    if times[0].1 != 0.0 {
        return Err((first_row, format!("subject `{id}` must start at time 0, found {}", times[0].1)));
    }
    let n = times.len() - 1;
    let t_end = times[n].1;
    let grid = TimeGrid::new(t_end, n).map_err(|e| (times[n].0, format!("subject `{id}`: {e}")))?;
    let h = grid.step();
    for w in times.windows(2) {
        let (row, t) = w[1];
        let dt = t - w[0].1;
        if !(dt > 0.0) {
            return Err((row, format!("subject `{id}`: times must increase")));
        }
        if (dt - h).abs() > SPACING_TOL * h {
            return Err((
                row,
                format!("subject `{id}`: step {dt} departs from uniform spacing {h}"),
            ));
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> CliResult<RawPanel> {
        parse_panel(Path::new("p.csv"), s.as_bytes())
    }

    #[test]
    fn minimal_panel() {
        let p = parse("subject,time,x\na,0,1\na,0.5,2\n").unwrap();
        assert_eq!(p.subjects.len(), 1);
        assert_eq!(p.subjects[0].grid.n_steps(), 1);
        assert_eq!(p.subjects[0].grid.t_end(), 0.5);
    }

    #[test]
    fn missing_value_names_row() {
        let err = parse("subject,time,x,z1\na,0,1,0\na,1,,0\n").unwrap_err();
        match err {
            CliError::Ingest { row, message, .. } => {
                assert_eq!(row, 3);
                assert!(message.contains("`x`"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn ragged_and_regrouped_rows() {
        assert!(matches!(parse("subject,time,x\na,0,1\na,1\n"), Err(CliError::Ingest { row: 3, .. })));
        let e = parse("subject,time,x\na,0,1\na,1,1\nb,0,1\nb,1,1\na,2,1\n").unwrap_err();
        assert!(matches!(e, CliError::Ingest { row: 6, .. }), "{e}");
    }

    #[test]
    fn nonuniform_spacing() {
        let e = parse("subject,time,x\na,0,1\na,1,1\na,2.1,1\n").unwrap_err();
        assert!(matches!(e, CliError::Ingest { row: 3, .. }), "{e}");
        assert!(parse("subject,time,x\na,0,1\na,1,1\na,2.0000000000001,1\n").is_ok());
    }

    #[test]
    fn bad_header() {
        assert!(parse("id,time,x\na,0,1\na,1,1\n").is_err());
        assert!(parse("subject,time,x,z2\na,0,1,1\na,1,1,1\n").is_err());
    }
}
