//! Wide-format longitudinal CSV: subject_id, time, y, s, x_1..x_k, z_1..z_m.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, Observation, Subject};

/// Which CSV columns feed X and Z. `None` selects every `x_*` / `z_*` column
/// in header order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnSchema {
    pub x_columns: Option<Vec<String>>,
    pub z_columns: Option<Vec<String>>,
}

fn column(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            row: 1,
            msg: format!("missing required column '{name}'"),
        })
}

fn covariate_columns(
    header: &csv::StringRecord,
    explicit: &Option<Vec<String>>,
    prefix: &str,
) -> Result<Vec<usize>> {
    match explicit {
        Some(names) => names.iter().map(|n| column(header, n)).collect(),
        None => Ok(header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()),
    }
}

pub fn read_dataset<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let (c_id, c_time, c_y, c_s) = (
        column(&header, "subject_id")?,
        column(&header, "time")?,
        column(&header, "y")?,
        column(&header, "s")?,
    );
    let cx = covariate_columns(&header, &schema.x_columns, "x_")?;
    let cz = covariate_columns(&header, &schema.z_columns, "z_")?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Observation>> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2; // 1-based line number, header on line 1
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let int = |c: usize, what: &str| -> Result<i64> {
            field(c).parse::<i64>().map_err(|_| Error::Parse {
                row,
                msg: format!("{what} '{}' is not an integer", field(c)),
            })
        };
        let count = |c: usize, what: &str| -> Result<u32> {
            let v = int(c, what)?;
            u32::try_from(v).map_err(|_| Error::Parse {
                row,
                msg: format!("{what} = {v} is out of range"),
            })
        };
        let real = |c: usize| -> Result<f64> {
            let v = field(c).parse::<f64>().map_err(|_| Error::Parse {
                row,
                msg: format!("covariate '{}' is not a number", field(c)),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    row,
                    msg: "covariate is not finite".into(),
                })
            }
        };
        let y = count(c_y, "y")?;
        let s = count(c_s, "s")?;
        if y > s {
            return Err(Error::Parse {
                row,
                msg: format!("y = {y} exceeds s = {s}"),
            });
        }
        let time = int(c_time, "time")?;
        let x = cx.iter().map(|&c| real(c)).collect::<Result<Vec<_>>>()?;
        let z = cz.iter().map(|&c| real(c)).collect::<Result<Vec<_>>>()?;
        let obs = Observation::new(y, s, x, z, time).map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let id = field(c_id).to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                msg: "empty subject_id".into(),
            });
        }
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(obs);
    }
    let subjects = order
        .into_iter()
        .map(|id| {
            let mut observations = groups.remove(&id).expect("grouped");
            observations.sort_by_key(|o| o.occasion);
            Subject { id, observations }
        })
        .collect();
    Dataset::new(subjects, cx.len(), cz.len())
}

pub fn load_dataset_csv(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?, schema)
}

pub fn write_dataset<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "subject_id".to_string(),
        "time".into(),
        "y".into(),
        "s".into(),
    ];
    header.extend((1..=data.dim_x).map(|j| format!("x_{j}")));
    header.extend((1..=data.dim_z).map(|j| format!("z_{j}")));
    w.write_record(&header)?;
    for subj in &data.subjects {
        for o in &subj.observations {
            let mut rec = vec![
                subj.id.clone(),
                o.occasion.to_string(),
                o.y.to_string(),
                o.s.to_string(),
            ];
            rec.extend(o.x.iter().chain(&o.z).map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    write_dataset(std::fs::File::create(path)?, data)
}
