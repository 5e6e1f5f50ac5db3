//! Wide-format CSV ingestion.
//!
//! Header: `subject_id`, then `x0_<item>` baseline columns, `z_<cov>`
//! covariate columns and `xt<label>_<item>` follow-up columns. An empty cell
//! in a follow-up block masks the whole visit; empty baseline cells reject
//! the file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSchema, FollowUp, LongitudinalDataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Non-fatal ingestion findings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Per time label, visits with some but not all items present. Those
    /// visits are masked like fully empty ones.
    pub partial_visits: Vec<(u32, usize)>,
}

impl IngestReport {
    pub fn total_partial(&self) -> usize {
        self.partial_visits.iter().map(|(_, c)| c).sum()
    }
}

enum Column {
    Baseline(usize),
    Covariate(usize),
    FollowUp { block: usize, item: usize },
}

struct Layout {
    schema: DatasetSchema,
    columns: Vec<Column>,
}

fn parse_header(header: &csv::StringRecord) -> Result<Layout> {
    let mut fields = header.iter();
    match fields.next() {
        Some("subject_id") => {}
        other => {
            return Err(Error::SchemaMismatch(format!(
                "first column must be 'subject_id', found {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let names: Vec<&str> = fields.collect();
    let items: Vec<String> = names
        .iter()
        .filter_map(|h| h.strip_prefix("x0_"))
        .map(str::to_owned)
        .collect();
    let covariates: Vec<String> = names
        .iter()
        .filter_map(|h| h.strip_prefix("z_"))
        .map(str::to_owned)
        .collect();
    let item_index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut labels: Vec<u32> = Vec::new();
    let mut columns = Vec::with_capacity(names.len());
    let (mut n_base, mut n_cov) = (0, 0);
    let mut seen: Vec<Vec<bool>> = Vec::new();
    for h in &names {
        if h.starts_with("x0_") {
            columns.push(Column::Baseline(n_base));
            n_base += 1;
        } else if h.starts_with("z_") {
            columns.push(Column::Covariate(n_cov));
            n_cov += 1;
        } else if let Some(rest) = h.strip_prefix("xt") {
            let (label, item) = rest
                .split_once('_')
                .ok_or_else(|| Error::SchemaMismatch(format!("malformed follow-up column '{h}'")))?;
            let label: u32 = label
                .parse()
                .map_err(|_| Error::SchemaMismatch(format!("malformed time label in column '{h}'")))?;
            let item = *item_index
                .get(item)
                .ok_or_else(|| Error::SchemaMismatch(format!("column '{h}' names an item with no baseline column")))?;
            let block = match labels.iter().position(|&l| l == label) {
                Some(b) => b,
                None => {
                    labels.push(label);
                    seen.push(vec![false; items.len()]);
                    labels.len() - 1
                }
            };
            if std::mem::replace(&mut seen[block][item], true) {
                return Err(Error::SchemaMismatch(format!("duplicate column '{h}'")));
            }
            columns.push(Column::FollowUp { block, item });
        } else {
            return Err(Error::SchemaMismatch(format!("unrecognized column '{h}'")));
        }
    }
    for (block, s) in seen.iter().enumerate() {
        if let Some(missing) = s.iter().position(|&x| !x) {
            return Err(Error::SchemaMismatch(format!(
                "time {} lacks item '{}'",
                labels[block], items[missing]
            )));
        }
    }
    let schema = DatasetSchema::new(items, covariates, labels)?;
    Ok(Layout { schema, columns })
}

/// Reads a wide-format file. When `expected` is given the header must
/// describe exactly that schema.
pub fn load_csv(
    path: impl AsRef<Path>,
    expected: Option<&DatasetSchema>,
) -> Result<(LongitudinalDataset, IngestReport)> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header = reader.headers()?.clone();
    let layout = parse_header(&header)?;
    if let Some(expected) = expected {
        if expected != &layout.schema {
            return Err(Error::SchemaMismatch(format!(
                "header describes {:?}, expected {:?}",
                layout.schema, expected
            )));
        }
    }
    let schema = layout.schema;
    let (d, q, t) = (schema.d(), schema.q(), schema.time_labels.len());

    let mut ids = Vec::new();
    let mut x0: Vec<f64> = Vec::new();
    let mut z: Vec<f64> = Vec::new();
    let mut fu: Vec<Vec<f64>> = vec![Vec::new(); t];
    let mut present: Vec<Vec<usize>> = vec![Vec::new(); t];
    let mut partial = vec![0usize; t];

    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        ids.push(record[0].to_owned());
        let mut base_row = vec![0.0; d];
        let mut cov_row = vec![0.0; q];
        let mut fu_rows = vec![vec![f64::NAN; d]; t];
        let mut counts = vec![0usize; t];
        for (k, column) in layout.columns.iter().enumerate() {
            let cell = &record[k + 1];
            let name = &header[k + 1];
            let value = if cell.is_empty() {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    column: name.to_owned(),
                    message: format!("'{cell}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        column: name.to_owned(),
                        message: format!("'{cell}' is not finite"),
                    });
                }
                Some(v)
            };
            match (column, value) {
                (Column::Baseline(_) | Column::Covariate(_), None) => {
                    return Err(Error::BaselineMissing {
                        line,
                        column: name.to_owned(),
                    })
                }
                (Column::Baseline(j), Some(v)) => base_row[*j] = v,
                (Column::Covariate(j), Some(v)) => cov_row[*j] = v,
                (Column::FollowUp { .. }, None) => {}
                (Column::FollowUp { block, item }, Some(v)) => {
                    fu_rows[*block][*item] = v;
                    counts[*block] += 1;
                }
            }
        }
        x0.extend(base_row);
        z.extend(cov_row);
        for b in 0..t {
            if counts[b] > 0 && counts[b] < d {
                partial[b] += 1;
            }
            present[b].push(counts[b]);
            fu[b].extend(&fu_rows[b]);
        }
    }

    let n = ids.len();
    let followups = schema
        .time_labels
        .iter()
        .enumerate()
        .map(|(b, &label)| FollowUp {
            label,
            values: Matrix::from_row_slice(n, d, &fu[b]),
            observed: present[b].iter().map(|&c| c == d).collect(),
        })
        .collect();
    let report = IngestReport {
        partial_visits: schema.time_labels.iter().copied().zip(partial).collect(),
    };
    let dataset = LongitudinalDataset::new(
        schema,
        ids,
        Matrix::from_row_slice(n, d, &x0),
        Matrix::from_row_slice(n, q, &z),
        followups,
    )?;
    Ok((dataset, report))
}

/// Writes the wide format. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn save_csv(dataset: &LongitudinalDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let schema = dataset.schema();
    let mut header = vec!["subject_id".to_owned()];
    header.extend(schema.item_names.iter().map(|s| format!("x0_{s}")));
    header.extend(schema.covariate_names.iter().map(|s| format!("z_{s}")));
    for label in &schema.time_labels {
        header.extend(schema.item_names.iter().map(|s| format!("xt{label}_{s}")));
    }
    writer.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..dataset.n() {
        row.clear();
        row.push(dataset.subject_ids()[i].clone());
        row.extend(dataset.x0().row(i).iter().map(|v| v.to_string()));
        row.extend(dataset.z().row(i).iter().map(|v| v.to_string()));
        for fu in dataset.followups() {
            if fu.observed[i] {
                row.extend(fu.values.row(i).iter().map(|v| v.to_string()));
            } else {
                row.extend(std::iter::repeat_n(String::new(), schema.d()));
            }
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// JSON sidecar describing `d`, `q` and the time labels.
pub fn save_schema(schema: &DatasetSchema, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        d: usize,
        q: usize,
        #[serde(flatten)]
        schema: &'a DatasetSchema,
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(
        &mut w,
        &Sidecar {
            d: schema.d(),
            q: schema.q(),
            schema,
        },
    )?;
    w.flush()?;
    Ok(())
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<DatasetSchema> {
    #[derive(Deserialize)]
    struct Sidecar {
        d: usize,
        q: usize,
        #[serde(flatten)]
        schema: DatasetSchema,
    }
    let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(path.as_ref())?))?;
    if sidecar.d != sidecar.schema.d() || sidecar.q != sidecar.schema.q() {
        return Err(Error::SchemaMismatch(format!(
            "sidecar declares d={} q={} but lists {} items and {} covariates",
            sidecar.d,
            sidecar.q,
            sidecar.schema.d(),
            sidecar.schema.q()
        )));
    }
    sidecar.schema.validate()?;
    Ok(sidecar.schema)
}
