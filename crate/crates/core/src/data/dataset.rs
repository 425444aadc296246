use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::schema::{Column, ColumnKind, ColumnType, SchemaSpec, TableSchema};
use crate::error::{Error, Result};
use crate::rng;

/// Raw column storage. Categorical cells hold indices into the column's
/// value ordering.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numerical(Vec<f64>),
    Categorical(Vec<u32>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numerical(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numerical(v) => ColumnData::Numerical(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: TableSchema,
    columns: Vec<ColumnData>,
    /// Rows dropped at ingestion because of missing cells.
    pub dropped_rows: usize,
}

const MISSING: [&str; 4] = ["", "?", "na", "nan"];

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    MISSING.iter().any(|m| c.eq_ignore_ascii_case(m))
}

impl Dataset {
    pub fn new(schema: TableSchema, columns: Vec<ColumnData>) -> Result<Self> {
        schema.validate()?;
        if columns.len() != schema.len() {
            return Err(Error::WidthMismatch {
                expected: schema.len(),
                got: columns.len(),
            });
        }
        let n = columns.first().map_or(0, ColumnData::len);
        for (col, data) in schema.columns.iter().zip(&columns) {
            if data.len() != n {
                return Err(Error::Invalid(format!("column `{}` has {} rows, expected {n}", col.name, data.len())));
            }
            match (&col.ty, data) {
                (ColumnType::Numerical, ColumnData::Numerical(v)) => {
                    if let Some(r) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::NotNumeric {
                            row: r,
                            column: col.name.clone(),
                            value: v[r].to_string(),
                        });
                    }
                }
                (ColumnType::Categorical { values }, ColumnData::Categorical(v)) => {
                    if let Some(&bad) = v.iter().find(|&&i| i as usize >= values.len()) {
                        return Err(Error::UnknownCategory {
                            column: col.name.clone(),
                            value: format!("#{bad}"),
                        });
                    }
                }
                _ => return Err(Error::Schema(format!("column `{}` storage does not match its kind", col.name))),
            }
        }
        Ok(Dataset {
            schema,
            columns,
            dropped_rows: 0,
        })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, ColumnData::len)
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn numerical(&self, col: usize) -> &[f64] {
        match &self.columns[col] {
            ColumnData::Numerical(v) => v,
            ColumnData::Categorical(_) => panic!("column {col} is categorical"),
        }
    }

    pub fn categorical(&self, col: usize) -> &[u32] {
        match &self.columns[col] {
            ColumnData::Categorical(v) => v,
            ColumnData::Numerical(_) => panic!("column {col} is numerical"),
        }
    }

    pub fn target(&self) -> &[u32] {
        self.categorical(self.schema.target_index())
    }

    pub fn column_by_name(&self, name: &str) -> Result<&ColumnData> {
        Ok(&self.columns[self.schema.index_of(name)?])
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(indices)).collect(),
            dropped_rows: 0,
        }
    }

    /// Reads a CSV against a schema file. Categorical columns without an
    /// explicit ordering are numbered in first-seen order.
    pub fn read_csv<R: Read>(reader: R, spec: &SchemaSpec) -> Result<Self> {
        spec.check_names()?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let positions: Vec<usize> = spec
            .columns
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h == c.name)
                    .ok_or_else(|| Error::MissingColumn(c.name.clone()))
            })
            .collect::<Result<_>>()?;

        let mut orderings: Vec<Vec<String>> = spec
            .columns
            .iter()
            .map(|c| c.values.clone().unwrap_or_default())
            .collect();
        let mut lookup: Vec<HashMap<String, u32>> = orderings
            .iter()
            .map(|vals| vals.iter().enumerate().map(|(i, v)| (v.clone(), i as u32)).collect())
            .collect();
        let mut data: Vec<ColumnData> = spec
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Numerical => ColumnData::Numerical(Vec::new()),
                ColumnKind::Categorical => ColumnData::Categorical(Vec::new()),
            })
            .collect();

        let mut dropped = 0;
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let cells: Vec<&str> = positions.iter().map(|&p| record.get(p).unwrap_or("")).collect();
            if cells.iter().any(|c| is_missing(c)) {
                dropped += 1;
                continue;
            }
            for (j, cell) in cells.iter().enumerate() {
                let col = &spec.columns[j];
                match &mut data[j] {
                    ColumnData::Numerical(v) => {
                        let x: f64 = cell.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| {
                            Error::NotNumeric {
                                row,
                                column: col.name.clone(),
                                value: cell.to_string(),
                            }
                        })?;
                        v.push(x);
                    }
                    ColumnData::Categorical(v) => {
                        let idx = match lookup[j].get(*cell) {
                            Some(&i) => i,
                            None if col.values.is_some() => {
                                return Err(Error::UnknownCategory {
                                    column: col.name.clone(),
                                    value: cell.to_string(),
                                })
                            }
                            None => {
                                let i = orderings[j].len() as u32;
                                orderings[j].push(cell.to_string());
                                lookup[j].insert(cell.to_string(), i);
                                i
                            }
                        };
                        v.push(idx);
                    }
                }
            }
        }
        if dropped > 0 {
            log::info!("dropped {dropped} rows with missing cells");
        }

        let columns = spec
            .columns
            .iter()
            .zip(orderings)
            .map(|(c, values)| match c.kind {
                ColumnKind::Numerical => Column::numerical(c.name.clone()),
                ColumnKind::Categorical => Column::categorical(c.name.clone(), values),
            })
            .collect();
        let schema = TableSchema::new(columns, spec.target.clone(), spec.sensitive.clone())?;
        let mut ds = Dataset::new(schema, data)?;
        ds.dropped_rows = dropped;
        Ok(ds)
    }

    /// Writes the raw table with the schema's column order as header.
    /// `extra` appends named columns of pre-rendered cells.
    pub fn write_csv<W: Write>(&self, writer: W, extra: &[(String, Vec<String>)]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        header.extend(extra.iter().map(|(n, _)| n.as_str()));
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            for (col, data) in self.schema.columns.iter().zip(&self.columns) {
                record.push(match data {
                    ColumnData::Numerical(v) => format!("{}", v[r]),
                    ColumnData::Categorical(v) => col.values().unwrap()[v[r] as usize].clone(),
                });
            }
            for (_, cells) in extra {
                record.push(cells[r].clone());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a header-bearing CSV file against a schema file.
pub fn load_dataset(path: &Path, spec: &SchemaSpec) -> Result<Dataset> {
    Dataset::read_csv(std::fs::File::open(path)?, spec)
}

/// Row indices of a 50/25/25 partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sizes of the partition: half (rounded down) for training, then the
/// remainder halved (rounded down) for validation, the rest for test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n / 2;
    let validation = (n - train) / 2;
    (train, validation, n - train - validation)
}

pub fn split_indices(n: usize, seed: u64) -> SplitIndices {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::derive(seed, "split"), 0));
    let (a, b, _) = split_sizes(n);
    SplitIndices {
        train: order[..a].to_vec(),
        validation: order[a..a + b].to_vec(),
        test: order[a + b..].to_vec(),
    }
}

pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
}

pub fn split_dataset(ds: &Dataset, seed: u64) -> Result<Split> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let indices = split_indices(ds.n_rows(), seed);
    Ok(Split {
        train: ds.select(&indices.train),
        validation: ds.select(&indices.validation),
        test: ds.select(&indices.test),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SchemaSpec {
        SchemaSpec::from_json(
            r#"{"columns":[{"name":"age","kind":"numerical"},{"name":"sex","kind":"categorical"},
               {"name":"y","kind":"categorical","values":["no","yes"]}],"target":"y","sensitive":["sex"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_three_rows() {
        let csv = "age,sex,y\n31,m,no\n45,f,yes\n22,m,yes\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &spec()).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.numerical(0), &[31.0, 45.0, 22.0]);
        assert_eq!(ds.categorical(1), &[0, 1, 0]);
        assert_eq!(ds.schema().columns[1].values().unwrap(), ["m", "f"]);
        assert_eq!(ds.target(), &[0, 1, 1]);
    }

    #[test]
    fn missing_target_column_is_an_error() {
        let csv = "age,sex\n31,m\n";
        let err = Dataset::read_csv(csv.as_bytes(), &spec()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "y"));
        assert!(err.to_string().contains("missing column"));
    }

    #[test]
    fn unknown_category_names_column_and_value() {
        let csv = "age,sex,y\n31,m,maybe\n45,f,yes\n";
        let err = Dataset::read_csv(csv.as_bytes(), &spec()).unwrap_err();
        match err {
            Error::UnknownCategory { column, value } => {
                assert_eq!(column, "y");
                assert_eq!(value, "maybe");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let csv = "age,sex,y\n31,m,no\nold,f,yes\n";
        match Dataset::read_csv(csv.as_bytes(), &spec()).unwrap_err() {
            Error::NotNumeric { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "age");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rows_with_missing_cells_are_dropped() {
        let csv = "age,sex,y\n31,m,no\n,f,yes\n40,?,no\n50,f,yes\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &spec()).unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.dropped_rows, 2);
    }

    #[test]
    fn split_sizes_take_floor_halves() {
        assert_eq!(split_sizes(8), (4, 2, 2));
        assert_eq!(split_sizes(22611 + 11305 + 11306), (22611, 11305, 11306));
        assert_eq!(split_sizes(22605 + 11303 + 11303), (22605, 11303, 11303));
        assert_eq!(split_sizes(8322 + 4161 + 4161), (8322, 4161, 4161));
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let a = split_indices(101, 9);
        let b = split_indices(101, 9);
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        assert_ne!(a, split_indices(101, 10));
    }

    #[test]
    fn csv_write_then_read_preserves_rows() {
        let csv = "age,sex,y\n31.5,m,no\n45,f,yes\n";
        let ds = Dataset::read_csv(csv.as_bytes(), &spec()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, &[]).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), &ds.schema().spec()).unwrap();
        assert_eq!(ds, back);
    }
}
