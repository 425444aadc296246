use serde::{Deserialize, Serialize};

use super::dataset::{ColumnData, Dataset};
use super::quantile::QuantileTransform;
use super::schema::TableSchema;
use crate::error::{Error, Result};

/// Shape of a concatenated row: a numeric block followed by one
/// probability block per categorical column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub numeric: usize,
    pub cardinalities: Vec<usize>,
}

impl BlockLayout {
    pub fn new(numeric: usize, cardinalities: Vec<usize>) -> Self {
        BlockLayout { numeric, cardinalities }
    }

    pub fn width(&self) -> usize {
        self.numeric + self.cardinalities.iter().sum::<usize>()
    }

    /// `(offset, len)` of every categorical block within a row.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cardinalities.iter().scan(self.numeric, |off, &k| {
            let start = *off;
            *off += k;
            Some((start, k))
        })
    }
}

/// Row-major matrix of encoded rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    layout: BlockLayout,
    rows: usize,
    data: Vec<f64>,
}

pub const SIMPLEX_TOL: f64 = 1e-9;

impl EncodedBatch {
    pub fn new(layout: BlockLayout, data: Vec<f64>) -> Result<Self> {
        let w = layout.width();
        if w == 0 {
            if !data.is_empty() {
                return Err(Error::WidthMismatch { expected: 0, got: data.len() });
            }
        } else if data.len() % w != 0 {
            return Err(Error::WidthMismatch {
                expected: w,
                got: data.len() % w,
            });
        }
        let rows = if w == 0 { 0 } else { data.len() / w };
        let batch = EncodedBatch { layout, rows, data };
        for r in 0..rows {
            for (off, k) in batch.layout.blocks() {
                let block = &batch.row(r)[off..off + k];
                let sum: f64 = block.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL || block.iter().any(|&p| p < 0.0) {
                    return Err(Error::NotSimplex(sum));
                }
            }
        }
        Ok(batch)
    }

    pub fn empty(layout: BlockLayout) -> Self {
        EncodedBatch {
            layout,
            rows: 0,
            data: Vec::new(),
        }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn numeric(&self, r: usize) -> &[f64] {
        &self.row(r)[..self.layout.numeric]
    }

    /// Categorical block `j` of row `r`.
    pub fn block(&self, r: usize, j: usize) -> &[f64] {
        let (off, k) = self.layout.blocks().nth(j).expect("block index");
        &self.row(r)[off..off + k]
    }

    pub fn select(&self, rows: &[usize]) -> EncodedBatch {
        let mut data = Vec::with_capacity(rows.len() * self.width());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        EncodedBatch {
            layout: self.layout.clone(),
            rows: rows.len(),
            data,
        }
    }
}

/// Per-numerical-column transform. `Constant` is the opt-in passthrough for
/// columns with a single distinct training value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NumericTransform {
    Quantile(QuantileTransform),
    Constant { value: f64 },
}

impl NumericTransform {
    fn forward(&self, x: f64) -> f64 {
        match self {
            NumericTransform::Quantile(q) => q.transform(x),
            NumericTransform::Constant { .. } => 0.0,
        }
    }

    fn inverse(&self, z: f64) -> f64 {
        match self {
            NumericTransform::Quantile(q) => q.inverse(z),
            NumericTransform::Constant { value } => *value,
        }
    }
}

/// Fitted preprocessing: quantile transforms for numerical columns and
/// one-hot blocks for categorical columns, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularEncoder {
    schema: TableSchema,
    numerical: Vec<usize>,
    categorical: Vec<usize>,
    transforms: Vec<NumericTransform>,
}

impl TabularEncoder {
    /// Fits on the training split only.
    pub fn fit(train: &Dataset, constant_passthrough: bool) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let schema = train.schema().clone();
        let numerical = schema.numerical_indices();
        let categorical = schema.categorical_indices();
        let transforms = numerical
            .iter()
            .map(|&c| {
                let values = train.numerical(c);
                match QuantileTransform::fit(values) {
                    Ok(q) => Ok(NumericTransform::Quantile(q)),
                    Err(Error::ConstantColumn(_)) if constant_passthrough => {
                        Ok(NumericTransform::Constant { value: values[0] })
                    }
                    Err(Error::ConstantColumn(_)) => Err(Error::ConstantColumn(schema.columns[c].name.clone())),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        Ok(TabularEncoder {
            schema,
            numerical,
            categorical,
            transforms,
        })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn transforms(&self) -> &[NumericTransform] {
        &self.transforms
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new(
            self.numerical.len(),
            self.categorical
                .iter()
                .map(|&c| self.schema.cardinality(c).unwrap())
                .collect(),
        )
    }

    /// Position of schema column `col` among the categorical blocks.
    pub fn block_of(&self, col: usize) -> Option<usize> {
        self.categorical.iter().position(|&c| c == col)
    }

    pub fn encode(&self, ds: &Dataset) -> Result<EncodedBatch> {
        if ds.schema() != &self.schema {
            return Err(Error::Schema("dataset schema differs from the fitted encoder".into()));
        }
        let layout = self.layout();
        let w = layout.width();
        let n = ds.n_rows();
        let mut data = vec![0.0; n * w];
        for (j, (&c, t)) in self.numerical.iter().zip(&self.transforms).enumerate() {
            for (r, &x) in ds.numerical(c).iter().enumerate() {
                data[r * w + j] = t.forward(x);
            }
        }
        for (&c, (off, _)) in self.categorical.iter().zip(layout.blocks()) {
            for (r, &k) in ds.categorical(c).iter().enumerate() {
                data[r * w + off + k as usize] = 1.0;
            }
        }
        Ok(EncodedBatch { layout, rows: n, data })
    }

    /// Inverts `encode`: argmax per categorical block, inverse quantile
    /// interpolation for numerics.
    pub fn decode(&self, batch: &EncodedBatch) -> Result<Dataset> {
        let layout = self.layout();
        if batch.layout() != &layout {
            return Err(Error::WidthMismatch {
                expected: layout.width(),
                got: batch.width(),
            });
        }
        let n = batch.rows();
        let mut columns: Vec<Option<ColumnData>> = vec![None; self.schema.len()];
        for (j, (&c, t)) in self.numerical.iter().zip(&self.transforms).enumerate() {
            columns[c] = Some(ColumnData::Numerical((0..n).map(|r| t.inverse(batch.row(r)[j])).collect()));
        }
        for (b, &c) in self.categorical.iter().enumerate() {
            columns[c] = Some(ColumnData::Categorical(
                (0..n).map(|r| argmax(batch.block(r, b)) as u32).collect(),
            ));
        }
        Dataset::new(self.schema.clone(), columns.into_iter().map(Option::unwrap).collect())
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
