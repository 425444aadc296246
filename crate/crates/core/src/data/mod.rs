//! Column roles, CSV ingestion, deterministic splits and the
//! quantile/one-hot preprocessing the diffusion operates on.

mod dataset;
mod encoding;
mod quantile;
mod schema;

pub use dataset::{load_dataset, split_dataset, split_indices, split_sizes, ColumnData, Dataset, Split, SplitIndices};
pub use encoding::{argmax, BlockLayout, EncodedBatch, NumericTransform, TabularEncoder, SIMPLEX_TOL};
pub use quantile::{QuantileTransform, DEFAULT_CLIP};
pub use schema::{Column, ColumnKind, ColumnSpec, ColumnType, SchemaSpec, TableSchema};
