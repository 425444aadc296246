use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

/// A column as written in a schema file. Categorical columns may omit
/// `values`, in which case categories are numbered in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
}

/// The schema file: `{"columns":[{"name","kind","values"?}],"target","sensitive":[...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub columns: Vec<ColumnSpec>,
    pub target: String,
    #[serde(default)]
    pub sensitive: Vec<String>,
}

impl SchemaSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub(crate) fn check_names(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        let kind_of = |name: &str| {
            self.columns
                .iter()
                .find(|c| c.name == name)
                .map(|c| c.kind)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        if kind_of(&self.target)? != ColumnKind::Categorical {
            return Err(Error::Schema(format!("target `{}` must be categorical", self.target)));
        }
        let mut sens = HashSet::new();
        for s in &self.sensitive {
            if kind_of(s)? != ColumnKind::Categorical {
                return Err(Error::Schema(format!("sensitive column `{s}` must be categorical")));
            }
            if s == &self.target {
                return Err(Error::Schema(format!("`{s}` is both target and sensitive")));
            }
            if !sens.insert(s.as_str()) {
                return Err(Error::Schema(format!("sensitive column `{s}` listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnType {
    Numerical,
    Categorical { values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub ty: ColumnType,
}

impl Column {
    pub fn numerical(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            ty: ColumnType::Numerical,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Column {
            name: name.into(),
            ty: ColumnType::Categorical {
                values: values.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self.ty {
            ColumnType::Numerical => ColumnKind::Numerical,
            ColumnType::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    /// Number of categories, `None` for numerical columns.
    pub fn cardinality(&self) -> Option<usize> {
        match &self.ty {
            ColumnType::Numerical => None,
            ColumnType::Categorical { values } => Some(values.len()),
        }
    }

    pub fn values(&self) -> Option<&[String]> {
        match &self.ty {
            ColumnType::Numerical => None,
            ColumnType::Categorical { values } => Some(values),
        }
    }
}

/// Resolved schema: every categorical column carries its final value ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<Column>,
    pub target: String,
    pub sensitive: Vec<String>,
}

impl TableSchema {
    pub fn new(columns: Vec<Column>, target: impl Into<String>, sensitive: Vec<String>) -> Result<Self> {
        let schema = TableSchema {
            columns,
            target: target.into(),
            sensitive,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().check_names()?;
        for c in &self.columns {
            if let Some(k) = c.cardinality() {
                if k < 2 {
                    return Err(Error::Schema(format!(
                        "categorical column `{}` has {k} categories, need at least 2",
                        c.name
                    )));
                }
                let mut seen = HashSet::new();
                if let Some(v) = c.values().unwrap().iter().find(|v| !seen.insert(v.as_str())) {
                    return Err(Error::Schema(format!("column `{}` repeats value `{v}`", c.name)));
                }
            }
        }
        Ok(())
    }

    /// The schema-file form of this schema, with explicit value orderings.
    pub fn spec(&self) -> SchemaSpec {
        SchemaSpec {
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSpec {
                    name: c.name.clone(),
                    kind: c.kind(),
                    values: c.values().map(<[String]>::to_vec),
                })
                .collect(),
            target: self.target.clone(),
            sensitive: self.sensitive.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn target_index(&self) -> usize {
        self.index_of(&self.target).expect("validated schema")
    }

    pub fn sensitive_indices(&self) -> Vec<usize> {
        self.sensitive
            .iter()
            .map(|s| self.index_of(s).expect("validated schema"))
            .collect()
    }

    pub fn cardinality(&self, col: usize) -> Option<usize> {
        self.columns[col].cardinality()
    }

    pub fn target_cardinality(&self) -> usize {
        self.cardinality(self.target_index()).expect("target is categorical")
    }

    pub fn sensitive_cardinalities(&self) -> Vec<usize> {
        self.sensitive_indices()
            .into_iter()
            .map(|i| self.cardinality(i).expect("sensitive columns are categorical"))
            .collect()
    }

    pub fn numerical_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].kind() == ColumnKind::Numerical)
            .collect()
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].kind() == ColumnKind::Categorical)
            .collect()
    }
}
