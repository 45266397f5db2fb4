use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{SqlError, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Integer,
    Real,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<(String, ColumnType)>,
}

impl TableSchema {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|(c, _)| c.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Vec<Value>>,
}

/// Immutable in-memory database; table and column lookup is
/// case-insensitive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiniDb {
    pub name: String,
    tables: BTreeMap<String, Table>,
}

#[derive(Deserialize)]
struct TableFixture {
    name: String,
    columns: Vec<ColumnDef>,
    #[serde(default)]
    rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Deserialize)]
struct DbFixture {
    #[serde(default)]
    name: String,
    tables: Vec<TableFixture>,
}

fn coerce(v: &serde_json::Value, ty: ColumnType) -> Option<Value> {
    match ty {
        ColumnType::Integer => v.as_i64().map(Value::Integer),
        ColumnType::Real => v.as_f64().map(Value::Real),
        ColumnType::Text => v.as_str().map(|s| Value::Text(s.to_owned())),
    }
}

impl MiniDb {
    pub fn new(name: impl Into<String>, tables: Vec<Table>) -> Result<Self, SqlError> {
        let mut map = BTreeMap::new();
        for table in tables {
            let mut seen = BTreeSet::new();
            for (c, _) in &table.schema.columns {
                if !seen.insert(c.to_lowercase()) {
                    return Err(SqlError::Fixture(format!(
                        "duplicate column `{c}` in table `{}`",
                        table.schema.name
                    )));
                }
            }
            for (i, row) in table.rows.iter().enumerate() {
                let arity_ok = row.len() == table.schema.columns.len();
                let types_ok = row.iter().zip(&table.schema.columns).all(|(v, (_, ty))| {
                    matches!(
                        (v, ty),
                        (Value::Integer(_), ColumnType::Integer)
                            | (Value::Real(_), ColumnType::Real)
                            | (Value::Text(_), ColumnType::Text)
                    )
                });
                if !arity_ok || !types_ok {
                    return Err(SqlError::Fixture(format!(
                        "row {i} of `{}` does not match its schema",
                        table.schema.name
                    )));
                }
            }
            let key = table.schema.name.to_lowercase();
            if map.insert(key, table).is_some() {
                return Err(SqlError::Fixture("duplicate table name".into()));
            }
        }
        Ok(Self { name: name.into(), tables: map })
    }

    /// Loads `{"name": .., "tables": [{"name", "columns": [{"name", "type"}], "rows"}]}`.
    pub fn from_json(src: &str) -> Result<Self, SqlError> {
        let fixture: DbFixture = serde_json::from_str(src).map_err(|e| SqlError::Fixture(e.to_string()))?;
        let mut tables = Vec::with_capacity(fixture.tables.len());
        for t in fixture.tables {
            let schema = TableSchema {
                name: t.name,
                columns: t.columns.into_iter().map(|c| (c.name, c.ty)).collect(),
            };
            let mut rows = Vec::with_capacity(t.rows.len());
            for (i, raw) in t.rows.iter().enumerate() {
                if raw.len() != schema.columns.len() {
                    return Err(SqlError::Fixture(format!("row {i} of `{}` has wrong arity", schema.name)));
                }
                let row = raw
                    .iter()
                    .zip(&schema.columns)
                    .map(|(v, (c, ty))| {
                        coerce(v, *ty).ok_or_else(|| {
                            SqlError::Fixture(format!("row {i} of `{}`: `{c}` expects {ty:?}, got {v}", schema.name))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                rows.push(row);
            }
            tables.push(Table { schema, rows });
        }
        Self::new(fixture.name, tables)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(&name.to_lowercase())
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }
}
