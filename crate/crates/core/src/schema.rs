//! Database schemas and the SQLite files that back them.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    /// Declared type, possibly empty.
    pub col_type: String,
}

impl Column {
    pub fn new(name: impl Into<String>, col_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            col_type: col_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub primary_key: Vec<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<Table>,
    pub foreign_keys: Vec<ForeignKey>,
    pub source_path: PathBuf,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("database file {0} does not exist")]
    Missing(PathBuf),
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("duplicate table name {0:?}")]
    DuplicateTable(String),
    #[error("duplicate column {column:?} in table {table:?}")]
    DuplicateColumn { table: String, column: String },
    #[error("key references unknown column {table}.{column}")]
    DanglingKey { table: String, column: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl DatabaseSchema {
    pub fn new(db_id: impl Into<String>, tables: Vec<Table>, foreign_keys: Vec<ForeignKey>) -> Self {
        Self {
            db_id: db_id.into(),
            tables,
            foreign_keys,
            source_path: PathBuf::new(),
        }
    }

    pub fn with_source(mut self, path: impl Into<PathBuf>) -> Self {
        self.source_path = path.into();
        self
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Checks name uniqueness (case-insensitive) and that every key names an
    /// existing column.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = HashSet::new();
        for t in &self.tables {
            if !seen.insert(t.name.to_ascii_lowercase()) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_ascii_lowercase()) {
                    return Err(SchemaError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
            }
            for k in &t.primary_key {
                if t.column(k).is_none() {
                    return Err(SchemaError::DanglingKey {
                        table: t.name.clone(),
                        column: k.clone(),
                    });
                }
            }
        }
        for fk in &self.foreign_keys {
            for (table, column) in [
                (&fk.from_table, &fk.from_column),
                (&fk.to_table, &fk.to_column),
            ] {
                if self.table(table).and_then(|t| t.column(column)).is_none() {
                    return Err(SchemaError::DanglingKey {
                        table: table.clone(),
                        column: column.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Reads tables, columns and keys from a SQLite file.
    pub fn from_sqlite(db_id: impl Into<String>, path: &Path) -> Result<Self, SchemaError> {
        if !path.is_file() {
            return Err(SchemaError::Missing(path.to_path_buf()));
        }
        let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
        let names: Vec<String> = conn
            .prepare(
                "SELECT name FROM sqlite_master WHERE type = 'table' \
                 AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
            )?
            .query_map([], |r| r.get(0))?
            .collect::<Result<_, _>>()?;

        let mut tables = Vec::with_capacity(names.len());
        let mut foreign_keys = Vec::new();
        for name in names {
            let quoted = name.replace('"', "\"\"");
            let mut pk: Vec<(i64, String)> = Vec::new();
            let mut columns = Vec::new();
            let mut stmt = conn.prepare(&format!("PRAGMA table_info(\"{quoted}\")"))?;
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                let col: String = row.get(1)?;
                let ty: String = row.get::<_, Option<String>>(2)?.unwrap_or_default();
                let pk_pos: i64 = row.get(5)?;
                if pk_pos > 0 {
                    pk.push((pk_pos, col.clone()));
                }
                columns.push(Column::new(col, ty));
            }
            pk.sort();

            let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list(\"{quoted}\")"))?;
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                let to_table: String = row.get(2)?;
                let from_column: String = row.get(3)?;
                let to_column: Option<String> = row.get(4)?;
                // An omitted parent column means the parent's primary key; resolved below.
                foreign_keys.push(ForeignKey {
                    from_table: name.clone(),
                    from_column,
                    to_table,
                    to_column: to_column.unwrap_or_default(),
                });
            }
            tables.push(Table {
                name,
                columns,
                primary_key: pk.into_iter().map(|(_, c)| c).collect(),
            });
        }
        for fk in &mut foreign_keys {
            if fk.to_column.is_empty() {
                if let Some(k) = tables
                    .iter()
                    .find(|t| t.name.eq_ignore_ascii_case(&fk.to_table))
                    .and_then(|t| t.primary_key.first())
                {
                    fk.to_column = k.clone();
                }
            }
        }
        let schema = DatabaseSchema {
            db_id: db_id.into(),
            tables,
            foreign_keys,
            source_path: path.to_path_buf(),
        };
        schema.validate()?;
        Ok(schema)
    }
}

/// Loads every `<db_id>.sqlite` file in a directory, sorted by db_id.
pub fn load_database_dir(dir: &Path) -> Result<Vec<DatabaseSchema>, SchemaError> {
    let entries = std::fs::read_dir(dir).map_err(|source| SchemaError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| SchemaError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "sqlite") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            DatabaseSchema::from_sqlite(id, &p)
        })
        .collect()
}
