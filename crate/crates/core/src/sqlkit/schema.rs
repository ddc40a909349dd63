use crate::schema::DatabaseSchema;

/// One `CREATE TABLE` line per table in schema order, then `-- primary key:`
/// lines, then `-- foreign key:` lines.
pub fn linearize_schema(schema: &DatabaseSchema) -> String {
    let mut lines = Vec::new();
    for table in &schema.tables {
        let cols: Vec<String> = table
            .columns
            .iter()
            .map(|c| {
                if c.col_type.is_empty() {
                    c.name.clone()
                } else {
                    format!("{} {}", c.name, c.col_type)
                }
            })
            .collect();
        lines.push(format!("CREATE TABLE {} ({})", table.name, cols.join(", ")));
    }
    for table in &schema.tables {
        if !table.primary_key.is_empty() {
            let keys: Vec<String> = table
                .primary_key
                .iter()
                .map(|k| format!("{}.{}", table.name, k))
                .collect();
            lines.push(format!("-- primary key: {}", keys.join(", ")));
        }
    }
    for fk in &schema.foreign_keys {
        lines.push(format!(
            "-- foreign key: {}.{} = {}.{}",
            fk.from_table, fk.from_column, fk.to_table, fk.to_column
        ));
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Column, ForeignKey, Table};

    fn singer() -> Table {
        Table {
            name: "singer".into(),
            columns: vec![Column::new("id", "INT"), Column::new("name", "TEXT")],
            primary_key: vec!["id".into()],
        }
    }

    #[test]
    fn single_table() {
        let schema = DatabaseSchema::new("db", vec![singer()], vec![]);
        assert_eq!(
            linearize_schema(&schema),
            "CREATE TABLE singer (id INT, name TEXT)\n-- primary key: singer.id"
        );
    }

    #[test]
    fn foreign_key_line() {
        let concert = Table {
            name: "concert".into(),
            columns: vec![Column::new("cid", "INT"), Column::new("singer_id", "INT")],
            primary_key: vec![],
        };
        let schema = DatabaseSchema::new(
            "db",
            vec![singer(), concert],
            vec![ForeignKey {
                from_table: "concert".into(),
                from_column: "singer_id".into(),
                to_table: "singer".into(),
                to_column: "id".into(),
            }],
        );
        let text = linearize_schema(&schema);
        assert!(text.ends_with("-- foreign key: concert.singer_id = singer.id"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn empty_schema() {
        assert_eq!(linearize_schema(&DatabaseSchema::new("db", vec![], vec![])), "");
    }
}
