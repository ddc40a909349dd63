//! Prompt templates. Rendering is pure: the same inputs give the same bytes.

use serde::Serialize;

use crate::schema::DatabaseSchema;
use crate::sqlkit::linearize_schema;

pub const SYNTH_HEADER: &str = "Synthesize one SQL query for the given database.";
pub const SYNTH_MARKER: &str = "-- Synthesize a new single SQL for the above database";
pub const QUESTION_HEADER: &str =
    "Using natural language, generate a question corresponding to the given SQL.";
pub const QUESTION_MARKER: &str =
    "-- Using natural language, generate a question corresponding to the given SQL: ";
pub const TEXT2SQL_MARKER: &str =
    "-- Using valid SQLite, answer the following questions for the tables provided above.";
pub const QUESTION_CUE: &str = "-- Question: ";
pub const SELECT_CUE: &str = "SELECT";

/// Number of demonstrations the question and text-to-SQL prompts expect.
pub const DEMO_SHOTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rendered {
    pub text: String,
    pub warnings: Vec<String>,
}

/// A (question, SQL) example shown inside a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shot<'a> {
    pub question: &'a str,
    pub sql: &'a str,
}

impl<'a> From<&'a crate::pool::Demonstration> for Shot<'a> {
    fn from(d: &'a crate::pool::Demonstration) -> Self {
        Shot {
            question: &d.question,
            sql: &d.sql,
        }
    }
}

fn schema_block(schema: &DatabaseSchema, warnings: &mut Vec<String>) -> String {
    let text = linearize_schema(schema);
    if text.is_empty() {
        warnings.push(format!("database {:?} has an empty schema", schema.db_id));
    }
    text
}

fn one_line(sql: &str) -> String {
    sql.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_fusion_prompt(schema: &DatabaseSchema, sql1: &str, sql2: &str) -> Rendered {
    let mut warnings = Vec::new();
    let db = schema_block(schema, &mut warnings);
    let text = format!(
        "{SYNTH_HEADER}\n\n{db}\n{SYNTH_MARKER} imitating {} and {}.\n{SELECT_CUE}",
        one_line(sql1),
        one_line(sql2)
    );
    Rendered { text, warnings }
}

pub fn render_scratch_sql_prompt(schema: &DatabaseSchema) -> Rendered {
    let mut warnings = Vec::new();
    let db = schema_block(schema, &mut warnings);
    let text = format!("{SYNTH_HEADER}\n\n{db}\n{SYNTH_MARKER}.\n{SELECT_CUE}");
    Rendered { text, warnings }
}

fn shot_count_warning(n: usize, warnings: &mut Vec<String>) {
    if n < DEMO_SHOTS {
        warnings.push(format!("{n} demonstrations given, {DEMO_SHOTS} expected"));
    }
}

pub fn render_question_prompt(schema: &DatabaseSchema, sql: &str, demos: &[Shot<'_>]) -> Rendered {
    let mut warnings = Vec::new();
    shot_count_warning(demos.len(), &mut warnings);
    let db = schema_block(schema, &mut warnings);
    let mut text = format!("{QUESTION_HEADER}\nDifferent examples are separated with '\\n\\n'.\n\n");
    for d in demos {
        text.push_str(&format!(
            "{QUESTION_MARKER}{}.\nQuestion: {}\n\n",
            one_line(d.sql),
            d.question.trim()
        ));
    }
    text.push_str(&format!("{db}\n{QUESTION_MARKER}{}.\nQuestion:", one_line(sql)));
    Rendered { text, warnings }
}

pub fn render_text2sql_prompt(
    schema: &DatabaseSchema,
    question: &str,
    demos: &[Shot<'_>],
) -> Rendered {
    let mut warnings = Vec::new();
    shot_count_warning(demos.len(), &mut warnings);
    let db = schema_block(schema, &mut warnings);
    let mut text = format!("{db}\n{TEXT2SQL_MARKER}\n\n");
    for d in demos {
        text.push_str(&format!("{QUESTION_CUE}{}\n{}\n\n", d.question.trim(), one_line(d.sql)));
    }
    text.push_str(&format!("{QUESTION_CUE}{}\n{SELECT_CUE}", question.trim()));
    Rendered { text, warnings }
}

/// Turns a continuation of the `SELECT` cue into a full statement: the cue
/// is prepended unless already present, and the text is cut at the first
/// `;` or blank line.
pub fn parse_sql_completion(text: &str) -> String {
    let mut cut = text.len();
    if let Some(i) = text.find(';') {
        cut = cut.min(i);
    }
    if let Some(i) = blank_line(text) {
        cut = cut.min(i);
    }
    let body = text[..cut].trim();
    let starts_with_select = body
        .get(..6)
        .is_some_and(|h| h.eq_ignore_ascii_case("SELECT"))
        && body[6..].chars().next().is_none_or(|c| !c.is_alphanumeric() && c != '_');
    if starts_with_select {
        body.to_owned()
    } else {
        format!("{SELECT_CUE} {body}").trim_end().to_owned()
    }
}

/// First line of a question completion, trimmed.
pub fn parse_question_completion(text: &str) -> String {
    text.trim_start()
        .lines()
        .next()
        .unwrap_or("")
        .trim()
        .to_owned()
}

fn blank_line(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while let Some(off) = text[i..].find('\n') {
        let at = i + off;
        let mut j = at + 1;
        while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t' || bytes[j] == b'\r') {
            j += 1;
        }
        if j < bytes.len() && bytes[j] == b'\n' {
            return Some(at);
        }
        i = at + 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Column, Table};

    fn toy() -> DatabaseSchema {
        DatabaseSchema::new(
            "music",
            vec![Table {
                name: "singer".into(),
                columns: vec![Column::new("id", "INT"), Column::new("name", "TEXT")],
                primary_key: vec!["id".into()],
            }],
            vec![],
        )
    }

    fn shots() -> Vec<Shot<'static>> {
        vec![
            Shot { question: "How many singers?", sql: "SELECT count(*) FROM singer" },
            Shot { question: "List names.", sql: "SELECT name FROM singer" },
        ]
    }

    #[test]
    fn fusion_prompt_layout() {
        let r = render_fusion_prompt(&toy(), "SELECT name FROM singer", "SELECT count(*)\nFROM singer");
        let db = linearize_schema(&toy());
        assert_eq!(
            r.text,
            format!(
                "Synthesize one SQL query for the given database.\n\n{db}\n\
                 -- Synthesize a new single SQL for the above database imitating \
                 SELECT name FROM singer and SELECT count(*) FROM singer.\nSELECT"
            )
        );
        assert!(r.warnings.is_empty());
        assert_eq!(r.text.matches(&db).count(), 1);
        assert!(render_fusion_prompt(&toy(), "SELECT 1", "SELECT 1").text.contains("SELECT 1 and SELECT 1."));
    }

    #[test]
    fn empty_schema_warns() {
        let empty = DatabaseSchema::new("e", vec![], vec![]);
        for r in [
            render_fusion_prompt(&empty, "SELECT 1", "SELECT 2"),
            render_scratch_sql_prompt(&empty),
            render_question_prompt(&empty, "SELECT 1", &[]),
            render_text2sql_prompt(&empty, "q", &[]),
        ] {
            assert!(r.warnings.iter().any(|w| w.contains("empty schema")));
        }
    }

    #[test]
    fn scratch_prompt_has_no_imitation_clause() {
        let r = render_scratch_sql_prompt(&toy());
        assert!(r.text.contains(&format!("{SYNTH_MARKER}.\nSELECT")));
        assert!(!r.text.contains("imitating"));
        assert!(r.text.starts_with(SYNTH_HEADER));
    }

    #[test]
    fn question_prompt_layout() {
        let r = render_question_prompt(&toy(), "SELECT id FROM singer", &shots());
        assert!(r.text.contains(
            "-- Using natural language, generate a question corresponding to the given SQL: \
             SELECT count(*) FROM singer.\nQuestion: How many singers?\n\n"
        ));
        assert!(r.text.ends_with("given SQL: SELECT id FROM singer.\nQuestion:"));
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.text.matches(&linearize_schema(&toy())).count(), 1);
    }

    #[test]
    fn text2sql_prompt_layout() {
        let r = render_text2sql_prompt(&toy(), "Oldest singer?", &shots());
        assert!(r.text.contains(TEXT2SQL_MARKER));
        assert!(r.text.contains("-- Question: List names.\nSELECT name FROM singer\n\n"));
        assert!(r.text.ends_with("-- Question: Oldest singer?\nSELECT"));
    }

    #[test]
    fn sql_completion_parsing() {
        assert_eq!(parse_sql_completion(" name FROM singer;"), "SELECT name FROM singer");
        assert_eq!(parse_sql_completion("SELECT a FROM t; junk"), "SELECT a FROM t");
        assert_eq!(parse_sql_completion("select a FROM t"), "select a FROM t");
        assert_eq!(parse_sql_completion(" selection FROM t"), "SELECT selection FROM t");
        assert_eq!(parse_sql_completion(" a FROM t\n  \nmore text"), "SELECT a FROM t");
        assert_eq!(parse_sql_completion(""), "SELECT");
    }

    #[test]
    fn question_completion_parsing() {
        assert_eq!(parse_question_completion(" How many?\n-- next"), "How many?");
        assert_eq!(parse_question_completion(""), "");
    }
}
