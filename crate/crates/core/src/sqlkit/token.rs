//! Tolerant SQLite-dialect tokenizer.
//!
//! Every token carries its byte span in the source so callers can rewrite the
//! original text in place (value substitution) instead of re-rendering it.

use std::ops::Range;

use super::SqlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    /// Reserved word, stored uppercased in `Token::norm`.
    Keyword,
    /// Bare or quoted (`` `x` ``, `[x]`) identifier.
    Ident,
    /// Numeric literal.
    Number,
    /// `'...'` or `"..."` literal. Double quotes are read as strings, which is
    /// how text-to-SQL corpora use them.
    String,
    /// `X'..'` blob literal.
    Blob,
    /// `?`, `?1`, `:name`, `@name`, `$name`.
    Param,
    /// Operators and punctuation.
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Source text of the token.
    pub text: String,
    /// Uppercased for keywords, unchanged otherwise.
    pub norm: String,
    pub span: Range<usize>,
    /// Whitespace or a comment separated this token from the previous one.
    pub space_before: bool,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.kind == TokenKind::Keyword && self.norm == kw
    }

    pub fn is_symbol(&self, sym: &str) -> bool {
        self.kind == TokenKind::Symbol && self.text == sym
    }

    pub fn is_literal(&self) -> bool {
        matches!(
            self.kind,
            TokenKind::Number | TokenKind::String | TokenKind::Blob
        )
    }
}

/// SQLite reserved words (https://sqlite.org/lang_keywords.html).
const KEYWORDS: &[&str] = &[
    "ABORT", "ACTION", "ADD", "AFTER", "ALL", "ALTER", "ALWAYS", "ANALYZE", "AND", "AS", "ASC",
    "ATTACH", "AUTOINCREMENT", "BEFORE", "BEGIN", "BETWEEN", "BY", "CASCADE", "CASE", "CAST",
    "CHECK", "COLLATE", "COLUMN", "COMMIT", "CONFLICT", "CONSTRAINT", "CREATE", "CROSS",
    "CURRENT", "CURRENT_DATE", "CURRENT_TIME", "CURRENT_TIMESTAMP", "DATABASE", "DEFAULT",
    "DEFERRABLE", "DEFERRED", "DELETE", "DESC", "DETACH", "DISTINCT", "DO", "DROP", "EACH",
    "ELSE", "END", "ESCAPE", "EXCEPT", "EXCLUDE", "EXCLUSIVE", "EXISTS", "EXPLAIN", "FAIL",
    "FILTER", "FIRST", "FOLLOWING", "FOR", "FOREIGN", "FROM", "FULL", "GENERATED", "GLOB",
    "GROUP", "GROUPS", "HAVING", "IF", "IGNORE", "IMMEDIATE", "IN", "INDEX", "INDEXED",
    "INITIALLY", "INNER", "INSERT", "INSTEAD", "INTERSECT", "INTO", "IS", "ISNULL", "JOIN",
    "KEY", "LAST", "LEFT", "LIKE", "LIMIT", "MATCH", "MATERIALIZED", "NATURAL", "NO", "NOT",
    "NOTHING", "NOTNULL", "NULL", "NULLS", "OF", "OFFSET", "ON", "OR", "ORDER", "OTHERS",
    "OUTER", "OVER", "PARTITION", "PLAN", "PRAGMA", "PRECEDING", "PRIMARY", "QUERY", "RAISE",
    "RANGE", "RECURSIVE", "REFERENCES", "REGEXP", "REINDEX", "RELEASE", "RENAME", "REPLACE",
    "RESTRICT", "RETURNING", "RIGHT", "ROLLBACK", "ROW", "ROWS", "SAVEPOINT", "SELECT", "SET",
    "TABLE", "TEMP", "TEMPORARY", "THEN", "TIES", "TO", "TRANSACTION", "TRIGGER", "UNBOUNDED",
    "UNION", "UPDATE", "USING", "VACUUM", "VALUES", "VIEW", "VIRTUAL", "WHEN", "WHERE",
    "WINDOW", "WITH", "WITHOUT",
];

pub fn is_keyword(word: &str) -> bool {
    let upper = word.to_ascii_uppercase();
    KEYWORDS.binary_search(&upper.as_str()).is_ok()
}

const TWO_CHAR_SYMBOLS: &[&str] = &["==", "!=", "<>", "<=", ">=", "||", "<<", ">>", "->"];
const ONE_CHAR_SYMBOLS: &str = "=<>+-*/%&|~,().;";

pub fn tokenize(sql: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = sql.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    let mut space_before = false;

    while pos < bytes.len() {
        let c = bytes[pos];
        if c.is_ascii_whitespace() {
            pos += 1;
            space_before = true;
            continue;
        }
        if c == b'-' && bytes.get(pos + 1) == Some(&b'-') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            space_before = true;
            continue;
        }
        if c == b'/' && bytes.get(pos + 1) == Some(&b'*') {
            let end = sql[pos + 2..]
                .find("*/")
                .ok_or(SqlError::Unterminated { offset: pos, what: "comment" })?;
            pos += end + 4;
            space_before = true;
            continue;
        }

        let start = pos;
        let kind = match c {
            b'\'' | b'"' => {
                pos = scan_quoted(bytes, pos, c).ok_or(SqlError::Unterminated {
                    offset: start,
                    what: "string literal",
                })?;
                TokenKind::String
            }
            b'`' => {
                pos = scan_quoted(bytes, pos, b'`').ok_or(SqlError::Unterminated {
                    offset: start,
                    what: "quoted identifier",
                })?;
                TokenKind::Ident
            }
            b'[' => {
                let end = sql[pos..].find(']').ok_or(SqlError::Unterminated {
                    offset: start,
                    what: "bracketed identifier",
                })?;
                pos += end + 1;
                TokenKind::Ident
            }
            b'x' | b'X' if bytes.get(pos + 1) == Some(&b'\'') => {
                pos = scan_quoted(bytes, pos + 1, b'\'').ok_or(SqlError::Unterminated {
                    offset: start,
                    what: "blob literal",
                })?;
                TokenKind::Blob
            }
            b'0'..=b'9' => {
                pos = scan_number(bytes, pos);
                TokenKind::Number
            }
            b'.' if bytes.get(pos + 1).is_some_and(u8::is_ascii_digit) => {
                pos = scan_number(bytes, pos);
                TokenKind::Number
            }
            b'?' => {
                pos += 1;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
                TokenKind::Param
            }
            b':' | b'@' | b'$' if bytes.get(pos + 1).is_some_and(|b| is_ident_char(*b)) => {
                pos += 1;
                while pos < bytes.len() && is_ident_char(bytes[pos]) {
                    pos += 1;
                }
                TokenKind::Param
            }
            _ if is_ident_start(c) => {
                while pos < bytes.len() && is_ident_char(bytes[pos]) {
                    pos += 1;
                }
                if is_keyword(&sql[start..pos]) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Ident
                }
            }
            _ => {
                if pos + 2 <= bytes.len()
                    && sql.is_char_boundary(pos + 2)
                    && TWO_CHAR_SYMBOLS.contains(&&sql[pos..pos + 2])
                {
                    pos += 2;
                } else if ONE_CHAR_SYMBOLS.as_bytes().contains(&c) {
                    pos += 1;
                } else {
                    let ch = sql[pos..].chars().next().unwrap_or('\u{fffd}');
                    return Err(SqlError::UnexpectedChar { offset: pos, ch });
                }
                TokenKind::Symbol
            }
        };

        let text = sql[start..pos].to_string();
        let norm = if kind == TokenKind::Keyword {
            text.to_ascii_uppercase()
        } else {
            text.clone()
        };
        tokens.push(Token {
            kind,
            text,
            norm,
            span: start..pos,
            space_before,
        });
        space_before = false;
    }
    Ok(tokens)
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_' || c >= 0x80
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$' || c >= 0x80
}

/// Returns the offset just past the closing quote; doubled quotes escape.
fn scan_quoted(bytes: &[u8], start: usize, quote: u8) -> Option<usize> {
    let mut pos = start + 1;
    while pos < bytes.len() {
        if bytes[pos] == quote {
            if bytes.get(pos + 1) == Some(&quote) {
                pos += 2;
                continue;
            }
            return Some(pos + 1);
        }
        pos += 1;
    }
    None
}

fn scan_number(bytes: &[u8], start: usize) -> usize {
    let mut pos = start;
    if bytes[pos] == b'0' && matches!(bytes.get(pos + 1), Some(b'x') | Some(b'X')) {
        pos += 2;
        while pos < bytes.len() && bytes[pos].is_ascii_hexdigit() {
            pos += 1;
        }
        return pos;
    }
    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
        pos += 1;
    }
    if pos < bytes.len() && bytes[pos] == b'.' {
        pos += 1;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
    }
    if pos < bytes.len() && matches!(bytes[pos], b'e' | b'E') {
        let mut exp = pos + 1;
        if exp < bytes.len() && matches!(bytes[exp], b'+' | b'-') {
            exp += 1;
        }
        if exp < bytes.len() && bytes[exp].is_ascii_digit() {
            pos = exp;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
        }
    }
    pos
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(sql: &str) -> Vec<(TokenKind, String)> {
        tokenize(sql)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.norm))
            .collect()
    }

    #[test]
    fn keyword_table_is_sorted() {
        let mut sorted = KEYWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, KEYWORDS);
    }

    #[test]
    fn basic_select() {
        let toks = kinds("select name from singer where age >= 20.5");
        assert_eq!(
            toks,
            vec![
                (TokenKind::Keyword, "SELECT".into()),
                (TokenKind::Ident, "name".into()),
                (TokenKind::Keyword, "FROM".into()),
                (TokenKind::Ident, "singer".into()),
                (TokenKind::Keyword, "WHERE".into()),
                (TokenKind::Ident, "age".into()),
                (TokenKind::Symbol, ">=".into()),
                (TokenKind::Number, "20.5".into()),
            ]
        );
    }

    #[test]
    fn strings_with_escaped_quotes() {
        let toks = tokenize("SELECT 'it''s', \"x\"").unwrap();
        assert_eq!(toks[1].kind, TokenKind::String);
        assert_eq!(toks[1].text, "'it''s'");
        assert_eq!(toks[3].kind, TokenKind::String);
    }

    #[test]
    fn comments_are_whitespace() {
        let toks = tokenize("SELECT -- hi\n 1 /* x */ + 2").unwrap();
        assert_eq!(toks.len(), 4);
        assert!(toks[1].space_before);
    }

    #[test]
    fn unterminated_string_errors() {
        assert!(matches!(
            tokenize("SELECT 'abc"),
            Err(SqlError::Unterminated { offset: 7, .. })
        ));
    }

    #[test]
    fn unexpected_char_errors() {
        assert!(matches!(
            tokenize("SELECT #"),
            Err(SqlError::UnexpectedChar { ch: '#', .. })
        ));
    }

    #[test]
    fn spans_index_source() {
        let sql = "SELECT  a ,b";
        for t in tokenize(sql).unwrap() {
            assert_eq!(&sql[t.span.clone()], t.text);
        }
    }

    #[test]
    fn numbers() {
        for n in ["1", "1.5", ".5", "1e10", "2E-3", "0x1F"] {
            let toks = tokenize(n).unwrap();
            assert_eq!(toks.len(), 1, "{n}");
            assert_eq!(toks[0].kind, TokenKind::Number);
        }
    }
}
