use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{parse, Condition, Connector, PredicateOp, Select};
use super::SqlError;

const DEFAULT_RULES: &str = include_str!("../../data/hardness_rules.toml");

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Hardness {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Hardness {
    pub const ALL: [Hardness; 4] = [
        Hardness::Easy,
        Hardness::Medium,
        Hardness::Hard,
        Hardness::Extra,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Hardness::Easy => "easy",
            Hardness::Medium => "medium",
            Hardness::Hard => "hard",
            Hardness::Extra => "extra",
        }
    }
}

impl std::fmt::Display for Hardness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-level component counts of the outermost query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ComponentCounts {
    pub component1: usize,
    pub nested: usize,
    pub others: usize,
}

impl ComponentCounts {
    pub fn of(select: &Select) -> Self {
        let conditions: Vec<&Condition> = select
            .from
            .iter()
            .flat_map(|f| f.join_conditions.iter())
            .chain(select.where_clause.iter())
            .chain(select.having.iter())
            .collect();

        let mut component1 = [
            select.where_clause.is_some(),
            !select.group_by.is_empty(),
            !select.order_by.is_empty(),
            select.limit.is_some(),
        ]
        .into_iter()
        .filter(|b| *b)
        .count();
        if let Some(from) = &select.from {
            component1 += from.sources.len().saturating_sub(1);
        }
        for cond in &conditions {
            component1 += cond.connectors.iter().filter(|c| **c == Connector::Or).count();
            component1 += cond
                .predicates
                .iter()
                .filter(|p| p.op == Some(PredicateOp::Like))
                .count();
        }

        let nested = conditions
            .iter()
            .flat_map(|c| c.predicates.iter())
            .map(|p| p.subqueries().count())
            .sum::<usize>()
            + usize::from(select.compound.is_some());

        let where_preds = select
            .where_clause
            .as_ref()
            .map_or(0, |w| w.predicates.len());
        let aggregates = select.items.iter().filter(|e| e.aggregates > 0).count()
            + select
                .where_clause
                .iter()
                .chain(select.having.iter())
                .flat_map(|c| c.predicates.iter())
                .filter(|p| p.has_aggregate())
                .count()
            + select.group_by.iter().filter(|e| e.aggregates > 0).count()
            + select.order_by.iter().filter(|o| o.expr.aggregates > 0).count();
        let others = [
            aggregates > 1,
            select.items.len() > 1,
            where_preds > 1,
            select.group_by.len() > 1,
        ]
        .into_iter()
        .filter(|b| *b)
        .count();

        ComponentCounts {
            component1,
            nested,
            others,
        }
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("reading rule table: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed rule table: {0}")]
    Malformed(#[from] toml::de::Error),
    #[error("rule table lists no levels")]
    NoLevels,
    #[error("rule for {level} has an empty bound (min {min} > max {max})")]
    EmptyBound {
        level: Hardness,
        min: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Bound {
    min: Option<usize>,
    max: Option<usize>,
}

impl Bound {
    fn contains(&self, v: usize) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct Alternative {
    #[serde(default)]
    component1: Bound,
    #[serde(default)]
    nested: Bound,
    #[serde(default)]
    others: Bound,
}

impl Alternative {
    fn matches(&self, c: &ComponentCounts) -> bool {
        self.component1.contains(c.component1)
            && self.nested.contains(c.nested)
            && self.others.contains(c.others)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct LevelRule {
    level: Hardness,
    when: Vec<Alternative>,
}

/// Ordered hardness rule table; see `data/hardness_rules.toml`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HardnessRules {
    fallback: Hardness,
    levels: Vec<LevelRule>,
}

impl HardnessRules {
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let rules: HardnessRules = toml::from_str(text)?;
        if rules.levels.is_empty() {
            return Err(RuleError::NoLevels);
        }
        for rule in &rules.levels {
            for alt in &rule.when {
                for b in [alt.component1, alt.nested, alt.others] {
                    if let (Some(min), Some(max)) = (b.min, b.max) {
                        if min > max {
                            return Err(RuleError::EmptyBound {
                                level: rule.level,
                                min,
                                max,
                            });
                        }
                    }
                }
            }
        }
        Ok(rules)
    }

    pub fn from_path(path: &Path) -> Result<Self, RuleError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The table shipped with the crate.
    pub fn builtin() -> &'static HardnessRules {
        static RULES: OnceLock<HardnessRules> = OnceLock::new();
        RULES.get_or_init(|| HardnessRules::parse(DEFAULT_RULES).expect("bundled rule table"))
    }

    pub fn level_for(&self, counts: &ComponentCounts) -> Hardness {
        self.levels
            .iter()
            .find(|r| r.when.iter().any(|a| a.matches(counts)))
            .map_or(self.fallback, |r| r.level)
    }

    pub fn classify(&self, sql: &str) -> Result<Hardness, SqlError> {
        let query = parse(sql)?;
        Ok(self.level_for(&ComponentCounts::of(&query.select)))
    }
}

/// Classifies with the bundled rule table.
pub fn classify_hardness(sql: &str) -> Result<Hardness, SqlError> {
    HardnessRules::builtin().classify(sql)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(sql: &str) -> ComponentCounts {
        ComponentCounts::of(&parse(sql).unwrap().select)
    }

    fn cc(component1: usize, nested: usize, others: usize) -> ComponentCounts {
        ComponentCounts {
            component1,
            nested,
            others,
        }
    }

    #[test]
    fn count_single_aggregate() {
        assert_eq!(counts("SELECT count(*) FROM singer"), cc(0, 0, 0));
        assert_eq!(classify_hardness("SELECT count(*) FROM singer").unwrap(), Hardness::Easy);
    }

    #[test]
    fn join_with_group_by() {
        let sql = "SELECT T1.name FROM a AS T1 JOIN b AS T2 ON T1.id=T2.id GROUP BY T1.name";
        assert_eq!(counts(sql), cc(2, 0, 0));
        assert_eq!(classify_hardness(sql).unwrap(), Hardness::Medium);
    }

    #[test]
    fn nested_with_aggregates_and_order() {
        let sql = "SELECT name, count(*) FROM singer WHERE age > (SELECT avg(age) FROM singer) \
                   GROUP BY name ORDER BY count(*) DESC";
        // where + group + order; one nested; >1 agg and >1 select item
        assert_eq!(counts(sql), cc(3, 1, 2));
        assert_eq!(classify_hardness(sql).unwrap(), Hardness::Extra);
    }

    #[test]
    fn or_and_like_count_as_components() {
        assert_eq!(
            counts("SELECT a FROM t WHERE b = 1 OR c LIKE '%x%'"),
            cc(3, 0, 1)
        );
    }

    #[test]
    fn set_operation_is_nested() {
        assert_eq!(
            counts("SELECT a FROM t INTERSECT SELECT a FROM u"),
            cc(0, 1, 0)
        );
        assert_eq!(
            classify_hardness("SELECT a FROM t INTERSECT SELECT a FROM u").unwrap(),
            Hardness::Hard
        );
    }

    #[test]
    fn rule_table_boundaries() {
        let r = HardnessRules::builtin();
        assert_eq!(r.level_for(&cc(1, 0, 0)), Hardness::Easy);
        assert_eq!(r.level_for(&cc(1, 0, 2)), Hardness::Medium);
        assert_eq!(r.level_for(&cc(2, 0, 1)), Hardness::Medium);
        assert_eq!(r.level_for(&cc(2, 0, 2)), Hardness::Extra);
        assert_eq!(r.level_for(&cc(0, 0, 3)), Hardness::Hard);
        assert_eq!(r.level_for(&cc(3, 0, 2)), Hardness::Hard);
        assert_eq!(r.level_for(&cc(4, 0, 0)), Hardness::Extra);
        assert_eq!(r.level_for(&cc(1, 1, 0)), Hardness::Hard);
        assert_eq!(r.level_for(&cc(0, 2, 0)), Hardness::Extra);
        assert_eq!(r.level_for(&cc(1, 1, 1)), Hardness::Extra);
    }

    #[test]
    fn malformed_rules_rejected() {
        assert!(matches!(HardnessRules::parse("fallback = \"extra\"\nlevels = []"), Err(RuleError::NoLevels)));
        assert!(matches!(HardnessRules::parse("nonsense"), Err(RuleError::Malformed(_))));
        let bad = "fallback = \"extra\"\n[[levels]]\nlevel = \"easy\"\nwhen = [{ others = { min = 3, max = 1 } }]";
        assert!(matches!(HardnessRules::parse(bad), Err(RuleError::EmptyBound { .. })));
        let unknown = "fallback = \"extra\"\n[[levels]]\nlevel = \"easy\"\nwhen = [{ joins = { max = 1 } }]";
        assert!(HardnessRules::parse(unknown).is_err());
    }

    #[test]
    fn levels_are_ordered() {
        assert!(Hardness::Easy < Hardness::Medium);
        assert!(Hardness::Medium < Hardness::Hard);
        assert!(Hardness::Hard < Hardness::Extra);
    }
}
