//! Tables, questions, and corpora.
//!
//! A [`Table`] is the retrieval unit: a title, a header row, and zero or
//! more rectangular content rows. [`Corpus`] and [`Question`] loaders
//! validate the JSON-Lines interchange files, and
//! [`Table::contains_answer`] is the answer-containment predicate behind
//! the top-k accuracy metric.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        header: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Self {
        Table {
            id: id.into(),
            title: title.into(),
            header,
            rows,
        }
    }

    /// Checks rectangularity, a non-empty header, and a non-empty id.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::EmptyTableId);
        }
        if self.header.is_empty() {
            return Err(Error::EmptyHeader {
                id: self.id.clone(),
            });
        }
        let width = self.header.len();
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::RaggedRow {
                    id: self.id.clone(),
                    row: i,
                    expected: width,
                    found: row.len(),
                });
            }
        }
        Ok(())
    }

    /// True iff any normalized answer occurs as a substring of the
    /// normalized serialization of the table (title, header, cells).
    /// Normalization lowercases, collapses whitespace runs, and trims.
    pub fn contains_answer(&self, answers: &[impl AsRef<str>]) -> bool {
        let haystack = self.normalized_text();
        answers.iter().any(|a| {
            let needle = normalize(a.as_ref());
            !needle.is_empty() && haystack.contains(&needle)
        })
    }

    fn normalized_text(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(1 + self.header.len());
        parts.push(&self.title);
        parts.extend(self.header.iter().map(String::as_str));
        for row in &self.rows {
            parts.extend(row.iter().map(String::as_str));
        }
        normalize(&parts.join(" "))
    }
}

fn normalize(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub answers: Vec<String>,
    pub positive_table_id: String,
}

/// Immutable id-keyed table collection. Iteration order is load order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    tables: Vec<Table>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_tables(tables: Vec<Table>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for table in tables {
            corpus.push(table)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, table: Table) -> Result<()> {
        table.validate()?;
        if self.by_id.contains_key(&table.id) {
            return Err(Error::DuplicateTableId {
                id: table.id.clone(),
            });
        }
        self.by_id.insert(table.id.clone(), self.tables.len());
        self.tables.push(table);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Table> {
        self.by_id.get(id).map(|&i| &self.tables[i])
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn iter(&self) -> impl Iterator<Item = &Table> {
        self.tables.iter()
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Loads a JSON-Lines corpus. The whole file is rejected on the first
/// malformed, non-rectangular, or duplicate-id record.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = Corpus::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let table: Table = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        corpus.push(table)?;
    }
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for table in corpus.iter() {
        serde_json::to_writer(&mut out, table).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads questions and validates each against the corpus: the positive
/// table must exist and must contain at least one answer string.
pub fn load_questions(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<Question>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut questions = Vec::new();
    let mut seen = HashMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let question: Question = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno + 1, e.to_string()))?;
        validate_question(&question, corpus)?;
        if seen.insert(question.id.clone(), ()).is_some() {
            return Err(Error::DuplicateQuestionId { id: question.id });
        }
        questions.push(question);
    }
    Ok(questions)
}

pub fn validate_question(question: &Question, corpus: &Corpus) -> Result<()> {
    if question.answers.is_empty() {
        return Err(Error::EmptyAnswers {
            id: question.id.clone(),
        });
    }
    let table = corpus
        .get(&question.positive_table_id)
        .ok_or_else(|| Error::DanglingPositive {
            id: question.id.clone(),
            table_id: question.positive_table_id.clone(),
        })?;
    if !table.contains_answer(&question.answers) {
        return Err(Error::AnswerNotInPositive {
            id: question.id.clone(),
            table_id: question.positive_table_id.clone(),
        });
    }
    Ok(())
}

pub fn save_questions(questions: &[Question], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for q in questions {
        serde_json::to_writer(&mut out, q).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(id: &str, title: &str, header: &[&str], rows: &[&[&str]]) -> Table {
        Table::new(
            id,
            title,
            header.iter().map(|s| s.to_string()).collect(),
            rows.iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        )
    }

    #[test]
    fn load_single_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"t1","title":"MLB pay","header":["Name","Salary"],"rows":[["Trout","$37M"]]}"#,
        )
        .unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.get("t1").unwrap().title, "MLB pay");
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"t1","title":"a","header":["h"],"rows":[]}"#,
                "\n",
                r#"{"id":"t1","title":"b","header":["h"],"rows":[]}"#,
            ),
        )
        .unwrap();
        match load_corpus(&path) {
            Err(Error::DuplicateTableId { id }) => assert_eq!(id, "t1"),
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let t = table("t1", "x", &["a", "b", "c"], &[&["1", "2"]]);
        match t.validate() {
            Err(Error::RaggedRow {
                expected, found, ..
            }) => {
                assert_eq!(expected, 3);
                assert_eq!(found, 2);
            }
            other => panic!("expected ragged-row error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"t1","title":"a","header":["h"],"rows":[]}"#,
                "\n",
                "not json",
            ),
        )
        .unwrap();
        match load_corpus(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn contains_answer_normalizes_case_and_whitespace() {
        let t = table("t1", "salaries", &["Name"], &[&["Mike Trout"]]);
        assert!(t.contains_answer(&["mike trout"]));
        assert!(t.contains_answer(&["MIKE   TROUT"]));
        assert!(!t.contains_answer(&["Babe Ruth"]));
    }

    #[test]
    fn contains_answer_population_total() {
        let t = table(
            "t1",
            "Demographics of Sweden",
            &["Population", "Total"],
            &[&["Total population", "34,083,000"]],
        );
        assert!(t.contains_answer(&["34,083,000"]));
    }

    #[test]
    fn empty_table_matches_via_title() {
        let t = table("t1", "List of rivers", &["Name"], &[]);
        assert!(t.validate().is_ok());
        assert!(t.contains_answer(&["rivers"]));
    }

    #[test]
    fn question_validation() {
        let corpus = Corpus::from_tables(vec![table(
            "t1",
            "salaries",
            &["Name"],
            &[&["Mike Trout"]],
        )])
        .unwrap();

        let good = Question {
            id: "q1".into(),
            text: "who".into(),
            answers: vec!["Mike Trout".into()],
            positive_table_id: "t1".into(),
        };
        assert!(validate_question(&good, &corpus).is_ok());

        let dangling = Question {
            positive_table_id: "tX".into(),
            ..good.clone()
        };
        assert!(matches!(
            validate_question(&dangling, &corpus),
            Err(Error::DanglingPositive { .. })
        ));

        let unanswerable = Question {
            answers: vec!["Babe Ruth".into()],
            ..good
        };
        assert!(matches!(
            validate_question(&unanswerable, &corpus),
            Err(Error::AnswerNotInPositive { .. })
        ));
    }

    fn cell_strategy() -> impl Strategy<Value = String> {
        "[a-z0-9 ]{0,12}"
    }

    fn table_strategy() -> impl Strategy<Value = Table> {
        (1usize..5, 0usize..5).prop_flat_map(|(w, h)| {
            (
                "[a-z]{1,8}",
                cell_strategy(),
                prop::collection::vec(cell_strategy(), w),
                prop::collection::vec(prop::collection::vec(cell_strategy(), w), h),
            )
                .prop_map(|(id, title, header, rows)| Table::new(id, title, header, rows))
        })
    }

    proptest! {
        #[test]
        fn answer_matching_monotone(t in table_strategy(), a in cell_strategy(), b in cell_strategy()) {
            let single = t.contains_answer(&[a.clone()]);
            let both = t.contains_answer(&[a, b]);
            prop_assert!(!single || both);
        }

        #[test]
        fn answer_matching_invariant_under_case_and_whitespace(t in table_strategy(), a in "[a-z0-9]{1,6}") {
            let shouted = a.to_uppercase();
            let padded = format!("  {}  ", a.replace(' ', "   "));
            prop_assert_eq!(t.contains_answer(&[a]), t.contains_answer(&[shouted]));
            prop_assert_eq!(t.contains_answer(&[padded.trim().to_string()]), t.contains_answer(&[padded]));
        }

        #[test]
        fn corpus_roundtrip(tables in prop::collection::vec(table_strategy(), 1..6)) {
            // ids must be unique for a valid corpus
            let mut tables = tables;
            for (i, t) in tables.iter_mut().enumerate() {
                t.id = format!("t{i}");
            }
            let corpus = Corpus::from_tables(tables).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.jsonl");
            save_corpus(&corpus, &path).unwrap();
            let reloaded = load_corpus(&path).unwrap();
            prop_assert_eq!(corpus.tables(), reloaded.tables());
        }
    }
}
