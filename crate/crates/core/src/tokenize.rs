//! Corpus-built word vocabulary and six-channel sequence encoding.
//!
//! Every encoded sequence carries equal-length channels: token ids,
//! segment ids (0 text / 1 table), position ids (sequential or cell-wise
//! reset), 1-indexed row and column ids, and numeric rank ids. Questions
//! are plain text: segment 0, row/col/rank 0, sequential positions.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::{self, LinearizedTable};
use crate::table::{Corpus, Question, Table};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const CELL_DELIMITER_ID: usize = 4;
pub const ROW_DELIMITER_ID: usize = 5;

const SPECIALS: [&str; 6] = [
    PAD,
    UNK,
    CLS,
    SEP,
    linearize::CELL_DELIMITER,
    linearize::ROW_DELIMITER,
];

/// Word-level vocabulary with dense ids; the six specials occupy ids 0..6.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from all corpus fields (sanitized, lowercased) plus question
    /// text words, keeping words with frequency >= `min_freq`. Ordering is
    /// deterministic: specials first, then frequency descending, word
    /// ascending.
    pub fn build(corpus: &Corpus, questions: &[Question], min_freq: usize) -> Vocab {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut count_field = |text: &str| {
            for word in text.split_whitespace() {
                let word = match word {
                    linearize::CELL_DELIMITER => "/",
                    linearize::ROW_DELIMITER => ";",
                    w => w,
                };
                *counts.entry(word.to_lowercase()).or_insert(0) += 1;
            }
        };
        for table in corpus.iter() {
            count_field(&table.title);
            for cell in &table.header {
                count_field(cell);
            }
            for row in &table.rows {
                for cell in row {
                    count_field(cell);
                }
            }
        }
        for q in questions {
            for word in q.text.split_whitespace() {
                *counts.entry(word.to_lowercase()).or_insert(0) += 1;
            }
        }

        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(word, freq)| *freq >= min_freq && !SPECIALS.contains(&word.as_str()))
            .collect();
        entries.sort_by(|(wa, fa), (wb, fb)| fb.cmp(fa).then_with(|| wa.cmp(wb)));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(entries.into_iter().map(|(w, _)| w));
        Vocab::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(Error::DuplicateSpecial {
                    token: token.clone(),
                });
            }
        }
        for special in SPECIALS {
            if !index.contains_key(special) {
                return Err(Error::MissingSpecial {
                    token: special.to_string(),
                });
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Lowercased lookup with UNK fallback.
    pub fn id_of(&self, word: &str) -> usize {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        self.index
            .get(&word.to_lowercase())
            .copied()
            .unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&id| self.token(id)).collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for token in &self.tokens {
            writeln!(out, "{token}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocab> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        Vocab::from_tokens(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    Sequential,
    CellReset,
}

/// Equal-length integer channels for one sequence; always starts with CLS
/// and ends with SEP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSequence {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
    pub rank_ids: Vec<usize>,
}

impl TokenizedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Per-cell numeric ranks for the content rows of a table, computed
/// column by column: cells that parse as numbers get dense ranks 1..m in
/// ascending value order (ties share a rank); everything else is 0.
pub type RankGrid = Vec<Vec<usize>>;

/// Accepts an optional sign, digits with grouping commas, and at most one
/// decimal point, after stripping leading currency symbols.
pub fn parse_numeric(cell: &str) -> Option<f64> {
    let mut s = cell.trim();
    while let Some(rest) = s.strip_prefix(['$', '€', '£', '¥']) {
        s = rest;
    }
    let (sign, digits) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s.strip_prefix('+').unwrap_or(s)),
    };
    if digits.is_empty() || !digits.contains(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let mut seen_dot = false;
    for c in digits.chars() {
        match c {
            '0'..='9' => {}
            ',' if !seen_dot => {}
            '.' if !seen_dot => seen_dot = true,
            _ => return None,
        }
    }
    digits
        .replace(',', "")
        .parse::<f64>()
        .ok()
        .map(|v| sign * v)
}

pub fn assign_ranks(table: &Table) -> RankGrid {
    let width = table.header.len();
    let mut grid = vec![vec![0usize; width]; table.rows.len()];
    for c in 0..width {
        let mut values: Vec<(usize, f64)> = table
            .rows
            .iter()
            .enumerate()
            .filter_map(|(r, row)| parse_numeric(&row[c]).map(|v| (r, v)))
            .collect();
        values.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("numeric cells are finite"));
        let mut distinct: Vec<f64> = Vec::new();
        for &(_, v) in &values {
            if distinct.last() != Some(&v) {
                distinct.push(v);
            }
        }
        for (r, v) in values {
            let rank = distinct.partition_point(|&d| d < v) + 1;
            grid[r][c] = rank;
        }
    }
    grid
}

/// Encodes a linearized table (or question text) into the six channels,
/// prepending CLS and appending SEP and truncating to `max_len`.
pub fn encode(
    linearized: &LinearizedTable,
    vocab: &Vocab,
    position_mode: PositionMode,
    max_len: usize,
    ranks: Option<&RankGrid>,
) -> TokenizedSequence {
    assert!(max_len >= 2, "max_len must fit CLS and SEP");
    let body = linearized.len().min(max_len - 2);
    let len = body + 2;

    let mut seq = TokenizedSequence {
        token_ids: Vec::with_capacity(len),
        segment_ids: Vec::with_capacity(len),
        position_ids: Vec::with_capacity(len),
        row_ids: Vec::with_capacity(len),
        col_ids: Vec::with_capacity(len),
        rank_ids: Vec::with_capacity(len),
    };

    seq.token_ids.push(CLS_ID);
    seq.segment_ids.push(0);
    seq.row_ids.push(0);
    seq.col_ids.push(0);
    seq.rank_ids.push(0);

    let mut cell_cursor: Option<(usize, usize)> = None;
    let mut cell_position = 0usize;
    for i in 0..body {
        let word = &linearized.words[i];
        let prov = linearized.provenance[i];
        seq.token_ids.push(vocab.id_of(word));
        seq.segment_ids.push(prov.segment as usize);
        seq.row_ids.push(prov.row);
        seq.col_ids.push(prov.col);
        let rank = if prov.row >= 2 && prov.col >= 1 {
            ranks
                .and_then(|g| g.get(prov.row - 2))
                .and_then(|row| row.get(prov.col - 1))
                .copied()
                .unwrap_or(0)
        } else {
            0
        };
        seq.rank_ids.push(rank);

        if let PositionMode::CellReset = position_mode {
            if prov.in_cell() {
                if cell_cursor == Some((prov.row, prov.col)) {
                    cell_position += 1;
                } else {
                    cell_cursor = Some((prov.row, prov.col));
                    cell_position = 0;
                }
                seq.position_ids.push(cell_position);
            } else {
                cell_cursor = None;
                seq.position_ids.push(0);
            }
        }
    }

    let last_segment = seq.segment_ids.last().copied().unwrap_or(0);
    seq.token_ids.push(SEP_ID);
    seq.segment_ids.push(if body > 0 { last_segment } else { 0 });
    seq.row_ids.push(0);
    seq.col_ids.push(0);
    seq.rank_ids.push(0);

    match position_mode {
        PositionMode::Sequential => seq.position_ids = (0..len).collect(),
        PositionMode::CellReset => {
            seq.position_ids.insert(0, 0);
            seq.position_ids.push(0);
        }
    }

    debug_assert_eq!(seq.position_ids.len(), len);
    seq
}

/// Questions are text: segment 0, row/col/rank 0, sequential positions.
pub fn encode_question(text: &str, vocab: &Vocab, max_len: usize) -> TokenizedSequence {
    encode(
        &LinearizedTable::from_text(text),
        vocab,
        PositionMode::Sequential,
        max_len,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::{linearize, LinearizationOptions};
    use crate::table::Corpus;
    use proptest::prelude::*;

    fn small_corpus() -> Corpus {
        Corpus::from_tables(vec![Table::new(
            "t1",
            "MLB pay",
            vec!["Name".into(), "Salary".into()],
            vec![
                vec!["Mike Trout".into(), "$37,666,666".into()],
                vec!["Gerrit Cole".into(), "$36,000,000".into()],
            ],
        )])
        .unwrap()
    }

    #[test]
    fn vocab_is_deterministic_and_frequency_filtered() {
        let corpus = small_corpus();
        let a = Vocab::build(&corpus, &[], 1);
        let b = Vocab::build(&corpus, &[], 1);
        assert_eq!(a.tokens, b.tokens);
        assert!(a.id_of("name") > SEP_ID);
        assert_eq!(a.id_of("name"), a.id_of("Name"));

        // "mike" appears once; with min_freq 2 it encodes to UNK
        let filtered = Vocab::build(&corpus, &[], 2);
        assert_eq!(filtered.id_of("mike"), UNK_ID);
    }

    #[test]
    fn specials_round_trip_through_save() {
        let corpus = small_corpus();
        let vocab = Vocab::build(&corpus, &[], 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(vocab.tokens, loaded.tokens);
        assert_eq!(loaded.id_of("|"), CELL_DELIMITER_ID);
        assert_eq!(loaded.id_of("."), ROW_DELIMITER_ID);
    }

    #[test]
    fn ranks_follow_ascending_dense_order() {
        let t = Table::new(
            "t",
            "x",
            vec!["v".into()],
            vec![vec!["37,000".into()], vec!["5".into()], vec!["abc".into()]],
        );
        let grid = assign_ranks(&t);
        assert_eq!(grid, vec![vec![2], vec![1], vec![0]]);
    }

    #[test]
    fn tied_values_share_a_rank() {
        let t = Table::new(
            "t",
            "x",
            vec!["v".into()],
            vec![vec!["7".into()], vec!["7".into()]],
        );
        assert_eq!(assign_ranks(&t), vec![vec![1], vec![1]]);
    }

    #[test]
    fn currency_salaries_rank_ascending() {
        let t = Table::new(
            "t",
            "2021 salary",
            vec!["Salary".into()],
            vec![
                vec!["$37,666,666".into()],
                vec!["$36,000,000".into()],
                vec!["$34,500,000".into()],
            ],
        );
        assert_eq!(assign_ranks(&t), vec![vec![3], vec![2], vec![1]]);
    }

    #[test]
    fn numeric_parser_accepts_and_rejects() {
        assert_eq!(parse_numeric("$37,666,666"), Some(37_666_666.0));
        assert_eq!(parse_numeric("-5"), Some(-5.0));
        assert_eq!(parse_numeric("+3.25"), Some(3.25));
        assert_eq!(parse_numeric("abc"), None);
        assert_eq!(parse_numeric("3.4.5"), None);
        assert_eq!(parse_numeric(""), None);
        assert_eq!(parse_numeric("$"), None);
    }

    #[test]
    fn empty_input_encodes_to_cls_sep() {
        let corpus = small_corpus();
        let vocab = Vocab::build(&corpus, &[], 1);
        let seq = encode(
            &LinearizedTable::from_text(""),
            &vocab,
            PositionMode::Sequential,
            128,
            None,
        );
        assert_eq!(seq.token_ids, vec![CLS_ID, SEP_ID]);
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.segment_ids, vec![0, 0]);
    }

    #[test]
    fn sequential_positions_run_over_the_sequence() {
        let corpus = small_corpus();
        let vocab = Vocab::build(&corpus, &[], 1);
        let lin = linearize(corpus.get("t1").unwrap(), &LinearizationOptions::default());
        let seq = encode(&lin, &vocab, PositionMode::Sequential, 128, None);
        let expected: Vec<usize> = (0..seq.len()).collect();
        assert_eq!(seq.position_ids, expected);
    }

    #[test]
    fn cell_reset_positions_restart_per_cell() {
        let corpus = small_corpus();
        let vocab = Vocab::build(&corpus, &[], 1);
        let lin = linearize(corpus.get("t1").unwrap(), &LinearizationOptions::default());
        let seq = encode(&lin, &vocab, PositionMode::CellReset, 128, None);
        // [CLS] MLB pay . Name | Salary . Mike Trout | $37,666,666 . ...
        // "Mike Trout" is a two-word cell: positions 0, 1
        let mike = vocab.id_of("mike");
        let i = seq.token_ids.iter().position(|&t| t == mike).unwrap();
        assert_eq!(seq.position_ids[i], 0);
        assert_eq!(seq.position_ids[i + 1], 1);
        // non-cell tokens sit at position 0
        assert_eq!(seq.position_ids[0], 0);
        assert_eq!(seq.position_ids[1], 0);
    }

    #[test]
    fn tokens_of_numeric_cells_inherit_the_cell_rank() {
        let corpus = small_corpus();
        let vocab = Vocab::build(&corpus, &[], 1);
        let table = corpus.get("t1").unwrap();
        let lin = linearize(table, &LinearizationOptions::default());
        let ranks = assign_ranks(table);
        let seq = encode(&lin, &vocab, PositionMode::Sequential, 128, Some(&ranks));
        let salary = vocab.id_of("$37,666,666");
        let i = seq.token_ids.iter().position(|&t| t == salary).unwrap();
        assert_eq!(seq.rank_ids[i], 2);
        // header tokens carry rank 0
        let name = vocab.id_of("name");
        let j = seq.token_ids.iter().position(|&t| t == name).unwrap();
        assert_eq!(seq.rank_ids[j], 0);
    }

    fn arb_table() -> impl Strategy<Value = Table> {
        (1usize..4, 0usize..4).prop_flat_map(|(w, h)| {
            (
                "[a-z0-9 ]{0,10}",
                prop::collection::vec("[a-z0-9 ]{0,8}", w),
                prop::collection::vec(prop::collection::vec("[a-z0-9 ]{0,8}", w), h),
            )
                .prop_map(|(title, header, rows)| Table::new("t", title, header, rows))
        })
    }

    proptest! {
        #[test]
        fn channels_share_one_length(t in arb_table(), mode in prop_oneof![Just(PositionMode::Sequential), Just(PositionMode::CellReset)], max_len in 2usize..64) {
            let corpus = Corpus::from_tables(vec![t.clone()]).unwrap();
            let vocab = Vocab::build(&corpus, &[], 1);
            let lin = linearize(&t, &LinearizationOptions::default());
            let ranks = assign_ranks(&t);
            let seq = encode(&lin, &vocab, mode, max_len, Some(&ranks));
            let len = seq.len();
            prop_assert!(len <= max_len);
            prop_assert_eq!(seq.segment_ids.len(), len);
            prop_assert_eq!(seq.position_ids.len(), len);
            prop_assert_eq!(seq.row_ids.len(), len);
            prop_assert_eq!(seq.col_ids.len(), len);
            prop_assert_eq!(seq.rank_ids.len(), len);
            prop_assert_eq!(seq.token_ids[0], CLS_ID);
            prop_assert_eq!(*seq.token_ids.last().unwrap(), SEP_ID);
        }

        #[test]
        fn decode_reproduces_words_modulo_unk(t in arb_table()) {
            let corpus = Corpus::from_tables(vec![t.clone()]).unwrap();
            let vocab = Vocab::build(&corpus, &[], 1);
            let lin = linearize(&t, &LinearizationOptions::default().with_budget(usize::MAX >> 1));
            let seq = encode(&lin, &vocab, PositionMode::Sequential, usize::MAX >> 1, None);
            let decoded = vocab.decode(&seq.token_ids);
            prop_assert_eq!(decoded.len(), lin.words.len() + 2);
            for (got, want) in decoded[1..decoded.len() - 1].iter().zip(&lin.words) {
                if *got != UNK {
                    prop_assert_eq!(got.to_string(), want.to_lowercase());
                }
            }
        }

        #[test]
        fn position_bounds_by_mode(t in arb_table()) {
            let corpus = Corpus::from_tables(vec![t.clone()]).unwrap();
            let vocab = Vocab::build(&corpus, &[], 1);
            let lin = linearize(&t, &LinearizationOptions::default());
            let seq = encode(&lin, &vocab, PositionMode::Sequential, 128, None);
            prop_assert_eq!(*seq.position_ids.iter().max().unwrap(), seq.len() - 1);

            let seq = encode(&lin, &vocab, PositionMode::CellReset, 128, None);
            let max_cell_words = t
                .header
                .iter()
                .chain(t.rows.iter().flatten())
                .map(|c| c.split_whitespace().count())
                .max()
                .unwrap_or(0);
            prop_assert!(*seq.position_ids.iter().max().unwrap() <= max_cell_words.max(1));
        }

        #[test]
        fn rank_zero_outside_cells(t in arb_table()) {
            let corpus = Corpus::from_tables(vec![t.clone()]).unwrap();
            let vocab = Vocab::build(&corpus, &[], 1);
            let lin = linearize(&t, &LinearizationOptions::default());
            let ranks = assign_ranks(&t);
            let seq = encode(&lin, &vocab, PositionMode::Sequential, 128, Some(&ranks));
            for i in 0..seq.len() {
                if seq.row_ids[i] == 0 {
                    prop_assert_eq!(seq.rank_ids[i], 0);
                }
            }
        }
    }
}
