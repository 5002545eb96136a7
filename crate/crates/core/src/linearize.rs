//! Structure-preserving table linearization.
//!
//! A table serializes top-to-bottom, left-to-right into the template
//! `[title] . [header] . [content_1] . ... . [content_n]`, with a
//! standalone `.` word between segments and a standalone `|` word between
//! adjacent cells. Each emitted word carries structural provenance
//! (segment, 1-indexed row, 1-indexed column; zero for words outside a
//! cell). Truncation keeps the longest row prefix that fits a word
//! budget, shuffle perturbations permute cells within rows or columns,
//! and [`parse_linearized`] inverts a fully delimited linearization as a
//! round-trip oracle.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table;

pub const CELL_DELIMITER: &str = "|";
pub const ROW_DELIMITER: &str = ".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleMode {
    None,
    Row,
    Column,
    Both,
}

/// Which delimiters the linearization emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelimiterMode {
    All,
    Cell,
    Row,
    None,
}

impl DelimiterMode {
    pub fn cell_on(self) -> bool {
        matches!(self, DelimiterMode::All | DelimiterMode::Cell)
    }

    pub fn row_on(self) -> bool {
        matches!(self, DelimiterMode::All | DelimiterMode::Row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationOptions {
    pub cell_delimiter_on: bool,
    pub row_delimiter_on: bool,
    pub shuffle_mode: ShuffleMode,
    pub shuffle_seed: u64,
    /// Whether the header row participates in row-mode shuffling.
    pub shuffle_header_in_row: bool,
    pub word_budget: usize,
}

impl Default for LinearizationOptions {
    fn default() -> Self {
        LinearizationOptions {
            cell_delimiter_on: true,
            row_delimiter_on: true,
            shuffle_mode: ShuffleMode::None,
            shuffle_seed: 0,
            shuffle_header_in_row: true,
            word_budget: 100,
        }
    }
}

impl LinearizationOptions {
    pub fn with_delimiters(mut self, mode: DelimiterMode) -> Self {
        self.cell_delimiter_on = mode.cell_on();
        self.row_delimiter_on = mode.row_on();
        self
    }

    pub fn with_shuffle(mut self, mode: ShuffleMode, seed: u64) -> Self {
        self.shuffle_mode = mode;
        self.shuffle_seed = seed;
        self
    }

    pub fn with_budget(mut self, words: usize) -> Self {
        assert!(words >= 1, "word budget must be at least 1");
        self.word_budget = words;
        self
    }
}

/// Per-word structural provenance. `segment` is 0 for title words and 1
/// for table words; `row`/`col` are 1-indexed and 0 for words that are
/// not inside a cell (title words and delimiters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub segment: u8,
    pub row: usize,
    pub col: usize,
}

impl Provenance {
    pub fn in_cell(&self) -> bool {
        self.row > 0 && self.col > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedTable {
    pub words: Vec<String>,
    pub provenance: Vec<Provenance>,
}

impl LinearizedTable {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Plain text (questions): every word is segment 0, outside any cell.
    pub fn from_text(text: &str) -> Self {
        let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let provenance = vec![
            Provenance {
                segment: 0,
                row: 0,
                col: 0
            };
            words.len()
        ];
        LinearizedTable { words, provenance }
    }
}

/// Cell-internal standalone delimiter words are rewritten so the emitted
/// delimiters stay unambiguous and the round trip is well defined.
fn sanitize_word(word: &str) -> &str {
    match word {
        CELL_DELIMITER => "/",
        ROW_DELIMITER => ";",
        other => other,
    }
}

fn field_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| sanitize_word(w).to_string())
        .collect()
}

fn field_word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Rewrites every field to single-space-joined sanitized words. Fixpoint
/// of the rewriting applied by [`linearize`]; `parse_linearized` inverts
/// linearizations of sanitized tables exactly.
pub fn sanitize_table(table: &Table) -> Table {
    let clean = |s: &String| field_words(s).join(" ");
    Table {
        id: table.id.clone(),
        title: clean(&table.title),
        header: table.header.iter().map(clean).collect(),
        rows: table
            .rows
            .iter()
            .map(|row| row.iter().map(clean).collect())
            .collect(),
    }
}

/// Word count of the full linearization with both delimiters on.
fn linearized_word_count(table: &Table, row_limit: usize) -> usize {
    let title = field_word_count(&table.title);
    let header: usize =
        table.header.iter().map(|c| field_word_count(c)).sum::<usize>() + (table.header.len() - 1);
    let mut total = title + 1 + header;
    for row in table.rows.iter().take(row_limit) {
        let cells: usize = row.iter().map(|c| field_word_count(c)).sum();
        total += 1 + cells + (row.len() - 1);
    }
    total
}

/// Keeps the title, the header, and the longest prefix of content rows
/// whose full linearization (with both delimiters) fits the budget. The
/// title and header are always kept even if they alone exceed it.
pub fn select_rows_within_budget(table: &Table, word_budget: usize) -> Table {
    assert!(word_budget >= 1, "word budget must be at least 1");
    let mut keep = 0;
    for limit in 1..=table.rows.len() {
        if linearized_word_count(table, limit) <= word_budget {
            keep = limit;
        } else {
            break;
        }
    }
    Table {
        id: table.id.clone(),
        title: table.title.clone(),
        header: table.header.clone(),
        rows: table.rows[..keep].to_vec(),
    }
}

fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) ^ index);
    rng
}

/// Permutes cells within rows and/or columns. Each row and column draws
/// from its own seed substream, so results do not depend on iteration
/// order. Header cells join row-mode shuffles when `include_header` is
/// set (they form a row) but never column-mode shuffles.
pub fn shuffle_table_with(
    table: &Table,
    mode: ShuffleMode,
    seed: u64,
    include_header: bool,
) -> Table {
    let mut out = table.clone();
    if matches!(mode, ShuffleMode::Row | ShuffleMode::Both) {
        if include_header {
            out.header.shuffle(&mut substream(seed, 0, 0));
        }
        for (i, row) in out.rows.iter_mut().enumerate() {
            row.shuffle(&mut substream(seed, 0, i as u64 + 1));
        }
    }
    if matches!(mode, ShuffleMode::Column | ShuffleMode::Both) {
        let width = out.header.len();
        for c in 0..width {
            let mut column: Vec<String> = out.rows.iter().map(|r| r[c].clone()).collect();
            column.shuffle(&mut substream(seed, 1, c as u64));
            for (row, cell) in out.rows.iter_mut().zip(column) {
                row[c] = cell;
            }
        }
    }
    out
}

pub fn shuffle_table(table: &Table, mode: ShuffleMode, seed: u64) -> Table {
    shuffle_table_with(table, mode, seed, true)
}

/// Budget truncation followed by the requested shuffle: the table exactly
/// as the linearizer will emit it.
pub fn prepare_table(table: &Table, options: &LinearizationOptions) -> Table {
    let truncated = select_rows_within_budget(table, options.word_budget);
    match options.shuffle_mode {
        ShuffleMode::None => truncated,
        mode => shuffle_table_with(
            &truncated,
            mode,
            options.shuffle_seed,
            options.shuffle_header_in_row,
        ),
    }
}

/// Emits the word stream for an already prepared (truncated/shuffled)
/// table.
pub fn linearize_prepared(table: &Table, options: &LinearizationOptions) -> LinearizedTable {
    let mut words = Vec::new();
    let mut provenance = Vec::new();
    let mut push = |word: String, prov: Provenance| {
        words.push(word);
        provenance.push(prov);
    };
    let delim = Provenance {
        segment: 1,
        row: 0,
        col: 0,
    };

    for w in field_words(&table.title) {
        push(
            w,
            Provenance {
                segment: 0,
                row: 0,
                col: 0,
            },
        );
    }

    let emit_row = |row_index: usize, cells: &[String], push: &mut dyn FnMut(String, Provenance)| {
        if options.row_delimiter_on {
            push(ROW_DELIMITER.to_string(), delim);
        }
        for (c, cell) in cells.iter().enumerate() {
            if c > 0 && options.cell_delimiter_on {
                push(CELL_DELIMITER.to_string(), delim);
            }
            for w in field_words(cell) {
                push(
                    w,
                    Provenance {
                        segment: 1,
                        row: row_index,
                        col: c + 1,
                    },
                );
            }
        }
    };

    emit_row(1, &table.header, &mut push);
    for (r, row) in table.rows.iter().enumerate() {
        emit_row(r + 2, row, &mut push);
    }

    LinearizedTable { words, provenance }
}

/// Full linearization pipeline: truncate to the word budget, apply the
/// shuffle perturbation, then emit words with the configured delimiters.
pub fn linearize(table: &Table, options: &LinearizationOptions) -> LinearizedTable {
    linearize_prepared(&prepare_table(table, options), options)
}

/// Inverts a linearization produced with both delimiters on and no
/// truncation. The reconstructed table carries an empty id.
pub fn parse_linearized(words: &[String]) -> Result<Table> {
    let blocks: Vec<&[String]> = words
        .split(|w| w == ROW_DELIMITER)
        .collect();
    if blocks.len() < 2 {
        return Err(Error::MalformedLinearization {
            message: format!(
                "expected at least a title and a header block, found {} block(s)",
                blocks.len()
            ),
        });
    }
    let cells_of = |block: &[String]| -> Vec<String> {
        block
            .split(|w| w == CELL_DELIMITER)
            .map(|cell| cell.join(" "))
            .collect()
    };
    let title = blocks[0].join(" ");
    let header = cells_of(blocks[1]);
    let width = header.len();
    let mut rows = Vec::with_capacity(blocks.len() - 2);
    for (i, block) in blocks[2..].iter().enumerate() {
        let cells = cells_of(block);
        if cells.len() != width {
            return Err(Error::MalformedLinearization {
                message: format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    cells.len(),
                    width
                ),
            });
        }
        rows.push(cells);
    }
    Ok(Table {
        id: String::new(),
        title,
        header,
        rows,
    })
}
