//! The 13-way structural relation taxonomy for soft attention bias.
//!
//! Every ordered token pair is classified by the components of its two
//! tokens (sentence, header, cell) and, where meaningful, by row and
//! column alignment. The mapping is total and deterministic, and it is
//! invariant to the numerical row/column indices themselves, so
//! permuting content rows or columns permutes the relation matrix
//! consistently.

use crate::tokenize::TokenizedSequence;

pub const RELATION_COUNT: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Sentence,
    Header,
    Cell,
}

const COMPONENTS: [Component; 3] = [Component::Sentence, Component::Header, Component::Cell];

fn component_index(c: Component) -> usize {
    match c {
        Component::Sentence => 0,
        Component::Header => 1,
        Component::Cell => 2,
    }
}

/// Total mapping from ordered pair descriptors to relation ids 1..=13,
/// held as data so alternate taxonomies can be swapped in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTaxonomy {
    // [from * 3 + to][same_row * 2 + same_col]
    table: [[u8; 4]; 9],
}

impl Default for RelationTaxonomy {
    fn default() -> Self {
        RelationTaxonomy::from_fn(|from, to, same_row, same_col| {
            use Component::*;
            match (from, to) {
                (Sentence, Sentence) => 1,
                (Sentence, Header) => 2,
                (Sentence, Cell) => 3,
                (Header, Sentence) => 4,
                (Header, Header) => 5,
                (Header, Cell) if same_col => 6,
                (Header, Cell) => 7,
                (Cell, Sentence) => 8,
                (Cell, Header) if same_col => 9,
                (Cell, Header) => 10,
                // same-cell pairs (same row and same column) classify as same row
                (Cell, Cell) if same_row => 11,
                (Cell, Cell) if same_col => 12,
                (Cell, Cell) => 13,
            }
        })
    }
}

impl RelationTaxonomy {
    pub fn from_fn(f: impl Fn(Component, Component, bool, bool) -> u8) -> Self {
        let mut table = [[0u8; 4]; 9];
        for &from in &COMPONENTS {
            for &to in &COMPONENTS {
                for flags in 0..4 {
                    let id = f(from, to, flags & 2 != 0, flags & 1 != 0);
                    assert!(
                        (1..=RELATION_COUNT as u8).contains(&id),
                        "relation ids must lie in 1..={RELATION_COUNT}"
                    );
                    table[component_index(from) * 3 + component_index(to)][flags] = id;
                }
            }
        }
        RelationTaxonomy { table }
    }

    pub fn relation(&self, from: Component, to: Component, same_row: bool, same_col: bool) -> u8 {
        let flags = (same_row as usize) * 2 + same_col as usize;
        self.table[component_index(from) * 3 + component_index(to)][flags]
    }
}

/// Component of token `i`: sentence for segment-0 tokens and delimiters
/// (anything outside a cell), header for row-1 cells, cell otherwise.
pub fn token_component(seq: &TokenizedSequence, i: usize) -> Component {
    if seq.segment_ids[i] == 0 || (seq.row_ids[i] == 0 && seq.col_ids[i] == 0) {
        Component::Sentence
    } else if seq.row_ids[i] == 1 {
        Component::Header
    } else {
        Component::Cell
    }
}

/// Dense `L x L` matrix of relation ids for all ordered token pairs.
pub fn build_relation_matrix(seq: &TokenizedSequence, taxonomy: &RelationTaxonomy) -> Vec<u8> {
    let len = seq.len();
    let components: Vec<Component> = (0..len).map(|i| token_component(seq, i)).collect();
    let mut out = vec![0u8; len * len];
    for i in 0..len {
        let (ri, ci) = (seq.row_ids[i], seq.col_ids[i]);
        for j in 0..len {
            let same_row = ri > 0 && ri == seq.row_ids[j];
            let same_col = ci > 0 && ci == seq.col_ids[j];
            out[i * len + j] = taxonomy.relation(components[i], components[j], same_row, same_col);
        }
    }
    out
}
