//! Seeded synthetic corpus and question generator.
//!
//! Tables follow the template `list of <category> by <attribute>` with a
//! `name` column of corpus-unique entities and attribute columns of
//! values; questions ask `what is the <attribute> of <entity>`. Each
//! answer string occurs in exactly one table, enforced by construction:
//! asked cells draw from corpus-unique value pools whose identifier
//! families use disjoint fixed digit widths, so no answer can appear as
//! a substring of any other identifier. Generation is a pure function of
//! the spec (seed included).
//!
//! Cells that no question asks about draw from small shared pools, and
//! tables in the same category draw attributes from a shared pool, so
//! distractors overlap heavily and a table's lexical identity rests on
//! its entity names plus its asked cells: retrieval has to discriminate
//! on content rather than on disjoint keywords.
//!
//! Questions come in per-table pairs about one focal row (two different
//! attributes of the same entity). The 75/25 train/test split always
//! takes the second member of a pair, so every test entity also appears
//! in some training question and held-out accuracy measures composition,
//! not memorization of unseen tokens.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Corpus, Question, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub table_count: usize,
    /// Inclusive range of content rows per table.
    pub rows_per_table: (usize, usize),
    /// Inclusive range of columns per table (the `name` column included).
    pub cols_per_table: (usize, usize),
    pub entity_vocab_size: usize,
    pub attribute_vocab_size: usize,
    pub questions_per_table: usize,
    pub numeric_column_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            table_count: 200,
            rows_per_table: (3, 8),
            cols_per_table: (3, 5),
            entity_vocab_size: 2000,
            attribute_vocab_size: 60,
            questions_per_table: 2,
            numeric_column_fraction: 0.3,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub train: Vec<Question>,
    pub test: Vec<Question>,
}

impl SyntheticData {
    pub fn all_questions(&self) -> Vec<Question> {
        self.train.iter().chain(&self.test).cloned().collect()
    }
}

// Identifier digit widths. Unique text values always render with a
// leading zero (ids < 10000) while unique numeric values are five digits
// in 10000..90000 and shared numerics sit in 90000..90030, so no answer
// string can occur inside any other identifier family.
const ENTITY_WIDTH: usize = 4;
const VALUE_WIDTH: usize = 5;
const NUMERIC_BASE: usize = 10_000;
const NUMERIC_SPAN: usize = 80_000;
const SHARED_POOL: usize = 30;
const SHARED_NUMERIC_BASE: usize = 90_000;

fn stream_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

fn range_sample(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    rng.gen_range(range.0..=range.1)
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    let fail = |message: String| Err(Error::InfeasibleSpec { message });
    if spec.table_count == 0 || spec.questions_per_table == 0 {
        return fail("table_count and questions_per_table must be positive".into());
    }
    if spec.rows_per_table.0 == 0 || spec.rows_per_table.0 > spec.rows_per_table.1 {
        return fail(format!(
            "rows_per_table range {:?} is empty or starts at zero",
            spec.rows_per_table
        ));
    }
    if spec.cols_per_table.0 < 3 || spec.cols_per_table.0 > spec.cols_per_table.1 {
        return fail(format!(
            "cols_per_table range {:?} must start at 3 (name plus two attributes for question pairs)",
            spec.cols_per_table
        ));
    }
    if !(0.0..=1.0).contains(&spec.numeric_column_fraction) {
        return fail("numeric_column_fraction must lie in [0, 1]".into());
    }
    if spec.entity_vocab_size > 10_000 {
        return fail("entity_vocab_size above 10000 breaks the digit-width disjointness".into());
    }
    if spec.attribute_vocab_size == 0 || spec.attribute_vocab_size > 1000 {
        return fail("attribute_vocab_size must lie in 1..=1000".into());
    }
    let worst_case_entities = spec.table_count * spec.rows_per_table.1;
    if spec.table_count * spec.rows_per_table.0 > spec.entity_vocab_size {
        return fail(format!(
            "entity vocabulary of {} cannot cover at least {} required unique entities",
            spec.entity_vocab_size,
            spec.table_count * spec.rows_per_table.0
        ));
    }
    let attrs_needed = spec.cols_per_table.1 - 1;
    if attrs_needed > spec.attribute_vocab_size {
        return fail(format!(
            "attribute vocabulary of {} is smaller than the {} attributes a table may need",
            spec.attribute_vocab_size, attrs_needed
        ));
    }
    let _ = worst_case_entities;
    Ok(())
}

/// Generates the corpus plus 75/25 train/test question lists.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    validate(spec)?;

    let category_count = (spec.table_count / 10).max(1).min(99);
    let attrs: Vec<String> = (0..spec.attribute_vocab_size)
        .map(|i| format!("attr-{i:03}"))
        .collect();
    let mut meta_rng = stream_rng(spec.seed, 0);
    let numeric_attr: Vec<bool> = (0..spec.attribute_vocab_size)
        .map(|_| meta_rng.gen::<f64>() < spec.numeric_column_fraction)
        .collect();

    // per-category attribute pools (shared within a category)
    let pool_size = (spec.cols_per_table.1 - 1 + 3).min(spec.attribute_vocab_size);
    let category_pools: Vec<Vec<usize>> = (0..category_count)
        .map(|c| {
            let mut ids: Vec<usize> = (0..spec.attribute_vocab_size).collect();
            ids.shuffle(&mut stream_rng(spec.seed, 100 + c as u64));
            ids.truncate(pool_size);
            ids
        })
        .collect();

    // draw-without-replacement pools for entities and values
    let mut entity_pool: Vec<usize> = (0..spec.entity_vocab_size).collect();
    entity_pool.shuffle(&mut stream_rng(spec.seed, 1));
    let mut entity_cursor = 0usize;
    let vocab_size = spec.entity_vocab_size;
    let mut next_entity = move || -> Result<String> {
        if entity_cursor >= entity_pool.len() {
            return Err(Error::InfeasibleSpec {
                message: format!("entity vocabulary of {vocab_size} exhausted"),
            });
        }
        let id = entity_pool[entity_cursor];
        entity_cursor += 1;
        Ok(format!("entity-{id:0width$}", width = ENTITY_WIDTH))
    };

    let mut numeric_pool: Vec<usize> = (NUMERIC_BASE..NUMERIC_BASE + NUMERIC_SPAN).collect();
    numeric_pool.shuffle(&mut stream_rng(spec.seed, 2));
    let mut numeric_cursor = 0usize;
    let mut text_cursor = 0usize;

    let pairs = spec.questions_per_table / 2;
    let odd = spec.questions_per_table % 2;
    let mut table_rng = stream_rng(spec.seed, 3);
    let mut plan_rng = stream_rng(spec.seed, 4);
    let mut tables = Vec::with_capacity(spec.table_count);
    // per table: the (row, attribute column) cells its questions ask about
    let mut plans: Vec<Vec<(usize, usize)>> = Vec::with_capacity(spec.table_count);
    for t in 0..spec.table_count {
        let category = t % category_count;
        let rows = range_sample(&mut table_rng, spec.rows_per_table);
        let cols = range_sample(&mut table_rng, spec.cols_per_table);
        let mut pool = category_pools[category].clone();
        pool.shuffle(&mut table_rng);
        let table_attrs: Vec<usize> = pool.into_iter().take(cols - 1).collect();
        let attr_count = cols - 1;

        // each question pair targets one focal row and two attributes
        let mut plan: Vec<(usize, usize)> = Vec::with_capacity(spec.questions_per_table);
        for _ in 0..pairs {
            let row = plan_rng.gen_range(0..rows);
            let first = plan_rng.gen_range(0..attr_count);
            let mut second = plan_rng.gen_range(0..attr_count - 1);
            if second >= first {
                second += 1;
            }
            plan.push((row, first));
            plan.push((row, second));
        }
        for _ in 0..odd {
            let mut cell = (
                plan_rng.gen_range(0..rows),
                plan_rng.gen_range(0..attr_count),
            );
            for _ in 0..8 {
                if !plan.contains(&cell) {
                    break;
                }
                cell = (
                    plan_rng.gen_range(0..rows),
                    plan_rng.gen_range(0..attr_count),
                );
            }
            plan.push(cell);
        }
        let asked: std::collections::HashSet<(usize, usize)> = plan.iter().copied().collect();

        let mut header = vec!["name".to_string()];
        header.extend(table_attrs.iter().map(|&a| attrs[a].clone()));

        let mut content = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut row_cells = vec![next_entity()?];
            for (c, &a) in table_attrs.iter().enumerate() {
                let value = if asked.contains(&(r, c)) {
                    // asked cells carry corpus-unique answers
                    if numeric_attr[a] {
                        if numeric_cursor >= numeric_pool.len() {
                            return Err(Error::InfeasibleSpec {
                                message: "numeric value pool exhausted".into(),
                            });
                        }
                        numeric_cursor += 1;
                        numeric_pool[numeric_cursor - 1].to_string()
                    } else {
                        if text_cursor >= NUMERIC_BASE {
                            return Err(Error::InfeasibleSpec {
                                message: "text value pool exhausted".into(),
                            });
                        }
                        text_cursor += 1;
                        format!("val-{:0width$}", text_cursor - 1, width = VALUE_WIDTH)
                    }
                } else if numeric_attr[a] {
                    (SHARED_NUMERIC_BASE + table_rng.gen_range(0..SHARED_POOL)).to_string()
                } else {
                    format!("word-{:02}", table_rng.gen_range(0..SHARED_POOL))
                };
                row_cells.push(value);
            }
            content.push(row_cells);
        }

        tables.push(Table::new(
            format!("t{t:04}"),
            format!("list of category-{category:02} by {}", attrs[table_attrs[0]]),
            header,
            content,
        ));
        plans.push(plan);
    }
    let corpus = Corpus::from_tables(tables)?;

    let mut question_counter = 0usize;
    let mut per_table: Vec<Vec<Question>> = Vec::with_capacity(spec.table_count);
    for (table, plan) in corpus.iter().zip(&plans) {
        let mut questions = Vec::with_capacity(plan.len());
        for &(row, col) in plan {
            let entity = &table.rows[row][0];
            let attr = &table.header[col + 1];
            questions.push(Question {
                id: format!("q{question_counter:05}"),
                text: format!("what is the {attr} of {entity}"),
                answers: vec![table.rows[row][col + 1].clone()],
                positive_table_id: table.id.clone(),
            });
            question_counter += 1;
        }
        per_table.push(questions);
    }

    // split: move the second member of a table's last question pair to
    // test, walking tables in shuffled order until a quarter of all
    // questions is held out; the pair's first member stays in train so
    // every test entity keeps a sibling training question
    let total = spec.table_count * spec.questions_per_table;
    let test_target = total / 4;
    let mut table_order: Vec<usize> = (0..spec.table_count).collect();
    table_order.shuffle(&mut stream_rng(spec.seed, 5));
    let mut train = Vec::with_capacity(total - test_target);
    let mut test = Vec::with_capacity(test_target);
    for &t in &table_order {
        if test.len() >= test_target {
            break;
        }
        let pairs = spec.questions_per_table / 2;
        if pairs > 0 {
            test.push(per_table[t].remove(pairs * 2 - 1));
        }
    }
    for questions in per_table {
        train.extend(questions);
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    test.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(SyntheticData {
        corpus,
        train,
        test,
    })
}
