use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::BiEncoder;
use crate::error::{Error, Result};
use crate::table::{Corpus, Question};

use super::{DenseIndex, EncodeCtx};

pub const DEFAULT_KS: [usize; 5] = [1, 5, 10, 20, 50];

/// Per-k retrieval accuracy on one question set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(k, accuracy)` pairs, ascending in k.
    pub accuracy_at: Vec<(usize, f64)>,
    pub question_count: usize,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.accuracy_at
            .iter()
            .find(|(kk, _)| *kk == k)
            .map(|(_, a)| *a)
    }

    pub fn is_monotone(&self) -> bool {
        self.accuracy_at
            .windows(2)
            .all(|w| w[0].1 <= w[1].1)
    }

    pub fn markdown_header(&self) -> String {
        let mut cols = String::from("| Model |");
        let mut rule = String::from("|---|");
        for (k, _) in &self.accuracy_at {
            cols.push_str(&format!(" @{k} |"));
            rule.push_str("---|");
        }
        format!("{cols}\n{rule}")
    }

    pub fn markdown_row(&self, label: &str) -> String {
        let mut row = format!("| {label} |");
        for (_, acc) in &self.accuracy_at {
            row.push_str(&format!(" {:.2} |", acc * 100.0));
        }
        row
    }

    pub fn to_markdown(&self, label: &str) -> String {
        format!("{}\n{}", self.markdown_header(), self.markdown_row(label))
    }
}

/// Stable 64-bit FNV-1a fingerprint over configuration fragments.
pub fn fingerprint(parts: &[&str]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}

/// Accuracy@k over precomputed question vectors: the fraction of
/// questions whose top-k retrieved tables contain an answer string.
pub fn evaluate_with_vectors(
    index: &DenseIndex,
    corpus: &Corpus,
    questions: &[Question],
    vectors: &[Vec<f32>],
    ks: &[usize],
) -> Result<EvalReport> {
    if questions.is_empty() {
        return Err(Error::EmptyQuestionSet);
    }
    assert_eq!(questions.len(), vectors.len());
    let mut ks: Vec<usize> = ks.iter().copied().filter(|&k| k > 0).collect();
    ks.sort_unstable();
    ks.dedup();
    let deepest = ks.last().copied().unwrap_or(1).min(index.len());

    // rank of the first answer-bearing table per question; None if absent
    let first_hits: Vec<Option<usize>> = questions
        .par_iter()
        .zip(vectors.par_iter())
        .map(|(q, v)| {
            let ranked = index.retrieve(v, deepest).expect("deepest <= index len");
            ranked.iter().position(|(id, _)| {
                corpus
                    .get(id)
                    .is_some_and(|t| t.contains_answer(&q.answers))
            })
        })
        .collect();

    let n = questions.len() as f64;
    let accuracy_at = ks
        .into_iter()
        .map(|k| {
            let hits = first_hits
                .iter()
                .filter(|h| h.is_some_and(|rank| rank < k.min(deepest)))
                .count();
            (k, hits as f64 / n)
        })
        .collect();

    Ok(EvalReport {
        accuracy_at,
        question_count: questions.len(),
        config_fingerprint: fingerprint(&[
            &serde_json::to_string(&index.len()).unwrap_or_default(),
            &questions.len().to_string(),
        ]),
    })
}

/// Encodes the questions with the model's question tower and evaluates.
pub fn evaluate(
    index: &DenseIndex,
    model: &BiEncoder,
    ctx: &EncodeCtx,
    corpus: &Corpus,
    questions: &[Question],
    ks: &[usize],
) -> Result<EvalReport> {
    let vectors: Vec<Vec<f32>> = questions
        .par_iter()
        .map(|q| ctx.embed_question(model, &q.text))
        .collect();
    let mut report = evaluate_with_vectors(index, corpus, questions, &vectors, ks)?;
    report.config_fingerprint = fingerprint(&[
        &serde_json::to_string(&model.config).unwrap_or_default(),
        &serde_json::to_string(&ctx.options).unwrap_or_default(),
        &index.len().to_string(),
        &questions.len().to_string(),
    ]);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Table;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus_of(n: usize) -> Corpus {
        Corpus::from_tables(
            (0..n)
                .map(|i| {
                    Table::new(
                        format!("t{i:02}"),
                        format!("table {i}"),
                        vec!["value".into()],
                        vec![vec![format!("cell-{i:02}")]],
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn question_for(i: usize, n_positive: usize) -> Question {
        Question {
            id: format!("q{i}"),
            text: "what".into(),
            answers: vec![format!("cell-{n_positive:02}")],
            positive_table_id: format!("t{n_positive:02}"),
        }
    }

    /// One-hot index: table i scores highest for query direction i.
    fn one_hot_index(n: usize) -> DenseIndex {
        let mut emb = vec![0.0f32; n * n];
        for i in 0..n {
            emb[i * n + i] = 1.0;
        }
        DenseIndex::new((0..n).map(|i| format!("t{i:02}")).collect(), emb, n)
    }

    #[test]
    fn positive_at_rank_three_scores_at_five_not_one() {
        let corpus = corpus_of(6);
        let index = one_hot_index(6);
        // query ranks t00 then t01 then t02 (the positive) by score
        let mut v = vec![0.0f32; 6];
        v[0] = 0.9;
        v[1] = 0.8;
        v[2] = 0.7;
        let q = question_for(0, 2);
        let report =
            evaluate_with_vectors(&index, &corpus, &[q], &[v], &[1, 5, 10]).unwrap();
        assert_eq!(report.accuracy(1), Some(0.0));
        assert_eq!(report.accuracy(5), Some(1.0));
        assert_eq!(report.accuracy(10), Some(1.0));
    }

    #[test]
    fn rank_one_everywhere_is_perfect() {
        let corpus = corpus_of(4);
        let index = one_hot_index(4);
        let questions: Vec<Question> = (0..4).map(|i| question_for(i, i)).collect();
        let vectors: Vec<Vec<f32>> = (0..4)
            .map(|i| {
                let mut v = vec![0.0f32; 4];
                v[i] = 1.0;
                v
            })
            .collect();
        let report =
            evaluate_with_vectors(&index, &corpus, &questions, &vectors, &DEFAULT_KS).unwrap();
        for (_, acc) in &report.accuracy_at {
            assert_eq!(*acc, 1.0);
        }
    }

    #[test]
    fn empty_question_set_is_an_error() {
        let corpus = corpus_of(2);
        let index = one_hot_index(2);
        assert!(matches!(
            evaluate_with_vectors(&index, &corpus, &[], &[], &[1]),
            Err(Error::EmptyQuestionSet)
        ));
    }

    #[test]
    fn accuracy_is_nondecreasing_in_k() {
        let corpus = corpus_of(30);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb: Vec<f32> = (0..30 * 8).map(|_| rng.gen::<f32>() - 0.5).collect();
        let index = DenseIndex::new((0..30).map(|i| format!("t{i:02}")).collect(), emb, 8);
        let questions: Vec<Question> = (0..10).map(|i| question_for(i, i)).collect();
        let vectors: Vec<Vec<f32>> = (0..10)
            .map(|_| (0..8).map(|_| rng.gen::<f32>() - 0.5).collect())
            .collect();
        let report =
            evaluate_with_vectors(&index, &corpus, &questions, &vectors, &DEFAULT_KS).unwrap();
        assert!(report.is_monotone(), "{:?}", report.accuracy_at);
    }

    #[test]
    fn markdown_layout_lists_all_ks() {
        let report = EvalReport {
            accuracy_at: vec![(1, 0.5), (5, 0.75), (10, 0.8), (20, 0.9), (50, 1.0)],
            question_count: 4,
            config_fingerprint: "deadbeef".into(),
        };
        let md = report.to_markdown("model");
        assert!(md.contains("| @1 | @5 | @10 | @20 | @50 |"));
        assert!(md.contains("| model | 50.00 | 75.00 | 80.00 | 90.00 | 100.00 |"));
    }
}
