//! Ablation grids over shuffle modes, delimiter modes, and structure
//! encodings, with markdown/CSV/JSON report emission.
//!
//! A grid cell pairs a training condition with a test condition. Models
//! are trained once per distinct (train condition, seed) and reused
//! across the cells that share them; per-cell test conditions only
//! change how the evaluation corpus is linearized. A cell whose training
//! diverges is reported with an error marker and the remaining cells
//! proceed.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{BiEncoder, EncoderConfig, StructureMode};
use crate::error::{Error, Result};
use crate::linearize::{DelimiterMode, LinearizationOptions, ShuffleMode};
use crate::retrieval::{evaluate, fingerprint, train, DenseIndex, EncodeCtx, TrainingConfig};
use crate::synthetic::SyntheticData;
use crate::tokenize::Vocab;

/// One linearization/model condition of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub shuffle: ShuffleMode,
    pub delimiters: DelimiterMode,
    pub structure: StructureMode,
}

impl Condition {
    pub fn proper() -> Self {
        Condition {
            shuffle: ShuffleMode::None,
            delimiters: DelimiterMode::All,
            structure: StructureMode::None,
        }
    }

    pub fn with_shuffle(mut self, shuffle: ShuffleMode) -> Self {
        self.shuffle = shuffle;
        self
    }

    pub fn with_delimiters(mut self, delimiters: DelimiterMode) -> Self {
        self.delimiters = delimiters;
        self
    }

    pub fn with_structure(mut self, structure: StructureMode) -> Self {
        self.structure = structure;
        self
    }

    pub fn label(&self) -> String {
        format!(
            "shuffle={:?} delims={:?} structure={}",
            self.shuffle, self.delimiters, self.structure
        )
        .to_lowercase()
    }

    pub fn linearization(&self, shuffle_seed: u64, word_budget: usize) -> LinearizationOptions {
        LinearizationOptions {
            shuffle_seed,
            word_budget,
            ..LinearizationOptions::default()
        }
        .with_delimiters(self.delimiters)
        .with_shuffle(self.shuffle, shuffle_seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub name: String,
    pub train: Condition,
    pub test: Condition,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationGrid {
    pub cells: Vec<GridCell>,
    pub training: TrainingConfig,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub word_budget: usize,
}

impl AblationGrid {
    pub fn new(cells: Vec<GridCell>, training: TrainingConfig) -> Self {
        AblationGrid {
            cells,
            training,
            ks: vec![1, 5, 10, 20, 50],
            seeds: vec![13, 14, 15],
            word_budget: 100,
        }
    }

    /// Rows of the shuffle experiment: train on proper and on
    /// both-shuffled tables, test under every shuffle mode.
    pub fn shuffle_grid(training: TrainingConfig) -> Self {
        let mut cells = Vec::new();
        for (tag, train) in [
            ("proper", Condition::proper()),
            ("shuffled", Condition::proper().with_shuffle(ShuffleMode::Both)),
        ] {
            for test_mode in [
                ShuffleMode::None,
                ShuffleMode::Row,
                ShuffleMode::Column,
                ShuffleMode::Both,
            ] {
                cells.push(GridCell {
                    name: format!("train={tag} test=shuffle:{test_mode:?}").to_lowercase(),
                    train,
                    test: train.with_shuffle(test_mode),
                });
            }
        }
        AblationGrid::new(cells, training)
    }

    /// Rows of the delimiter experiment: train with all delimiters and
    /// with none, test under every delimiter mode.
    pub fn delimiter_grid(training: TrainingConfig) -> Self {
        let mut cells = Vec::new();
        for (tag, train) in [
            ("delimited", Condition::proper()),
            (
                "stripped",
                Condition::proper().with_delimiters(DelimiterMode::None),
            ),
        ] {
            for test_mode in [
                DelimiterMode::All,
                DelimiterMode::Cell,
                DelimiterMode::Row,
                DelimiterMode::None,
            ] {
                cells.push(GridCell {
                    name: format!("train={tag} test=delims:{test_mode:?}").to_lowercase(),
                    train,
                    test: train.with_delimiters(test_mode),
                });
            }
        }
        AblationGrid::new(cells, training)
    }

    /// Rows of the structure-mode experiment, mirroring the published
    /// table layout: a plain baseline plus the three explicit structure
    /// encodings, trained and tested on proper linearizations.
    pub fn structure_grid(training: TrainingConfig) -> Self {
        let cells = [
            ("none", StructureMode::None),
            ("w/ emb", StructureMode::AuxEmbeddings),
            ("w/ mask", StructureMode::HardMask),
            ("w/ bias", StructureMode::SoftBias),
        ]
        .into_iter()
        .map(|(name, mode)| GridCell {
            name: name.to_string(),
            train: Condition::proper().with_structure(mode),
            test: Condition::proper().with_structure(mode),
        })
        .collect();
        let mut grid = AblationGrid::new(cells, training);
        grid.seeds = vec![13];
        grid
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub seed: u64,
    /// Accuracy per k, aligned with the report's `ks`; `None` marks a
    /// cell whose training failed.
    pub accuracies: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportTable {
    pub ks: Vec<usize>,
    pub rows: Vec<ReportRow>,
    pub fingerprint: String,
}

impl ReportTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Model | Seed |");
        for k in &self.ks {
            out.push_str(&format!(" @{k} |"));
        }
        out.push('\n');
        out.push_str("|---|---|");
        for _ in &self.ks {
            out.push_str("---|");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("| {} | {} |", row.label, row.seed));
            match &row.accuracies {
                Some(accs) => {
                    for a in accs {
                        out.push_str(&format!(" {:.2} |", a * 100.0));
                    }
                }
                None => {
                    for _ in &self.ks {
                        out.push_str(" ERR |");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,seed");
        for k in &self.ks {
            out.push_str(&format!(",acc@{k}"));
        }
        out.push('\n');
        for row in &self.rows {
            // labels are comma-free by construction
            out.push_str(&format!("{},{}", row.label, row.seed));
            match &row.accuracies {
                Some(accs) => {
                    for a in accs {
                        out.push_str(&format!(",{a}"));
                    }
                }
                None => {
                    for _ in &self.ks {
                        out.push_str(",ERR");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<ReportTable> {
        let bad = |message: String| Error::MalformedLinearization { message };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty csv".into()))?;
        let ks: Vec<usize> = header
            .split(',')
            .skip(2)
            .map(|c| {
                c.strip_prefix("acc@")
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| bad(format!("bad csv column {c:?}")))
            })
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != ks.len() + 2 {
                return Err(bad(format!("csv row has {} fields", fields.len())));
            }
            let seed = fields[1]
                .parse()
                .map_err(|_| bad(format!("bad seed {:?}", fields[1])))?;
            let accuracies = if fields[2..].iter().any(|f| *f == "ERR") {
                None
            } else {
                Some(
                    fields[2..]
                        .iter()
                        .map(|f| f.parse().map_err(|_| bad(format!("bad accuracy {f:?}"))))
                        .collect::<Result<_>>()?,
                )
            };
            rows.push(ReportRow {
                label: fields[0].to_string(),
                seed,
                accuracies,
                error: None,
            });
        }
        Ok(ReportTable {
            ks,
            rows,
            fingerprint: String::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

pub fn emit_report(report: &ReportTable, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Markdown => report.to_markdown(),
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => serde_json::to_string_pretty(report).map_err(|e| Error::Parse {
            path: path.into(),
            line: 0,
            message: e.to_string(),
        })?,
    };
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Trains and evaluates every cell of the grid for every seed. Models
/// and evaluation indexes are cached by condition so repeated cells cost
/// nothing extra.
pub fn run_ablation(
    grid: &AblationGrid,
    data: &SyntheticData,
    encoder_cfg: &EncoderConfig,
) -> Result<ReportTable> {
    let questions = data.all_questions();
    let vocab = Vocab::build(&data.corpus, &questions, 1);

    let mut models: HashMap<String, std::result::Result<BiEncoder, String>> = HashMap::new();
    let mut rows = Vec::new();

    for &seed in &grid.seeds {
        for cell in &grid.cells {
            let model_key = format!("{}#{seed}", cell.train.label());
            if !models.contains_key(&model_key) {
                let outcome = train_condition(grid, data, encoder_cfg, &vocab, cell.train, seed);
                models.insert(model_key.clone(), outcome);
            }
            match &models[&model_key] {
                Err(message) => rows.push(ReportRow {
                    label: cell.name.clone(),
                    seed,
                    accuracies: None,
                    error: Some(message.clone()),
                }),
                Ok(model) => {
                    let mut test_cfg = encoder_cfg.clone();
                    test_cfg.vocab_size = vocab.len();
                    test_cfg.structure_mode = cell.train.structure;
                    let options = cell.test.linearization(seed ^ 0x5eed, grid.word_budget);
                    let ctx = EncodeCtx::new(&vocab, options, test_cfg);
                    let index = DenseIndex::build(model, &data.corpus, &ctx);
                    let report =
                        evaluate(&index, model, &ctx, &data.corpus, &data.test, &grid.ks)?;
                    rows.push(ReportRow {
                        label: cell.name.clone(),
                        seed,
                        accuracies: Some(
                            report.accuracy_at.iter().map(|(_, a)| *a).collect(),
                        ),
                        error: None,
                    });
                }
            }
        }
    }

    Ok(ReportTable {
        ks: grid.ks.clone(),
        rows,
        fingerprint: fingerprint(&[
            &serde_json::to_string(grid).unwrap_or_default(),
            &serde_json::to_string(encoder_cfg).unwrap_or_default(),
        ]),
    })
}

fn train_condition(
    grid: &AblationGrid,
    data: &SyntheticData,
    encoder_cfg: &EncoderConfig,
    vocab: &Vocab,
    condition: Condition,
    seed: u64,
) -> std::result::Result<BiEncoder, String> {
    let mut config = encoder_cfg.clone();
    config.vocab_size = vocab.len();
    config.structure_mode = condition.structure;
    let mut model = BiEncoder::init(&config, seed).map_err(|e| e.to_string())?;
    let options = condition.linearization(seed ^ 0x7ea1, grid.word_budget);
    let cfg = TrainingConfig {
        seed,
        ..grid.training.clone()
    };
    match train(&mut model, &data.corpus, &data.train, vocab, &options, &cfg) {
        Ok(_) => Ok(model),
        Err(e) => Err(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> ReportTable {
        ReportTable {
            ks: vec![1, 5],
            rows: vec![
                ReportRow {
                    label: "train=proper test=shuffle:none".into(),
                    seed: 13,
                    accuracies: Some(vec![0.8, 0.95]),
                    error: None,
                },
                ReportRow {
                    label: "train=proper test=shuffle:both".into(),
                    seed: 13,
                    accuracies: None,
                    error: Some("training diverged at epoch 3: loss = NaN".into()),
                },
            ],
            fingerprint: "abc".into(),
        }
    }

    #[test]
    fn markdown_has_one_row_per_cell_and_err_markers() {
        let md = sample_report().to_markdown();
        assert!(md.contains("| @1 | @5 |"));
        assert!(md.contains("| train=proper test=shuffle:none | 13 | 80.00 | 95.00 |"));
        assert!(md.contains("| train=proper test=shuffle:both | 13 | ERR | ERR |"));
    }

    #[test]
    fn csv_round_trips_to_json_values() {
        let report = sample_report();
        let parsed = ReportTable::parse_csv(&report.to_csv()).unwrap();
        assert_eq!(parsed.ks, report.ks);
        assert_eq!(parsed.rows.len(), report.rows.len());
        for (a, b) in parsed.rows.iter().zip(&report.rows) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.accuracies, b.accuracies);
        }
        // the same values survive a JSON round trip
        let json = serde_json::to_string(&report).unwrap();
        let from_json: ReportTable = serde_json::from_str(&json).unwrap();
        for (a, b) in parsed.rows.iter().zip(&from_json.rows) {
            assert_eq!(a.accuracies, b.accuracies);
        }
    }

    #[test]
    fn default_grids_have_expected_shapes() {
        let t = TrainingConfig::default();
        assert_eq!(AblationGrid::shuffle_grid(t.clone()).cells.len(), 8);
        assert_eq!(AblationGrid::delimiter_grid(t.clone()).cells.len(), 8);
        let s = AblationGrid::structure_grid(t);
        assert_eq!(s.cells.len(), 4);
        assert_eq!(s.cells[0].name, "none");
        assert_eq!(s.cells[1].name, "w/ emb");
        assert_eq!(s.cells[2].name, "w/ mask");
        assert_eq!(s.cells[3].name, "w/ bias");
    }

    #[test]
    fn tiny_grid_runs_end_to_end() {
        use crate::synthetic::{generate_synthetic, SyntheticSpec};
        let data = generate_synthetic(&SyntheticSpec {
            table_count: 8,
            rows_per_table: (2, 3),
            cols_per_table: (3, 3),
            entity_vocab_size: 60,
            attribute_vocab_size: 12,
            questions_per_table: 2,
            numeric_column_fraction: 0.3,
            seed: 3,
        })
        .unwrap();
        let questions = data.all_questions();
        let vocab = Vocab::build(&data.corpus, &questions, 1);
        let mut encoder_cfg = EncoderConfig::desk(vocab.len());
        encoder_cfg.layers = 1;
        encoder_cfg.hidden = 16;
        encoder_cfg.ff_dim = 32;
        let grid = AblationGrid {
            cells: vec![GridCell {
                name: "solo".into(),
                train: Condition::proper(),
                test: Condition::proper(),
            }],
            training: TrainingConfig {
                batch_size: 4,
                epochs: 1,
                hard_negatives_per_question: 1,
                mining_top_n: 8,
                ..TrainingConfig::default()
            },
            ks: vec![1, 5],
            seeds: vec![13],
            word_budget: 100,
        };
        let report = run_ablation(&grid, &data, &encoder_cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        let accs = report.rows[0].accuracies.as_ref().unwrap();
        assert_eq!(accs.len(), 2);
        assert!(accs[0] <= accs[1], "accuracy must be nondecreasing in k");
    }
}
