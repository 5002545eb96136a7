// probe: full training-sanity run plus directional shuffle/delimiter evals
use tabret::encoder::{BiEncoder, EncoderConfig};
use tabret::linearize::{DelimiterMode, LinearizationOptions, ShuffleMode};
use tabret::retrieval::{evaluate, train, DenseIndex, EncodeCtx, TrainingConfig, DEFAULT_KS};
use tabret::synthetic::{generate_synthetic, SyntheticSpec};
use tabret::tokenize::Vocab;

fn main() {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let questions = data.all_questions();
    let vocab = Vocab::build(&data.corpus, &questions, 1);
    let config = EncoderConfig::desk(vocab.len());
    let proper = LinearizationOptions::default();

    for seed in [13u64, 14, 15] {
        let t = std::time::Instant::now();
        let mut model = BiEncoder::init(&config, seed).unwrap();
        let cfg = TrainingConfig { seed, ..TrainingConfig::default() };
        let rep = train(&mut model, &data.corpus, &data.train, &vocab, &proper, &cfg).unwrap();
        let train_time = t.elapsed();

        let eval_under = |options: LinearizationOptions| {
            let ctx = EncodeCtx::new(&vocab, options, config.clone());
            let index = DenseIndex::build(&model, &data.corpus, &ctx);
            evaluate(&index, &model, &ctx, &data.corpus, &data.test, &DEFAULT_KS).unwrap()
        };
        let base = eval_under(proper.clone());
        let shuffled = eval_under(proper.clone().with_shuffle(ShuffleMode::Both, 99));
        let stripped = eval_under(proper.clone().with_delimiters(DelimiterMode::None));

        println!(
            "seed {seed}: {:.1?} loss {:.3}->{:.3}\n  proper   {:?}\n  shuffled {:?}\n  stripped {:?}\n  margins: shuffle@5 {:+.3} delim@5 {:+.3}",
            train_time,
            rep.epoch_losses.first().unwrap(),
            rep.epoch_losses.last().unwrap(),
            base.accuracy_at,
            shuffled.accuracy_at,
            stripped.accuracy_at,
            base.accuracy(5).unwrap() - shuffled.accuracy(5).unwrap(),
            base.accuracy(5).unwrap() - stripped.accuracy(5).unwrap(),
        );
    }
}
