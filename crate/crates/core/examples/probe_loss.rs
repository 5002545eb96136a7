// probe: step-0 loss and a short training run on the default synthetic corpus
use tabret::encoder::{BiEncoder, EncoderConfig};
use tabret::linearize::LinearizationOptions;
use tabret::retrieval::{evaluate, train, DenseIndex, EncodeCtx, TrainingConfig, DEFAULT_KS};
use tabret::synthetic::{generate_synthetic, SyntheticSpec};
use tabret::tokenize::Vocab;

fn main() {
    let t0 = std::time::Instant::now();
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let questions = data.all_questions();
    let vocab = Vocab::build(&data.corpus, &questions, 1);
    println!("corpus {} tables, vocab {} tokens, {} train / {} test, gen {:?}",
        data.corpus.len(), vocab.len(), data.train.len(), data.test.len(), t0.elapsed());

    let config = EncoderConfig::desk(vocab.len());
    let options = LinearizationOptions::default();

    // untrained baseline accuracy
    let model = BiEncoder::init(&config, 13).unwrap();
    let ctx = EncodeCtx::new(&vocab, options.clone(), config.clone());
    let t1 = std::time::Instant::now();
    let index = DenseIndex::build(&model, &data.corpus, &ctx);
    println!("index build {:?}", t1.elapsed());
    let report = evaluate(&index, &model, &ctx, &data.corpus, &data.test, &DEFAULT_KS).unwrap();
    println!("untrained: {:?}", report.accuracy_at);

    // step-0 loss: 1 epoch probe with the real training config
    let mut model = BiEncoder::init(&config, 13).unwrap();
    let cfg = TrainingConfig { epochs: 1, ..TrainingConfig::default() };
    let t2 = std::time::Instant::now();
    let rep = train(&mut model, &data.corpus, &data.train, &vocab, &options, &cfg).unwrap();
    println!("first-epoch mean loss {:.3} (ln(32) = {:.3}); epoch time {:?}",
        rep.epoch_losses[0], (32f64).ln(), t2.elapsed());
}

#[allow(dead_code)]
fn step0() {}
