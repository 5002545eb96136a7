// diagnosis: train-vs-test accuracy over a long trajectory, lr sensitivity
use tabret::encoder::{BiEncoder, EncoderConfig};
use tabret::linearize::LinearizationOptions;
use tabret::retrieval::{evaluate, train, DenseIndex, EncodeCtx, TrainingConfig};
use tabret::synthetic::{generate_synthetic, SyntheticSpec};
use tabret::tokenize::Vocab;

fn main() {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let questions = data.all_questions();
    let vocab = Vocab::build(&data.corpus, &questions, 1);
    let config = EncoderConfig::desk(vocab.len());
    let proper = LinearizationOptions::default();

    for lr in [1e-3, 3e-3] {
        let mut model = BiEncoder::init(&config, 13).unwrap();
        println!("=== lr {lr} ===");
        for round in 0..5 {
            // 20 epochs per round; Adam state resets between rounds (probe only)
            let cfg = TrainingConfig { learning_rate: lr, epochs: 20, seed: 13 + round, ..TrainingConfig::default() };
            let rep = train(&mut model, &data.corpus, &data.train, &vocab, &proper, &cfg).unwrap();
            let ctx = EncodeCtx::new(&vocab, proper.clone(), config.clone());
            let index = DenseIndex::build(&model, &data.corpus, &ctx);
            let test = evaluate(&index, &model, &ctx, &data.corpus, &data.test, &[1, 5]).unwrap();
            let trainacc = evaluate(&index, &model, &ctx, &data.corpus, &data.train, &[1, 5]).unwrap();
            println!(
                "epochs {:3}: loss {:.3} | train @1 {:.2} @5 {:.2} | test @1 {:.2} @5 {:.2}",
                (round + 1) * 20,
                rep.epoch_losses.last().unwrap(),
                trainacc.accuracy(1).unwrap(), trainacc.accuracy(5).unwrap(),
                test.accuracy(1).unwrap(), test.accuracy(5).unwrap()
            );
        }
    }
}
