// isolate the exact step-0 loss: one epoch over exactly one batch
use tabret::encoder::{BiEncoder, EncoderConfig};
use tabret::linearize::LinearizationOptions;
use tabret::retrieval::{train, TrainingConfig};
use tabret::synthetic::{generate_synthetic, SyntheticSpec};
use tabret::tokenize::Vocab;

fn main() {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let questions = data.all_questions();
    let vocab = Vocab::build(&data.corpus, &questions, 1);
    let config = EncoderConfig::desk(vocab.len());
    let options = LinearizationOptions::default();
    for seed in [13u64, 14, 15] {
        let mut model = BiEncoder::init(&config, seed).unwrap();
        let cfg = TrainingConfig { epochs: 1, seed, ..TrainingConfig::default() };
        let rep = train(&mut model, &data.corpus, &data.train[..16], &vocab, &options, &cfg).unwrap();
        println!("seed {seed}: step-0 loss {:.3} vs ln(32) {:.3} ratio {:.3}",
            rep.epoch_losses[0], (32f64).ln(), rep.epoch_losses[0] / (32f64).ln());
    }
}
