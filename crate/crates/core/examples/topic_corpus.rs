//! Writes a synthetic topic corpus and a matching run config.
//!
//! cargo run --release -p esn-core --example topic_corpus -- DIR [TRAIN_TOKENS]

use std::fs;
use std::path::PathBuf;

use esn_core::synthetic::{write_corpus, TopicSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: topic_corpus DIR [TRAIN_TOKENS]")?);
    let train_tokens: usize = match args.next() {
        Some(s) => s.parse()?,
        None => 200_000,
    };

    let src = TopicSource::new(64, 4, 4, 0.1, 7)?;
    let train = write_corpus(&dir, "train", &src.sample_corpus(train_tokens, 100), src.vocabulary())?;
    let valid = write_corpus(
        &dir,
        "valid",
        &src.sample_corpus(train_tokens / 20, 200),
        src.vocabulary(),
    )?;

    let config = r#"state_size = 512
vocab_size = 64
spectral_radius = 0.99
input_scale = 1.0
rec_degree = 32
leak_min = 0.0
leak_max = 1.0
activation = "tanh"
output_rank = 32
seed = 0
batch_size = 32
min_len = 3
max_len = 512
train_manifest = "train.manifest"
valid_manifest = "valid.manifest"
out_dir = "run"
"#;
    fs::write(dir.join("run.toml"), config)?;
    println!(
        "{}\n{}\n{}",
        train.display(),
        valid.display(),
        dir.join("run.toml").display()
    );
    Ok(())
}
