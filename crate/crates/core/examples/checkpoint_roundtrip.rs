//! Trains a few steps, saves a checkpoint, reloads it and checks that
//! embeddings come back bit for bit.
//!
//! cargo run --release --example checkpoint_roundtrip

use icl_embed::clio::Checkpoint;
use icl_embed::model::{Model, ModelConfig};
use icl_embed::prompting::render_passage;
use icl_embed::synthetic::{key_lookup, KeyLookupSizes};
use icl_embed::training::{Dataset, TrainConfig, Trainer};

fn main() -> icl_embed::Result<()> {
    let fx = key_lookup(0, KeyLookupSizes::default());
    let data = Dataset::new(vec![fx.task.clone()], fx.train)?;
    let cfg = ModelConfig {
        d_model: 32,
        n_layers: 2,
        ..Default::default()
    };
    let mut trainer = Trainer::new(
        Model::new(cfg, 0)?,
        TrainConfig {
            steps: 20,
            hard_negatives: 3,
            ..Default::default()
        },
    )?;
    trainer.fit(&data, |r| println!("step {:>2}  loss {:.4}", r.step, r.loss))?;

    let dir = std::env::temp_dir().join("icle_checkpoint_example");
    std::fs::create_dir_all(&dir).map_err(|e| icl_embed::Error::io(dir.display().to_string(), e))?;
    let path = dir.join("model.ckpt");
    Checkpoint::from_model(&trainer.model, trainer.step, trainer.rng.state()).save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!("saved {} at step {}", path.display(), loaded.step);

    let model = loaded.into_model()?;
    let p = render_passage("abc=42", false);
    let (a, b) = (trainer.model.encode(&p)?, model.encode(&p)?);
    let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("embeddings identical after reload: {same}");
    Ok(())
}
