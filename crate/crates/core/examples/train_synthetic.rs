//! Trains the clip classifier on the synthetic 10-class set and prints
//! per-epoch metrics.
//!
//! Arguments: `[epochs] [learning_rate] [clip_norm|none]`.

use std::time::Instant;

use signcast_core::dataset::generate_synthetic_dataset;
use signcast_core::model::{ModelConfig, SignModel};
use signcast_core::train::{evaluate, train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let defaults = TrainConfig::default();
    let epochs = args
        .get(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(defaults.epochs);
    let lr = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(defaults.learning_rate);
    let clip_norm = match args.get(3).map(String::as_str) {
        Some("none") => None,
        Some(s) => s.parse().ok(),
        None => defaults.clip_norm,
    };
    let data = generate_synthetic_dataset(10, 50, 42).expect("dataset");
    let (train_set, val_set) = data.split(0.2, 42);
    let mut model = SignModel::build(ModelConfig::new(10))
        .expect("model")
        .with_labels(data.vocabulary().to_vec())
        .expect("labels");
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        clip_norm,
        ..defaults
    };
    let start = Instant::now();
    let report = train(&mut model, &train_set, Some(&val_set), &cfg).expect("train");
    for s in &report.epochs {
        println!(
            "epoch {:>2} loss {:.4} frame-acc {:.3} val {:.3}",
            s.epoch,
            s.loss,
            s.train_accuracy,
            s.val_accuracy.unwrap_or(0.0),
        );
    }
    let tr = evaluate(&model, &train_set).expect("eval");
    println!(
        "train clip accuracy {:.3} ({:.0}s)",
        tr.accuracy,
        start.elapsed().as_secs_f64()
    );
}
