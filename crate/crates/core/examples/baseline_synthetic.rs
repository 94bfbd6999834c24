//! Fits the PCA + SVM baseline on the synthetic 10-class set.

use std::time::Instant;

use signcast_core::dataset::generate_synthetic_dataset;
use signcast_core::pca_svm::{PcaSvmConfig, PcaSvmPipeline, SvmConfig};
use signcast_core::train::evaluate;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let config = PcaSvmConfig {
        frame_size: arg(1, 32.0) as usize,
        components: arg(2, 64.0) as usize,
        svm: SvmConfig {
            epochs: arg(3, 60.0) as usize,
            learning_rate: arg(4, 0.1),
            ..SvmConfig::default()
        },
    };
    let start = Instant::now();
    let data = generate_synthetic_dataset(10, 50, 42).expect("dataset");
    let (train_set, val_set) = data.split(0.2, 42);
    let (p, _) = PcaSvmPipeline::fit(&train_set, &config).expect("fit");
    let fit = start.elapsed().as_secs_f64();
    let tr = evaluate(&p, &train_set).expect("eval");
    let va = evaluate(&p, &val_set).expect("eval");
    println!(
        "train {:.3} val {:.3} fit {:.1}s total {:.1}s",
        tr.accuracy,
        va.accuracy,
        fit,
        start.elapsed().as_secs_f64()
    );
}
