//! Two-stage training of the desk-size network on freshly rendered scenes.
//!
//! ```text
//! cargo run --release --example train_desk -- [images] [stage1_epochs]
//! ```

use std::time::Instant;

use img2joint::arm_sim::ArmConfig;
use img2joint::train::{self, Preset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(200), |a| a.parse())?;
    let mut cfg = TrainConfig::preset(Preset::Desk);
    if let Some(e) = args.next() {
        cfg.stage1.epochs = e.parse()?;
        cfg.stage2.epochs = (cfg.stage1.epochs / 5).max(1);
    }
    let spec = Preset::Desk.model_spec();
    let arm = ArmConfig::default();
    let cam = Preset::Desk.camera();

    let t0 = Instant::now();
    let data = train::generate_dataset(n, &arm, &cam, cfg.seed)?;
    let aux = train::auxiliary_dataset(&arm, &cam, &cfg.pretrain)?;
    println!("rendered {} + {} scenes in {:.1}s", n, aux.len(), t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let base = train::pretrain_base(&spec, &aux, &cfg.pretrain, cfg.batch, &cfg.adam)?;
    println!("pretrained base in {:.1}s", t0.elapsed().as_secs_f64());

    let (_, report) = train::train_two_stage(&spec, &base, &data, &cfg)?;
    for s in &report.stages {
        for e in &s.epochs {
            println!(
                "stage {} epoch {:>3}  train_mse {:>10.5}  val_mse {:>10.5}  {:.2}s",
                s.stage, e.epoch, e.train_mse, e.val_mse, e.seconds
            );
        }
    }
    let labels = data.labels();
    let train_mean = data.split.train.iter().map(|&i| labels[i]).sum::<f64>() / data.split.train.len() as f64;
    let baseline = data.split.test.iter().map(|&i| (labels[i] - train_mean).abs()).sum::<f64>()
        / data.split.test.len() as f64;
    println!(
        "test mae {:.4} rad (mean-label baseline {:.4} rad)",
        report.test_mae.unwrap_or(f64::NAN),
        baseline
    );
    Ok(())
}
