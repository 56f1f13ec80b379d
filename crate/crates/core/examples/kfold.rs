//! Contiguous, unshuffled K-fold cross-validation on the desk preset.
//!
//! ```text
//! cargo run --release --example kfold -- [images] [k]
//! ```

use img2joint::arm_sim::ArmConfig;
use img2joint::train::{self, Preset, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(500), |a| a.parse())?;
    let k: usize = args.next().map_or(Ok(10), |a| a.parse())?;
    let cfg = TrainConfig::preset(Preset::Desk);
    let spec = Preset::Desk.model_spec();
    let (arm, cam) = (ArmConfig::default(), Preset::Desk.camera());

    let data = train::generate_dataset(n, &arm, &cam, cfg.seed)?;
    let aux = train::auxiliary_dataset(&arm, &cam, &cfg.pretrain)?;
    let base = train::pretrain_base(&spec, &aux, &cfg.pretrain, cfg.batch, &cfg.adam)?;
    let report = train::kfold(&spec, &base, &data, k, &cfg)?;
    print!("{}", report.csv());
    Ok(())
}
