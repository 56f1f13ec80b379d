//! Clean-trained against augmentation-trained model on corrupted unseen
//! scenes.
//!
//! ```text
//! cargo run --release --example robustness -- [images]
//! ```

use img2joint::arm_sim::ArmConfig;
use img2joint::augment::{self, AugmentSpec, Corruption};
use img2joint::evalreport;
use img2joint::train::{self, Preset, Split, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map_or(Ok(200), |a| a.parse())?;
    let cfg = TrainConfig::preset(Preset::Desk);
    let spec = Preset::Desk.model_spec();
    let (arm, cam) = (ArmConfig::default(), Preset::Desk.camera());

    let data = train::generate_dataset(n, &arm, &cam, cfg.seed)?;
    let aux = train::auxiliary_dataset(&arm, &cam, &cfg.pretrain)?;
    let base = train::pretrain_base(&spec, &aux, &cfg.pretrain, cfg.batch, &cfg.adam)?;
    let (clean, _) = train::train_two_stage(&spec, &base, &data, &cfg)?;

    let aug_data = augment::build_augmented_dataset(&data, &augment::default_suite(), 1, 11, 100_000)?;
    println!("augmented set: {} items", aug_data.len());
    let (aug, _) = train::train_two_stage(&spec, &base, &aug_data, &cfg)?;

    let mut test = train::generate_dataset(100, &arm, &cam, 0x7e57)?;
    test.split = Split { train: vec![], val: vec![], test: (0..test.len()).collect() };
    let suite: Vec<AugmentSpec> = [
        Corruption::Gaussian { mean: 0.0, std: 0.0 },
        Corruption::Gaussian { mean: 0.0, std: 0.01 },
        Corruption::Speckle { mean: 0.0, std: 0.01 },
        Corruption::Impulse { prob: 0.01 },
        Corruption::Gamma { gamma: 0.2 },
        Corruption::Gamma { gamma: 2.0 },
        Corruption::Occlusion { side: None },
    ]
    .into_iter()
    .map(|corruption| AugmentSpec { corruption, seed: 99 })
    .collect();
    let report = evalreport::robustness_suite(&spec, &clean, &aug, &test, &suite)?;
    print!("{}", report.csv());
    Ok(())
}
