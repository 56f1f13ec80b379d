//! Applies every corruption of the default suite to one scene.
//!
//! ```text
//! cargo run --release --example augment_gallery -- out_dir
//! ```

use std::path::PathBuf;

use img2joint::arm_sim::{self, ArmConfig, CameraConfig};
use img2joint::augment::{self, AugmentSpec};
use img2joint::raster;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "augment_gallery".into()));
    std::fs::create_dir_all(&out)?;
    let cam = CameraConfig::default();
    let scene = raster::render(&arm_sim::arm_shape(3.0, &ArmConfig::default(), &cam)?, &cam);
    raster::write_ppm(&scene, &out.join("clean.ppm"))?;

    for (i, corruption) in augment::default_suite().into_iter().enumerate() {
        let img = augment::apply(&scene, &AugmentSpec { corruption, seed: 42 })?;
        let changed = scene.data.data().iter().zip(img.data.data()).filter(|(a, b)| a != b).count();
        let mean = img.data.data().iter().map(|&v| v as f64).sum::<f64>() / img.data.len() as f64;
        let path = out.join(format!("{i}_{}.ppm", corruption.kind()));
        raster::write_ppm(&img, &path)?;
        println!("{:<18} mean {mean:.3}  changed values {changed:>6}  -> {}", corruption.to_string(), path.display());
    }
    Ok(())
}
