//! Renders the arm at a sweep of joint values and writes them as PPM.
//!
//! ```text
//! cargo run --release --example render_arm -- out_dir
//! ```

use std::path::PathBuf;

use img2joint::arm_sim::{self, ArmConfig, CameraConfig, LABEL_LIMIT};
use img2joint::raster;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_arm".into()));
    std::fs::create_dir_all(&out)?;
    let arm = ArmConfig::default();
    let cam = CameraConfig::default().with_resolution(256, 256);
    for i in 0..=6 {
        let q = -LABEL_LIMIT + 2.0 * LABEL_LIMIT * i as f64 / 6.0;
        let shape = arm_sim::arm_shape(q, &arm, &cam)?;
        let [col, row] = shape.tip();
        let path = out.join(format!("q{i}.ppm"));
        raster::write_ppm(&raster::render(&shape, &cam), &path)?;
        println!("q = {q:+.3} rad  bend {:+.3} rad  tip at ({col:.1}, {row:.1})  -> {}", arm_sim::bend_angle(q, &arm)?, path.display());
    }
    Ok(())
}
