//! `odl bench`: run a sweep suite and write results.csv plus per-method
//! gnuplot .dat files. Failed cells appear as NaN rows; the run still
//! exits 0.

use std::path::Path;

use odl_core::bench::{noise_grid, sweep_dictionary_size, sweep_sensor_count, BenchConfig, Suite};
use odl_core::{Error, Result};

pub fn run(suite: &str, config: Option<&Path>, out: &Path) -> Result<()> {
    let suite = Suite::parse(suite)?;
    let cfg: BenchConfig = match config {
        None => BenchConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
    };
    let result = match suite {
        Suite::SizeDico => sweep_dictionary_size(&cfg)?,
        Suite::Sensors => sweep_sensor_count(&cfg)?,
        Suite::Noise => noise_grid(&cfg)?,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    result.write_csv(&out.join("results.csv"))?;
    result.write_dat_files(out, suite)?;
    for note in &result.errors {
        eprintln!("cell failed: {note}");
    }
    println!(
        "wrote {} rows ({} failed cells) to {}",
        result.rows.len(),
        result.errors.len(),
        out.display()
    );
    Ok(())
}
