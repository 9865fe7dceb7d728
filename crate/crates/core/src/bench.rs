//! Revocation-list size measurement.
//!
//! For each revocation density, set that fraction of uniformly random bits in
//! a fresh list, compress, and record the size; repeat over seeds and report
//! mean and standard deviation. Output is CSV-friendly so the numbers can be
//! plotted without any in-repo plotting dependency.

use rand::rngs::StdRng;
use rand::SeedableRng as _;

use crate::credential::Bitstring;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub density: f64,
    pub raw_bytes: u64,
    pub compressed_mean: f64,
    pub compressed_stddev: f64,
}

pub const CSV_HEADER: &str = "density,raw_bytes,compressed_bytes_mean,compressed_bytes_stddev";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.1},{:.1}",
            self.density, self.raw_bytes, self.compressed_mean, self.compressed_stddev
        )
    }
}

/// Compressed size of one list with `density * bits` random bits set.
pub fn compressed_size(bits: u64, density: f64, seed: u64) -> u64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let set_count = ((bits as f64) * density).round() as usize;
    let mut list = Bitstring::new(bits);
    for idx in rand::seq::index::sample(&mut rng, bits as usize, set_count.min(bits as usize)) {
        list.set(idx as u64).expect("sampled index in range");
    }
    list.compress().len() as u64
}

/// Run the full measurement grid. Densities are fractions in `[0, 1]`.
pub fn revocation_size_bench(bits: u64, densities: &[f64], seeds: u32) -> Vec<BenchRow> {
    let raw_bytes = bits.div_ceil(8);
    densities
        .iter()
        .map(|&density| {
            let sizes: Vec<f64> = (0..seeds.max(1))
                .map(|s| compressed_size(bits, density, 0xCAB0 + s as u64) as f64)
                .collect();
            let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
            let var =
                sizes.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sizes.len() as f64;
            BenchRow { density, raw_bytes, compressed_mean: mean, compressed_stddev: var.sqrt() }
        })
        .collect()
}

/// Mean compressed size must not decrease as density grows.
pub fn check_monotonic(rows: &[BenchRow]) -> Result<(), String> {
    for pair in rows.windows(2) {
        if pair[1].compressed_mean < pair[0].compressed_mean {
            return Err(format!(
                "compressed mean shrank from {:.1} (density {}) to {:.1} (density {})",
                pair[0].compressed_mean, pair[0].density, pair[1].compressed_mean, pair[1].density
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_size_is_arithmetic() {
        let rows = revocation_size_bench(1_000_000, &[0.0], 1);
        assert_eq!(rows[0].raw_bytes, 125_000);
        assert!(rows[0].compressed_mean < 2_000.0);
    }

    #[test]
    fn small_grid_is_monotonic() {
        let rows = revocation_size_bench(100_000, &[0.0001, 0.001, 0.01, 0.1, 0.5], 3);
        check_monotonic(&rows).unwrap();
        assert!(rows[0].compressed_mean < rows[4].compressed_mean);
    }

    #[test]
    fn csv_shape() {
        let rows = revocation_size_bench(8_000, &[0.01], 2);
        let line = rows[0].csv_line();
        assert_eq!(line.split(',').count(), 4);
        assert!(line.starts_with("0.01,1000,"));
    }
}
