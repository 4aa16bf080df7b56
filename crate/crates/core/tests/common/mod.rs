#![allow(dead_code)]

use hullkam::fourier::FourierSeries;
use hullkam::io::{parse_config, RunConfig};
use num_complex::Complex64;
use rand::Rng;

pub const DESK: &str = include_str!("../../../cli/configs/desk.toml");
pub const LONG_RANGE: &str = include_str!("../../../cli/configs/long_range.toml");
pub const SWEEP: &str = include_str!("../../../cli/configs/sweep.toml");

pub fn golden_alpha() -> Vec<f64> {
    vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
}

pub fn config(text: &str) -> RunConfig {
    parse_config(text).expect("shipped configuration is valid")
}

/// Real series with modes `‖k‖∞ ≤ modes`, amplitudes `≤ scale·e^{−decay|k|₁}`.
pub fn random_real(
    rng: &mut impl Rng,
    dim: usize,
    cutoff: usize,
    modes: usize,
    scale: f64,
    decay: f64,
) -> FourierSeries {
    let mut f = FourierSeries::zeros(dim, cutoff);
    let m = modes.min(cutoff) as i64;
    f.map_modes(|k, _| {
        if k.iter().any(|&x| x.abs() > m) {
            return Complex64::new(0.0, 0.0);
        }
        let l1: i64 = k.iter().map(|x| x.abs()).sum();
        let a = scale * (-decay * l1 as f64).exp();
        Complex64::new(rng.gen_range(-a..a), rng.gen_range(-a..a))
    });
    f.symmetrize();
    f
}

/// Real series supported on a few random modes.
pub fn random_sparse(rng: &mut impl Rng, dim: usize, cutoff: usize, count: usize) -> FourierSeries {
    let mut f = FourierSeries::zeros(dim, cutoff);
    let c = cutoff as i64;
    for _ in 0..count {
        let k: Vec<i64> = (0..dim).map(|_| rng.gen_range(-c..=c)).collect();
        f.add_to(&k, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    }
    f.symmetrize();
    f
}
