#![allow(dead_code)]

use sinoma_core::series::PairedSeries;
use sinoma_core::synth::{self, NoiseSpec};

pub const TRUE_SLOPE: f64 = 2.1;

/// `(name, S²_ε, S²_δ)` of the three sine example datasets.
pub const CONFIGS: [(&str, f64, f64); 3] = [("ols", 0.00005, 2.2), ("rma", 0.195, 0.860), ("inv", 0.5, 0.00022)];

pub fn sine_dataset(s2_epsilon: f64, s2_delta: f64, seed: u64) -> PairedSeries {
    let (x, y) = synth::gen_sine(128, TRUE_SLOPE, 0.0).unwrap();
    synth::contaminate(&x, &y, &NoiseSpec::new(s2_epsilon, s2_delta).unwrap(), seed, 0).unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Brute-force strict local maxima for data without ties.
pub fn strict_maxima(v: &[f64]) -> Vec<usize> {
    (1..v.len() - 1).filter(|&i| v[i] > v[i - 1] && v[i] > v[i + 1]).collect()
}
