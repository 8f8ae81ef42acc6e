use serde::{Deserialize, Serialize};
use sinoma_core::noise::{QepDiagnostic, RecoveryRow, SinomaConfig, SinomaResult};
use sinoma_core::regress::{NoiseRatio, SlopeEstimate};
use sinoma_core::series::MomentSummary;
use sinoma_core::stream::GENERATOR;

use crate::io::InputFingerprint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<NoiseRatio>,
    pub seed: u64,
    pub generator: String,
    pub sinoma: SinomaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ConfigEcho {
    pub fn new(method: String, lambda: Option<NoiseRatio>, config: &SinomaConfig, threads: Option<usize>) -> Self {
        ConfigEcho {
            method,
            lambda,
            seed: config.seed,
            generator: GENERATOR.to_string(),
            sinoma: *config,
            threads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: ConfigEcho,
    pub input: InputFingerprint,
    pub moments: MomentSummary,
    pub estimates: Vec<SlopeEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinoma: Option<SinomaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<QepDiagnostic>,
    pub warnings: Vec<String>,
}

fn ratio(r: Option<NoiseRatio>) -> String {
    match r {
        Some(NoiseRatio::Finite(v)) => format!("{v:.6}"),
        Some(NoiseRatio::Infinite) => "inf".into(),
        None => "-".into(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

impl RunReport {
    pub fn print_summary(&self) {
        println!("{} rows, R2 = {:.4}", self.input.rows, self.moments.r_squared);
        println!("{:<8} {:>12} {:>12} {:>12}", "method", "slope", "intercept", "lambda");
        for e in &self.estimates {
            println!("{:<8} {:>12.6} {:>12.6} {:>12}", e.method.to_string(), e.slope, e.intercept, ratio(e.lambda));
        }
        if let Some(r) = &self.sinoma {
            println!("replicate sd of slope: {:.6}", r.slope_sd);
            if let Some(n) = &r.noise {
                println!(
                    "S_eps = {:.4}, S_delta = {:.4}, S_x = {}, S_y = {}",
                    n.s2_epsilon.sqrt(),
                    n.s2_delta.sqrt(),
                    opt(n.sd_x_noiseless),
                    opt(n.sd_y_noiseless)
                );
            }
        }
        for w in &self.warnings {
            eprintln!("warning: {w}");
        }
    }
}

fn row_values(r: &RecoveryRow) -> [Option<f64>; 8] {
    let lambda = match r.lambda_evm {
        NoiseRatio::Finite(v) => Some(v),
        NoiseRatio::Infinite => None,
    };
    [
        Some(r.slope),
        Some(r.s_epsilon_artificial),
        Some(r.s_delta_artificial),
        lambda,
        r.s_epsilon,
        r.s_delta,
        r.sd_x,
        r.sd_y,
    ]
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    (Some(mean), sd)
}

/// Per-replicate rows followed by their mean and standard deviation, then
/// the pooled estimate.
pub fn print_recovery_table(r: &SinomaResult) {
    let header = ["c_SNM", "S_eps_a", "S_delta_a", "lambda_EVM", "S_eps", "S_delta", "S_x", "S_y"];
    print!("{:<10}", "run");
    for h in header {
        print!(" {h:>10}");
    }
    println!();
    let rows: Vec<[Option<f64>; 8]> = r.replicate_rows().iter().map(row_values).collect();
    let line = |label: &str, values: &[Option<f64>]| {
        print!("{label:<10}");
        for v in values {
            print!(" {:>10}", opt(*v));
        }
        println!();
    };
    for (i, row) in rows.iter().enumerate() {
        line(&format!("rep {}", i + 1), row);
    }
    let cols: Vec<(Option<f64>, Option<f64>)> = (0..8)
        .map(|c| mean_sd(&rows.iter().filter_map(|row| row[c]).collect::<Vec<_>>()))
        .collect();
    line("mean", &cols.iter().map(|c| c.0).collect::<Vec<_>>());
    line("st. dev.", &cols.iter().map(|c| c.1).collect::<Vec<_>>());

    let noise = r.noise.as_ref();
    let pooled = [
        Some(r.slope),
        Some(r.s2_epsilon_artificial.sqrt()),
        Some(r.s2_delta_artificial.sqrt()),
        match r.lambda_evm {
            NoiseRatio::Finite(v) => Some(v),
            NoiseRatio::Infinite => None,
        },
        noise.map(|n| n.s2_epsilon.sqrt()),
        noise.map(|n| n.s2_delta.sqrt()),
        noise.and_then(|n| n.sd_x_noiseless),
        noise.and_then(|n| n.sd_y_noiseless),
    ];
    line("pooled", &pooled);
}
