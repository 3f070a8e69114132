//! Regenerates `calibration.json`. Usage: `calibrate [seed]`.

use fp_audit_core::calibration::{
    calibrate_dp_covariance, calibrate_dp_mean, calibrate_hanson_wright, calibrate_median_boost,
    calibrate_prior_lambda_min, calibrate_tradeoff, Calibration, HansonWrightCalibration, TradeoffCalibration,
};
use fp_audit_core::rng::sub_seed;
use fp_audit_core::Runner;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20240601);
    let runner = Runner::with_available_cores();

    let prior_lambda_min = calibrate_prior_lambda_min(&[2, 4, 8, 10, 16], 20_000, sub_seed(seed, "prior"), &runner)?;
    eprintln!("prior lambda_min: {prior_lambda_min:?}");
    let d = 8;
    let dp_covariance = calibrate_dp_covariance(d, 2.5 * (d as f64).sqrt(), 2000, sub_seed(seed, "dp-cov"), &runner)?;
    eprintln!("dp covariance: {dp_covariance:?}");
    let dp_mean = calibrate_dp_mean(d, 4000, 5000, sub_seed(seed, "dp-mean"), &runner)?;
    eprintln!("dp mean: {dp_mean:?}");
    let median_boost = calibrate_median_boost(4, 500, 15, 5000, sub_seed(seed, "median"), &runner)?;
    eprintln!("median boost: {median_boost:?}");
    let tradeoff = calibrate_tradeoff(
        TradeoffCalibration {
            d,
            n: 512,
            delta: 1e-6,
            radius: 3.0 * (d as f64).sqrt(),
            tau2: (d * d) as f64,
            epsilons: vec![0.25, 0.5, 1.0],
            c_const: 0.0,
            trials: 10_000,
        },
        sub_seed(seed, "tradeoff"),
        &runner,
    )?;
    eprintln!("tradeoff: {tradeoff:?}");
    let candidates = vec![0.0625, 0.125, 0.25, 0.5, 1.0];
    let hw_trials = 100_000;
    let largest_passing = calibrate_hanson_wright(&candidates, hw_trials, sub_seed(seed, "hw"))?;
    let hanson_wright = HansonWrightCalibration {
        c1: 0.125,
        largest_passing,
        candidates,
        trials: hw_trials,
    };

    let cal = Calibration {
        seed,
        prior_lambda_min,
        dp_covariance,
        dp_mean,
        median_boost,
        tradeoff,
        hanson_wright,
    };
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/calibration.json");
    std::fs::write(path, serde_json::to_string_pretty(&cal)? + "\n")?;
    eprintln!("wrote {path}");
    Ok(())
}
