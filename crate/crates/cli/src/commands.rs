use std::path::PathBuf;

use fp_audit_core::distributions::{kth_moment_estimate, prior_tail_bound, sample_gaussian, sample_heavy_tailed, HeavyTailSpec, PriorSpec};
use fp_audit_core::fingerprint::{cv_adjusted_stats, posterior_gap, posterior_mean, run_attack, AttackConfig, AttackOptions, AttackSummary};
use fp_audit_core::linalg::{eigen_extremes, Vector};
use fp_audit_core::mechanisms::{build_mechanism, empirical_second_moment, MechanismParams};
use fp_audit_core::reductions::{empirical_cov_error_floor, exhaustion_probability, FloorRegime, ReductionConfig};
use fp_audit_core::rng::{sub_seed, SimRng};
use fp_audit_core::stats::{log_log_slope, spearman, MeanSe, Spearman};
use fp_audit_core::validation::{CheckResult, Validator, CRITERIA};
use fp_audit_core::Runner;
use serde::Serialize;

use crate::config::{Command, ExperimentConfig};
use crate::output::{ensure_dir, file_names, unix_ms, write_csv, write_json, write_text, Metadata};
use crate::svg::{Chart, Series};
use crate::Result;

/// Command-line overrides of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub svg: bool,
    pub config_path: Option<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    /// False when a validation check failed.
    pub pass: bool,
    pub files: Vec<PathBuf>,
    /// Human-readable lines for the terminal.
    pub lines: Vec<String>,
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    runner: Runner,
    svg: bool,
    files: Vec<PathBuf>,
    lines: Vec<String>,
}

impl Ctx {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.files.push(p.clone());
        p
    }

    fn svg(&mut self, name: &str, chart: Chart) -> Result<()> {
        if self.svg {
            let p = self.path(name);
            write_text(&p, &chart.render())?;
        }
        Ok(())
    }
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = unix_ms();
    let runner = match opts.workers {
        Some(w) => Runner::new(w)?,
        None => Runner::with_available_cores(),
    };
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    ensure_dir(&out)?;
    let mut ctx = Ctx {
        seed: opts.seed.unwrap_or(cfg.master_seed),
        out,
        runner,
        svg: opts.svg,
        files: Vec::new(),
        lines: Vec::new(),
    };
    let pass = match cfg.command {
        Command::Validate => validate(cfg, &mut ctx)?,
        Command::AttackSweep => attack_sweep(cfg, &mut ctx)?,
        Command::PosteriorCheck => posterior_check(cfg, &mut ctx)?,
        Command::Tails => tails(cfg, &mut ctx)?,
        Command::HeavyTailed => heavy_tailed(cfg, &mut ctx)?,
        Command::PhaseDiagram => phase_diagram(cfg, &mut ctx)?,
    };
    let meta_path = ctx.out.join("metadata.json");
    let meta = Metadata {
        command: cfg.command.name().into(),
        master_seed: ctx.seed,
        workers: ctx.runner.workers(),
        crate_version: env!("CARGO_PKG_VERSION"),
        config_path: opts.config_path.clone(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        files: file_names(&ctx.files),
    };
    write_json(&meta_path, &meta)?;
    ctx.files.push(meta_path);
    Ok(RunOutcome {
        pass,
        files: ctx.files,
        lines: ctx.lines,
    })
}

fn validate(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<bool> {
    let v = Validator::new(ctx.seed, cfg.scale, &ctx.runner);
    let report = if cfg.criteria.is_empty() { v.run_all()? } else { v.run(&cfg.criteria)? };
    for c in &report.checks {
        ctx.lines.push(check_line(c));
    }
    for (k, name) in CRITERIA {
        if let Some(p) = report.criterion_pass(k) {
            ctx.lines.push(format!("criterion {k} ({name}): {}", if p { "PASS" } else { "FAIL" }));
        }
    }
    let json = ctx.path("validation.json");
    write_json(&json, &report)?;
    let csv = ctx.path("validation.csv");
    write_csv(&csv, &report.checks)?;
    Ok(report.pass())
}

pub fn check_line(c: &CheckResult) -> String {
    let mut s = format!(
        "[{}] {} {}: estimate {:.6e}, target {:.6e}, se {:.3e}",
        c.criterion,
        if c.pass { "PASS" } else { "FAIL" },
        c.name,
        c.estimate,
        c.target,
        c.se
    );
    if !c.detail.is_empty() {
        s.push_str(" (");
        s.push_str(&c.detail);
        s.push(')');
    }
    s
}

#[derive(Debug, Serialize)]
struct SweepRow {
    mechanism: String,
    epsilon: Option<f64>,
    d: usize,
    n: usize,
    trials: usize,
    stat: f64,
    stat_se: f64,
    stat_cv: f64,
    stat_cv_se: f64,
    z_prime: f64,
    z_prime_se: f64,
    z_prime_count: usize,
    empirical_floor: f64,
    empirical_floor_se: f64,
    empirical_floor_oracle: f64,
    empirical_floor_oracle_se: f64,
    posterior_gap_sq: f64,
    posterior_gap_sq_se: f64,
    err_frob: f64,
    err_frob_se: f64,
    gamma_two_thirds: f64,
    tension_excess_z: Option<f64>,
    implied_epsilon_lower_bound: Option<f64>,
}

impl SweepRow {
    fn new(s: &AttackSummary, epsilon: Option<f64>) -> Self {
        Self {
            mechanism: s.mechanism_id.clone(),
            epsilon,
            d: s.d,
            n: s.n,
            trials: s.trials,
            stat: s.stat.mean,
            stat_se: s.stat.se,
            stat_cv: s.stat_cv.mean,
            stat_cv_se: s.stat_cv.se,
            z_prime: s.z_prime.mean,
            z_prime_se: s.z_prime.se,
            z_prime_count: s.z_prime_count,
            empirical_floor: s.empirical_floor.mean,
            empirical_floor_se: s.empirical_floor.se,
            empirical_floor_oracle: s.empirical_floor_oracle.mean,
            empirical_floor_oracle_se: s.empirical_floor_oracle.se,
            posterior_gap_sq: s.posterior_gap_sq.mean,
            posterior_gap_sq_se: s.posterior_gap_sq.se,
            err_frob: s.err_frob.mean,
            err_frob_se: s.err_frob.se,
            gamma_two_thirds: s.gamma.two_thirds,
            tension_excess_z: s.tension.map(|t| t.excess_z),
            implied_epsilon_lower_bound: s.tension.and_then(|t| t.implied_epsilon_lower_bound),
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    config: &'a ExperimentConfig,
    master_seed: u64,
    summaries: Vec<AttackSummary>,
    /// Trial-level Spearman correlation of the control-variate statistic with epsilon.
    epsilon_trend: Option<Spearman>,
    /// Log-log slope of the empirical floor against n.
    floor_slope: Option<f64>,
}

fn attack_sweep(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<bool> {
    let eps_list: Vec<Option<f64>> = if cfg.epsilons.is_empty() {
        vec![None]
    } else {
        cfg.epsilons.iter().map(|&e| Some(e)).collect()
    };
    let options = AttackOptions { z_prime: cfg.z_prime };
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut trend = (Vec::new(), Vec::new());
    let mut floors = Vec::new();
    for &n in &cfg.sizes() {
        for &eps in &eps_list {
            let params = MechanismParams {
                epsilon: eps.unwrap_or(cfg.params.epsilon),
                ..cfg.params.clone()
            };
            let mech = build_mechanism(&cfg.mechanism, cfg.d, &params)?;
            let label = format!("sweep/{}/{}/{n}", cfg.mechanism, params.epsilon);
            let attack = AttackConfig {
                d: cfg.d,
                n,
                trials: cfg.trials,
                master_seed: sub_seed(ctx.seed, &label),
                options,
                audit_privacy: None,
            };
            let rep = run_attack(mech.as_ref(), &attack, &ctx.runner)?;
            if let Some(e) = eps {
                let cv = cv_adjusted_stats(&rep.records);
                trend.0.extend(std::iter::repeat_n(e, cv.len()));
                trend.1.extend(cv);
            }
            floors.push((n as f64, rep.summary.empirical_floor.mean));
            ctx.lines.push(format!(
                "{} eps={} n={n}: stat {:.4} +/- {:.4}, cv stat {:.4} +/- {:.4}, floor {:.4}",
                rep.summary.mechanism_id,
                params.epsilon,
                rep.summary.stat.mean,
                rep.summary.stat.se,
                rep.summary.stat_cv.mean,
                rep.summary.stat_cv.se,
                rep.summary.empirical_floor.mean
            ));
            rows.push(SweepRow::new(&rep.summary, Some(params.epsilon)));
            summaries.push(rep.summary);
            if cfg.baseline {
                let base = build_mechanism("empirical", cfg.d, &params)?;
                let attack = AttackConfig {
                    master_seed: sub_seed(ctx.seed, &format!("sweep/empirical/{}/{n}", params.epsilon)),
                    ..attack
                };
                let rep = run_attack(base.as_ref(), &attack, &ctx.runner)?;
                rows.push(SweepRow::new(&rep.summary, Some(params.epsilon)));
                summaries.push(rep.summary);
            }
        }
    }
    let epsilon_trend = if eps_list.len() >= 2 { Some(spearman(&trend.0, &trend.1)?) } else { None };
    let floor_slope = if cfg.sizes().len() >= 2 && eps_list.len() == 1 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = floors.iter().copied().unzip();
        Some(log_log_slope(&xs, &ys)?)
    } else {
        None
    };
    if let Some(t) = &epsilon_trend {
        ctx.lines.push(format!("epsilon trend: rho {:.4}, p {:.3e} over {} trials", t.rho, t.p_value, t.count));
    }
    if let Some(s) = floor_slope {
        ctx.lines.push(format!("floor log-log slope in n: {s:.4}"));
    }
    let p = ctx.path("attack_sweep.csv");
    write_csv(&p, &rows)?;
    let p = ctx.path("attack_sweep.json");
    write_json(
        &p,
        &SweepSummary {
            config: cfg,
            master_seed: ctx.seed,
            summaries,
            epsilon_trend,
            floor_slope,
        },
    )?;

    let series = |mech: &str, x: &dyn Fn(&SweepRow) -> f64, y: &dyn Fn(&SweepRow) -> f64| Series {
        label: mech.to_string(),
        points: rows.iter().filter(|r| r.mechanism == mech).map(|r| (x(r), y(r))).collect(),
    };
    let mut ids: Vec<String> = rows.iter().map(|r| r.mechanism.clone()).collect();
    ids.dedup();
    ids.sort();
    ids.dedup();
    let chart = if eps_list.len() >= 2 {
        Chart {
            title: format!("per-sample statistic vs epsilon (d={})", cfg.d),
            x_label: "epsilon".into(),
            y_label: "mean (1/n) sum Z_i, control-variate adjusted".into(),
            log_x: true,
            log_y: false,
            series: ids.iter().map(|id| series(id, &|r| r.epsilon.unwrap_or(f64::NAN), &|r| r.stat_cv)).collect(),
        }
    } else {
        Chart {
            title: format!("empirical floor vs n (d={})", cfg.d),
            x_label: "n".into(),
            y_label: "E||S_hat - S||_F^2".into(),
            log_x: true,
            log_y: true,
            series: ids.iter().map(|id| series(id, &|r| r.n as f64, &|r| r.empirical_floor)).collect(),
        }
    };
    ctx.svg("attack_sweep.svg", chart)?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct PosteriorRow {
    d: usize,
    n: usize,
    prior_dof: usize,
    trials: usize,
    posterior_gap_sq: f64,
    posterior_gap_sq_se: f64,
    posterior_mean_trace: f64,
    posterior_mean_trace_se: f64,
    prior_mean_trace: f64,
}

fn posterior_check(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<bool> {
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &d in &cfg.dims() {
        let prior = PriorSpec::standard(d);
        let sampler = prior.sampler()?;
        let sizes = cfg.sizes();
        let mut gaps = Vec::new();
        for &n in &sizes {
            let vals = ctx.runner.try_map_trials(cfg.trials, sub_seed(ctx.seed, &format!("posterior/{d}/{n}")), |_, rng| {
                let sigma = sampler.sample(rng)?;
                let x = sample_gaussian(&Vector::zeros(d), &sigma, n, rng)?;
                let s_hat = empirical_second_moment(&x);
                Ok((posterior_gap(&s_hat, n, prior.dof)?.powi(2), posterior_mean(&s_hat, n, prior.dof)?.trace()))
            })?;
            let (g, t): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            let g = MeanSe::from_values(&g)?;
            let t = MeanSe::from_values(&t)?;
            gaps.push(g.mean);
            rows.push(PosteriorRow {
                d,
                n,
                prior_dof: prior.dof,
                trials: cfg.trials,
                posterior_gap_sq: g.mean,
                posterior_gap_sq_se: g.se,
                posterior_mean_trace: t.mean,
                posterior_mean_trace_se: t.se,
                prior_mean_trace: prior.mean().trace(),
            });
        }
        if sizes.len() >= 2 {
            let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
            let s = log_log_slope(&xs, &gaps)?;
            ctx.lines.push(format!("d={d}: squared posterior-gap slope in n {s:.4}"));
            slopes.push((d, s));
        }
    }
    let p = ctx.path("posterior_check.csv");
    write_csv(&p, &rows)?;
    let p = ctx.path("posterior_check.json");
    write_json(&p, &serde_json::json!({ "config": cfg, "master_seed": ctx.seed, "slopes": slopes }))?;
    let chart = Chart {
        title: "squared posterior gap vs n".into(),
        x_label: "n".into(),
        y_label: "E||E[S|X] - S_hat||_F^2".into(),
        log_x: true,
        log_y: true,
        series: cfg
            .dims()
            .iter()
            .map(|&d| Series {
                label: format!("d={d}"),
                points: rows.iter().filter(|r| r.d == d).map(|r| (r.n as f64, r.posterior_gap_sq)).collect(),
            })
            .collect(),
    };
    ctx.svg("posterior_check.svg", chart)?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct TailRow {
    d: usize,
    prior_dof: usize,
    x: f64,
    trials: usize,
    frequency: f64,
    frequency_se: f64,
    stated_bound: f64,
    unsimplified_bound: f64,
    lambda_min_third_quantile: f64,
}

fn tails(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<bool> {
    let xs = if cfg.xs.is_empty() {
        vec![2f64.exp(), 3f64.exp(), 4f64.exp()]
    } else {
        cfg.xs.clone()
    };
    let mut rows = Vec::new();
    for &d in &cfg.dims() {
        let prior = PriorSpec::standard(d);
        let sampler = prior.sampler()?;
        let spectra = ctx.runner.try_map_trials(cfg.trials, sub_seed(ctx.seed, &format!("tails/{d}")), |_, rng| {
            eigen_extremes(&sampler.sample(rng)?)
        })?;
        let lows: Vec<f64> = spectra.iter().map(|s| s.0).collect();
        let q = fp_audit_core::stats::quantile(&lows, 1.0 / 3.0);
        let m = prior.dof as f64;
        let k = m - d as f64 + 1.0;
        for &x in &xs {
            let hits: Vec<bool> = spectra.iter().map(|s| s.1 >= x).collect();
            let f = MeanSe::from_indicators(&hits)?;
            let unsimplified = (k * (m / x.sqrt()).ln() - statrs::function::gamma::ln_gamma(k + 1.0)).exp().min(1.0);
            rows.push(TailRow {
                d,
                prior_dof: prior.dof,
                x,
                trials: cfg.trials,
                frequency: f.mean,
                frequency_se: f.se,
                stated_bound: prior_tail_bound(d, x),
                unsimplified_bound: unsimplified,
                lambda_min_third_quantile: q,
            });
            ctx.lines.push(format!(
                "d={d} x={x:.3}: P(||S||_op >= x) = {:.3e} +/- {:.1e}; (e^2/x)^(d/2) = {:.3e}; unsimplified = {unsimplified:.3e}",
                f.mean,
                f.se,
                prior_tail_bound(d, x)
            ));
        }
    }
    let p = ctx.path("tails.csv");
    write_csv(&p, &rows)?;
    let chart = Chart {
        title: "prior operator-norm tails".into(),
        x_label: "x".into(),
        y_label: "P(||S||_op >= x)".into(),
        log_x: true,
        log_y: true,
        series: cfg
            .dims()
            .iter()
            .flat_map(|&d| {
                let pick = |f: fn(&TailRow) -> f64| rows.iter().filter(|r| r.d == d).map(|r| (r.x, f(r))).collect();
                [
                    Series { label: format!("d={d} empirical"), points: pick(|r| r.frequency) },
                    Series { label: format!("d={d} (e^2/x)^(d/2)"), points: pick(|r| r.stated_bound) },
                ]
            })
            .collect(),
    };
    ctx.svg("tails.svg", chart)?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct HeavyRow {
    k: u32,
    beta: f64,
    d: usize,
    rate: f64,
    draws: usize,
    first_coordinate_mean: f64,
    first_coordinate_mean_se: f64,
    first_coordinate_target: f64,
    kth_moment: f64,
    kth_moment_se: f64,
    kth_moment_bound: f64,
    m_inner: usize,
    n_outer: usize,
    exhaustion_exact: f64,
    exhaustion_mc: f64,
    exhaustion_mc_se: f64,
}

fn heavy_tailed(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<bool> {
    let ks = if cfg.ks.is_empty() { vec![2, 4] } else { cfg.ks.clone() };
    let betas = if cfg.betas.is_empty() { vec![0.1, 0.5] } else { cfg.betas.clone() };
    let d = cfg.d;
    let mut rng = SimRng::seed_from(sub_seed(ctx.seed, "heavy/setup"));
    let unit = |rng: &mut SimRng| -> Result<Vector> {
        let v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let s = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        Ok(Vector::new(v.into_iter().map(|a| a / s).collect())?)
    };
    let mu = unit(&mut rng)?.scale(0.8);
    let v = unit(&mut rng)?;
    let mut rows = Vec::new();
    for &k in &ks {
        for &beta in &betas {
            let spec = HeavyTailSpec::new(k, beta, mu.clone())?;
            let label = format!("heavy/{k}/{beta}");
            let x = sample_heavy_tailed(&spec, cfg.trials, &mut SimRng::seed_from(sub_seed(ctx.seed, &format!("{label}/mean"))))?;
            let first: Vec<f64> = x.rows().map(|r| r[0]).collect();
            let mean = MeanSe::from_values(&first)?;
            let moment = kth_moment_estimate(&spec, &v, cfg.trials, &mut SimRng::seed_from(sub_seed(ctx.seed, &format!("{label}/moment"))))?;
            let mut red = ReductionConfig::from_recipe(k, beta, cfg.m_inner, d)?;
            red.n_outer = ((cfg.m_inner as f64 / red.rate()).round() as usize).max(1);
            let rate = red.rate();
            let exhausted = ctx.runner.map_trials(cfg.trials, sub_seed(ctx.seed, &format!("{label}/exhaustion")), |_, rng| {
                (0..red.n_outer).filter(|_| rng.bernoulli(rate)).count() > red.m_inner
            });
            let ex = MeanSe::from_indicators(&exhausted)?;
            let row = HeavyRow {
                k,
                beta,
                d,
                rate,
                draws: cfg.trials,
                first_coordinate_mean: mean.mean,
                first_coordinate_mean_se: mean.se,
                first_coordinate_target: spec.mean()[0],
                kth_moment: moment.mean,
                kth_moment_se: moment.se,
                kth_moment_bound: fp_audit_core::distributions::heavy_tail_moment_bound(k),
                m_inner: red.m_inner,
                n_outer: red.n_outer,
                exhaustion_exact: exhaustion_probability(&red)?,
                exhaustion_mc: ex.mean,
                exhaustion_mc_se: ex.se,
            };
            ctx.lines.push(format!(
                "k={k} beta={beta}: mean[0] {:.4} +/- {:.4} (target {:.4}); moment {:.4} +/- {:.4} (bound {}); exhaustion {:.4} vs MC {:.4} +/- {:.4}",
                row.first_coordinate_mean,
                row.first_coordinate_mean_se,
                row.first_coordinate_target,
                row.kth_moment,
                row.kth_moment_se,
                row.kth_moment_bound,
                row.exhaustion_exact,
                row.exhaustion_mc,
                row.exhaustion_mc_se
            ));
            rows.push(row);
        }
    }
    let p = ctx.path("heavy_tailed.csv");
    write_csv(&p, &rows)?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct PhaseRow {
    d: usize,
    n: usize,
    epsilon: f64,
    floor: f64,
    regime: FloorRegime,
}

fn phase_diagram(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<bool> {
    let eps = if cfg.epsilons.is_empty() { vec![1.0] } else { cfg.epsilons.clone() };
    let mut rows = Vec::new();
    for &epsilon in &eps {
        for &d in &cfg.dims() {
            for &n in &cfg.sizes() {
                let f = empirical_cov_error_floor(d, n, epsilon)?;
                rows.push(PhaseRow {
                    d,
                    n,
                    epsilon,
                    floor: f.value,
                    regime: f.regime,
                });
            }
        }
    }
    ctx.lines.push(format!("{} phase-diagram rows", rows.len()));
    let p = ctx.path("phase_diagram.csv");
    write_csv(&p, &rows)?;
    let chart = Chart {
        title: format!("predicted error floor vs n (epsilon = {})", eps[0]),
        x_label: "n".into(),
        y_label: "floor".into(),
        log_x: true,
        log_y: true,
        series: cfg
            .dims()
            .iter()
            .map(|&d| Series {
                label: format!("d={d}"),
                points: rows.iter().filter(|r| r.d == d && r.epsilon == eps[0]).map(|r| (r.n as f64, r.floor)).collect(),
            })
            .collect(),
    };
    ctx.svg("phase_diagram.svg", chart)?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_in(dir: &std::path::Path, json: &str, workers: usize) -> RunOutcome {
        let cfg = ExperimentConfig::from_json(json).unwrap();
        run(
            &cfg,
            &RunOptions {
                workers: Some(workers),
                out: Some(dir.to_path_buf()),
                svg: true,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn phase_diagram_spot_value() {
        let dir = tempfile::tempdir().unwrap();
        run_in(dir.path(), r#"{"command": "phase-diagram", "ds": [1000], "ns": [1000000]}"#, 1);
        let text = std::fs::read_to_string(dir.path().join("phase_diagram.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("d,n,epsilon,floor,regime"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert!((row[3].parse::<f64>().unwrap() - 1e-3).abs() < 1e-12);
        assert_eq!(row[4], "linear");
        assert!(dir.path().join("phase_diagram.svg").exists());
    }

    #[test]
    fn attack_sweep_is_worker_invariant() {
        let json = r#"{"command": "attack-sweep", "d": 3, "n": 16, "trials": 60, "epsilons": [0.5, 1.0], "z_prime": {"subset": 2}}"#;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_in(a.path(), json, 1);
        run_in(b.path(), json, 3);
        for f in ["attack_sweep.csv", "attack_sweep.json"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn non_private_rows_track_mse_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let json = r#"{"command": "attack-sweep", "mechanism": "empirical", "baseline": false, "d": 4, "ns": [32, 64, 128, 256], "trials": 2000}"#;
        let out = run_in(dir.path(), json, 1);
        assert!(out.pass);
        let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("attack_sweep.json")).unwrap()).unwrap();
        let slope = summary["floor_slope"].as_f64().unwrap();
        assert!((slope + 1.0).abs() <= 0.2, "slope {slope}");
        for s in summary["summaries"].as_array().unwrap() {
            let stat = s["stat"]["mean"].as_f64().unwrap();
            let floor = s["empirical_floor"]["mean"].as_f64().unwrap();
            assert!((stat - floor).abs() <= 1e-9 * floor.abs().max(1.0));
        }
    }

    #[test]
    fn posterior_and_tails_and_heavy_tailed_write_tables() {
        let dir = tempfile::tempdir().unwrap();
        run_in(dir.path(), r#"{"command": "posterior-check", "d": 4, "ns": [32, 128], "trials": 200}"#, 1);
        run_in(dir.path(), r#"{"command": "tails", "ds": [10], "trials": 500}"#, 1);
        run_in(dir.path(), r#"{"command": "heavy-tailed", "d": 3, "trials": 2000}"#, 1);
        for f in ["posterior_check.csv", "tails.csv", "heavy_tailed.csv", "metadata.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
