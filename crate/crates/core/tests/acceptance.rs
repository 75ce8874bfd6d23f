//! One PASS/FAIL line per acceptance criterion.
//!
//! The n=300 replication study is run once and shared by the criteria that
//! need it. The ELBO property suite inspects the VB traces of every fit made
//! by the other criteria.

use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_distr::{Distribution, Gamma};
use vbsurv::cavi::{self, FitConfig, IterationRecord, VariationalState};
use vbsurv::cli::ingest_csv;
use vbsurv::model::PriorSpec;
use vbsurv::numerics::{digamma, inverse_gamma_moments, InverseGammaParams};
use vbsurv::piecewise::{fit_linear_breakpoints, linear_table_sse, quadratic_table_sse};
use vbsurv::posterior::{summarize_coefficients, summarize_scale, ParameterSummary};
use vbsurv::reference::{fit_mle, sample_posterior_with, McmcConfig, ProposalKind};
use vbsurv::simulate::{
    generate_dataset, run_replication, write_report_csv, Method, ReplicationOptions,
    ReplicationOutcome, SimulationScenario,
};

const LEVEL: f64 = 0.95;
const STUDY_SEED: u64 = 7;
const SMALL_STUDY_SEED: u64 = 7;
// fixed before looking at its outcome; see the ledger for other seeds
const ORACLE_SEED: u64 = 11;

fn report(criterion: &str, pass: bool, detail: &str) -> bool {
    println!("{} criterion {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

/// A VB trace inspected by the ELBO property suite.
struct Trace {
    origin: String,
    expected_shape: f64,
    history: Vec<IterationRecord>,
}

fn state_trace(origin: &str, state: &VariationalState) -> Trace {
    Trace {
        origin: origin.to_string(),
        expected_shape: state.scale_shape,
        history: state.history.clone(),
    }
}

fn outcome_traces(origin: &str, outcome: &ReplicationOutcome) -> Vec<Trace> {
    outcome
        .vb_traces
        .iter()
        .map(|v| Trace {
            origin: format!("{origin} replicate {}", v.replicate),
            expected_shape: v.expected_shape,
            history: v.history.clone(),
        })
        .collect()
}

fn options() -> ReplicationOptions {
    ReplicationOptions {
        fit: FitConfig::default(),
        level: LEVEL,
        mcmc_iterations: 5_000,
        mcmc_burn_in: 1_000,
        mcmc_proposal: ProposalKind::Diagonal,
    }
}

fn study_csv(u: f64) -> (Vec<u8>, ReplicationOutcome, Duration) {
    let scenario = SimulationScenario::new(300, u, 100, STUDY_SEED).unwrap();
    let prior = PriorSpec::weak(3);
    let start = Instant::now();
    let outcome = run_replication(&scenario, &prior, &[Method::Vb, Method::Mle], &options()).unwrap();
    let elapsed = start.elapsed();
    let mut csv = Vec::new();
    write_report_csv(&mut csv, &scenario, &prior, &options(), &outcome.reports).unwrap();
    (csv, outcome, elapsed)
}

struct LargeStudy {
    runs: Vec<(f64, Vec<u8>, ReplicationOutcome)>,
    elapsed: Duration,
}

fn large_study() -> &'static LargeStudy {
    static T: OnceLock<LargeStudy> = OnceLock::new();
    T.get_or_init(|| {
        let mut runs = Vec::new();
        let mut elapsed = Duration::ZERO;
        for u in [0.0, 48.0, 17.0] {
            let (csv, outcome, t) = study_csv(u);
            elapsed += t;
            runs.push((u, csv, outcome));
        }
        LargeStudy { runs, elapsed }
    })
}

#[test]
fn criterion_1_piecewise_audit() {
    let start = Instant::now();
    let lin = linear_table_sse(10_000);
    let quad = quadratic_table_sse(10_000);
    let audit_time = start.elapsed();
    let start = Instant::now();
    let fit = fit_linear_breakpoints(10_000, 3);
    let search_time = start.elapsed();
    let target = [-1.701, 0.0, 1.702];
    let knots_ok = fit.breakpoints.len() == 3
        && fit.breakpoints.iter().zip(target).all(|(a, b)| (a - b).abs() <= 0.1);
    let pass = report(
        "1 (piecewise audit)",
        (3.30..=3.40).contains(&lin)
            && (0.11..=0.13).contains(&quad)
            && audit_time < Duration::from_secs(1)
            && knots_ok,
        &format!(
            "linear SSE {lin:.4}, quadratic SSE {quad:.4}, audit {:.1} ms, 3-breakpoint search {:?} in {:.1} ms",
            audit_time.as_secs_f64() * 1e3,
            fit.breakpoints,
            search_time.as_secs_f64() * 1e3
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_numerics() {
    // digamma oracles: ψ(1) = −γ, ψ(½) = −γ − 2 ln 2, ψ(m+1) = ψ(1) + H_m
    let gamma_e = 0.577_215_664_901_532_9;
    let harmonic = |m: usize| (1..=m).rev().map(|k| 1.0 / k as f64).sum::<f64>();
    let reference = [
        (1.0, -gamma_e),
        (0.5, -gamma_e - 2.0 * std::f64::consts::LN_2),
        (2.0, 1.0 - gamma_e),
        (10.0, harmonic(9) - gamma_e),
        (501.0, harmonic(500) - gamma_e),
    ];
    let mut digamma_err: f64 = 0.0;
    for (x, v) in reference {
        digamma_err = digamma_err.max((digamma(x).unwrap() - v).abs());
    }
    for k in 1..400 {
        let x = 0.05 * k as f64;
        let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
        digamma_err = digamma_err.max((lhs - 1.0 / x).abs());
    }

    // Monte-Carlo moments: b = 1/g with g ~ Gamma(α, rate ω)
    let draws = 1_000_000;
    let mut worst_z: f64 = 0.0;
    for (i, (a, w)) in [(11.0, 10.0), (161.0, 120.0), (3.5, 0.7)].into_iter().enumerate() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(100 + i as u64);
        let gamma = Gamma::new(a, 1.0 / w).unwrap();
        let m = inverse_gamma_moments(&InverseGammaParams::new(a, w).unwrap());
        let (mut s, mut ss) = ([0.0f64; 3], [0.0f64; 3]);
        for _ in 0..draws {
            let g: f64 = gamma.sample(&mut rng);
            let v = [g, g * g, -g.ln()];
            for j in 0..3 {
                s[j] += v[j];
                ss[j] += v[j] * v[j];
            }
        }
        let n = draws as f64;
        for (j, analytic) in [m.mean_inv, m.mean_inv_sq, m.mean_log].into_iter().enumerate() {
            let mean = s[j] / n;
            let se = ((ss[j] / n - mean * mean) / n).sqrt();
            worst_z = worst_z.max((mean - analytic).abs() / se);
        }
    }

    let mut round_trip: f64 = 0.0;
    for (a, w) in [(11.0, 10.0), (0.7, 2.0), (501.0, 500.0), (2.5, 0.3)] {
        let p = InverseGammaParams::new(a, w).unwrap();
        for k in 1..100 {
            let q = k as f64 / 100.0;
            round_trip = round_trip.max((p.cdf(p.quantile(q).unwrap()).unwrap() - q).abs());
        }
    }
    let pass = report(
        "2 (numerics)",
        digamma_err <= 1e-8 && worst_z <= 3.0 && round_trip <= 1e-8,
        &format!(
            "digamma max error {digamma_err:.2e}, worst Monte-Carlo |z| {worst_z:.2} over 10^6 draws, \
             quantile/CDF round trip {round_trip:.2e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_oracle_agreement() {
    let start = Instant::now();
    let scenario = SimulationScenario::new(300, 0.0, 1, ORACLE_SEED).unwrap();
    let data = generate_dataset(&scenario, 0);
    let prior = PriorSpec::weak(3);
    let state = cavi::fit(&data, &prior, &FitConfig::default()).unwrap();
    let mut vb: Vec<f64> = state.coef_mean.iter().copied().collect();
    vb.push(state.scale_mean());

    let mle = fit_mle(&data).unwrap();
    let mut mle_point: Vec<f64> = mle.coefficients.iter().copied().collect();
    mle_point.push(mle.scale);

    let config = McmcConfig::new(45_000, 5_000, ORACLE_SEED);
    let chain = sample_posterior_with(&data, &prior, &config).unwrap();
    let mcmc = chain.means();
    let elapsed = start.elapsed();

    let d_mle = vb.iter().zip(&mle_point).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let d_mcmc = vb.iter().zip(&mcmc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = report(
        "3 (oracle agreement)",
        chain.len() == 40_000 && d_mle <= 0.10 && d_mcmc <= 0.05 && elapsed < Duration::from_secs(120),
        &format!(
            "seed {ORACLE_SEED}: VB {vb:.4?}, MLE {mle_point:.4?}, Metropolis {mcmc:.4?} ({} draws, acceptance {:.2}); \
             max |VB-MLE| {d_mle:.4}, max |VB-MCMC| {d_mcmc:.4}, {:.1} s",
            chain.len(),
            chain.acceptance_rate,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_large_replication_study() {
    let t = large_study();
    let mut pass = t.elapsed < Duration::from_secs(300);
    let mut lines = Vec::new();
    for (u, _, outcome) in &t.runs {
        let vb = outcome.reports.iter().find(|r| r.method == Method::Vb).unwrap();
        let mut max_bias: f64 = 0.0;
        let (mut cov_lo, mut cov_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &vb.parameters {
            if p.name != "scale" {
                max_bias = max_bias.max(p.bias.abs());
            }
            cov_lo = cov_lo.min(p.coverage_percent);
            cov_hi = cov_hi.max(p.coverage_percent);
        }
        let mse_b0 = vb.parameters[0].mse;
        let mse_b = vb.parameters[3].mse;
        pass &= max_bias <= 0.06
            && (0.10..=0.24).contains(&mse_b0)
            && mse_b <= 0.004
            && cov_lo >= 88.0
            && cov_hi <= 99.0
            && vb.n_failed == 0;
        lines.push(format!(
            "u={u}: max|bias| {max_bias:.4}, MSE(beta0) {mse_b0:.4}, MSE(b) {mse_b:.5}, coverage {cov_lo}-{cov_hi}%"
        ));
    }
    let ok = report(
        "4 (n=300 replication study)",
        pass,
        &format!("{} in {:.2} s", lines.join("; "), t.elapsed.as_secs_f64()),
    );
    assert!(ok);
}

#[test]
fn criterion_5_small_sample_study() {
    let start = Instant::now();
    let mut mse = Vec::new();
    for (label, prior) in [("weak", PriorSpec::weak(3)), ("strong", PriorSpec::strong())] {
        let scenario = SimulationScenario::new(30, 0.0, 100, SMALL_STUDY_SEED).unwrap();
        let outcome = run_replication(&scenario, &prior, &[Method::Vb, Method::Mle], &options()).unwrap();
        let get = |m: Method| outcome.reports.iter().find(|r| r.method == m).unwrap().parameters[0].mse;
        mse.push((label, get(Method::Vb), get(Method::Mle)));
    }
    let elapsed = start.elapsed();
    let reductions: Vec<f64> = mse.iter().map(|(_, vb, mle)| 1.0 - vb / mle).collect();
    let pass = reductions.iter().all(|&r| r >= 0.25)
        && mse[1].1 < mse[0].1
        && elapsed < Duration::from_secs(120);
    let ok = report(
        "5 (n=30 replication study)",
        pass,
        &format!(
            "MSE(beta0) weak VB {:.3} vs MLE {:.3} ({:.1}% lower), strong VB {:.3} vs MLE {:.3} ({:.1}% lower), {:.2} s",
            mse[0].1,
            mse[0].2,
            100.0 * reductions[0],
            mse[1].1,
            mse[1].2,
            100.0 * reductions[1],
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

fn rhdnase_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/rhdnase.csv")
}

#[test]
fn criterion_6_rhdnase() {
    let data = ingest_csv(&rhdnase_path()).unwrap();
    let prior = PriorSpec::rhdnase();
    let start = Instant::now();
    let state = cavi::fit(&data, &prior, &FitConfig::default()).unwrap();
    let vb_time = start.elapsed();
    let mut vb: Vec<ParameterSummary> = summarize_coefficients(&state, data.covariate_names(), LEVEL).unwrap();
    vb.push(summarize_scale(&state, LEVEL).unwrap());
    let mle = fit_mle(&data).unwrap();

    // reference VB values: mean, interval
    let table = [
        (4.113, 3.740, 4.486),
        (0.416, 0.139, 0.692),
        (0.021, 0.016, 0.027),
        (0.908, 0.844, 0.974),
    ];
    let mean_tol = [f64::INFINITY, 0.02, 0.002, 0.02];
    let mut pass = state.iterations < 100 && state.converged && vb_time < Duration::from_secs(1);
    let mut worst_end: f64 = 0.0;
    for (k, (m, lo, hi)) in table.into_iter().enumerate() {
        pass &= (vb[k].mean - m).abs() <= mean_tol[k];
        worst_end = worst_end
            .max((vb[k].interval_low - lo).abs())
            .max((vb[k].interval_high - hi).abs());
    }
    pass &= worst_end <= 0.05;
    let survreg = [4.086, 0.402, 0.021];
    let worst_mle = mle
        .coefficients
        .iter()
        .zip(survreg)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let se_b = mle.scale_se();
    pass &= worst_mle <= 0.02 && (se_b - 0.045).abs() <= 0.005;
    let ok = report(
        "6 (rhDNase)",
        pass,
        &format!(
            "VB means {:.4?}, worst interval endpoint gap {worst_end:.4}, {} iterations in {:.2} ms; \
             MLE {:.4?} (worst gap {worst_mle:.4}), SE(b) {se_b:.4}",
            vb.iter().map(|s| s.mean).collect::<Vec<_>>(),
            state.iterations,
            vb_time.as_secs_f64() * 1e3,
            mle.coefficients.as_slice(),
        ),
    );
    assert!(ok);
}

fn write_fixture(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    // Censored rows just below the prior mean of the intercept: φ is well
    // above zero, so each row pulls ω down by φ·|residual| while the tiny ω₀
    // and the near-certain coefficient prior leave nothing to compensate.
    let data = dir.join("omega.csv");
    let mut csv = String::from("time,status,x\n");
    for i in 0..40 {
        let t = (9.5f64 + 0.01 * i as f64).exp();
        csv.push_str(&format!("{t},0,0\n"));
    }
    std::fs::write(&data, csv).unwrap();
    let config = dir.join("omega.cfg");
    std::fs::write(
        &config,
        "prior_mean=10,0\nprior_precision=1000000\nprior_shape=0.01\nprior_rate=0.01\n",
    )
    .unwrap();
    (data, config)
}

fn omega_abort_exit_code() -> Option<i32> {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = write_fixture(dir.path());
    let status = Command::new(env!("CARGO_BIN_EXE_vbsurv"))
        .args(["fit", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    status.status.code()
}

#[test]
fn criterion_7_elbo_properties() {
    let traces = property_traces();
    let (mut stretch_steps, mut violations, mut worst_drop) = (0usize, 0usize, 0.0f64);
    let mut worst_origin = String::new();
    let (mut shape_ok, mut spd_ok) = (true, true);
    let mut iterations = 0;
    for t in traces.iter() {
        for (k, rec) in t.history.iter().enumerate() {
            iterations += 1;
            shape_ok &= rec.scale_shape == t.expected_shape;
            spd_ok &= rec.min_cov_eigenvalue > 0.0 && rec.cov_asymmetry == 0.0;
            if k > 0 && rec.segments_unchanged {
                stretch_steps += 1;
                let drop = t.history[k - 1].elbo - rec.elbo;
                if drop > 1e-8 {
                    violations += 1;
                    if drop > worst_drop {
                        worst_drop = drop;
                        worst_origin = format!("{} iteration {}", t.origin, rec.iteration);
                    }
                }
            }
        }
    }
    let n_traces = traces.len();
    let code = omega_abort_exit_code();
    let pass = violations == 0 && shape_ok && spd_ok && code == Some(1) && iterations > 0;
    let ok = report(
        "7 (ELBO property suite)",
        pass,
        &format!(
            "{} traces, {iterations} iterations; unchanged-segment steps {stretch_steps}, ELBO decreases {violations} \
             (largest {worst_drop:.4} at {worst_origin}); alpha = alpha0 + r: {shape_ok}; Sigma SPD and symmetric: {spd_ok}; \
             omega <= 0 fixture exit code {code:?}",
            n_traces
        ),
    );
    assert!(ok);
}

/// The VB fits of criteria 3 to 6, rerun here so the suite does not depend
/// on test ordering.
fn property_traces() -> Vec<Trace> {
    let mut out = Vec::new();
    for (u, _, outcome) in &large_study().runs {
        out.extend(outcome_traces(&format!("n300 u={u}"), outcome));
    }
    for (label, prior) in [("weak", PriorSpec::weak(3)), ("strong", PriorSpec::strong())] {
        let scenario = SimulationScenario::new(30, 0.0, 100, SMALL_STUDY_SEED).unwrap();
        let outcome = run_replication(&scenario, &prior, &[Method::Vb], &options()).unwrap();
        out.extend(outcome_traces(&format!("n30 {label}"), &outcome));
    }
    let data = ingest_csv(&rhdnase_path()).unwrap();
    let state = cavi::fit(&data, &PriorSpec::rhdnase(), &FitConfig::default()).unwrap();
    out.push(state_trace("rhdnase", &state));
    let scenario = SimulationScenario::new(300, 0.0, 1, ORACLE_SEED).unwrap();
    let data = generate_dataset(&scenario, 0);
    let state = cavi::fit(&data, &PriorSpec::weak(3), &FitConfig::default()).unwrap();
    out.push(state_trace("oracle fixture", &state));
    out
}

#[test]
fn criterion_8_determinism() {
    let t = large_study();
    let mut identical = true;
    for (u, csv, _) in &t.runs {
        let (again, _, _) = study_csv(*u);
        identical &= &again == csv;
    }
    // the binary as well
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_vbsurv"))
            .args(["replicate", "--n", "300", "--censor-u", "17", "--replicates", "100", "--seed", "7", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success());
        files.push(std::fs::read(&out).unwrap());
    }
    identical &= files[0] == files[1];
    let ok = report(
        "8 (determinism)",
        identical,
        &format!(
            "repeated n=300 replication runs (3 censoring levels in-process, u=17 via the binary) byte-identical: {identical}"
        ),
    );
    assert!(ok);
}

#[test]
fn soft_timing_vb_vs_metropolis() {
    let scenario = SimulationScenario::new(300, 0.0, 1, ORACLE_SEED).unwrap();
    let data = generate_dataset(&scenario, 0);
    let prior = PriorSpec::weak(3);
    let reps = 20;
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(cavi::fit(&data, &prior, &FitConfig::default()).unwrap());
    }
    let vb = start.elapsed().as_secs_f64() / reps as f64;
    let start = Instant::now();
    std::hint::black_box(sample_posterior_with(&data, &prior, &McmcConfig::new(5_000, 1_000, 1)).unwrap());
    let mcmc = start.elapsed().as_secs_f64();
    let ratio = mcmc / vb;
    // informational: never fails the suite
    println!(
        "{} soft timing: VB {:.3} ms, 5000-iteration Metropolis {:.1} ms, ratio {ratio:.0}x (want >= 20x)",
        if ratio >= 20.0 { "PASS" } else { "FAIL" },
        vb * 1e3,
        mcmc * 1e3
    );
}
