//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line to stderr (uncaptured) before asserting.

use std::io::Write;
use std::path::Path;
use std::process::Command;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use rtglmm::diffusion;
use rtglmm::distributions::{self, DistributionSpec, Family};
use rtglmm::glmm::{
    self, build_design, marginal_loglik, ErrorVarianceMode, FitOptions, FittedGlmm, GlmmParams,
};
use rtglmm::gof;
use rtglmm::ingest::{synthesize, ResponseModel, SynthDesign, SynthTruth, TrialDataset};
use rtglmm::reconstruction;
use rtglmm::responses::{self, MixtureModel};
use rtglmm::rng;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion}: {verdict}  {detail}");
}

const KS_LEVEL: f64 = 0.01;

fn full_design() -> SynthDesign {
    SynthDesign {
        levels: 22,
        subjects: 116,
        reps: 7,
    }
}

fn gamma_truth() -> SynthTruth {
    SynthTruth {
        beta: (0..22).map(|i| -0.6 + 0.7 * i as f64 / 21.0).collect(),
        tau2: 0.18,
        family: Family::Gamma,
        dispersion: 0.62,
        responses: ResponseModel::single("response", 22),
    }
}

#[test]
fn criterion_1_ig_scheme_goodness_of_fit() {
    let mus = [2.0, 1.5, 1.0, 0.5];
    let results: Vec<(f64, usize)> = mus
        .iter()
        .enumerate()
        .map(|(m, &mu)| {
            let truth = DistributionSpec::ig(mu, 1.0).unwrap();
            let accepted = (0..100u64)
                .into_par_iter()
                .filter(|&r| {
                    let seed = rng::derive_seed(1, 1000 * m as u64 + r);
                    let data = distributions::sample(&truth, 1000, seed).unwrap();
                    let DistributionSpec::InverseGaussian(fit) =
                        distributions::fit_marginal(&data, Family::InverseGaussian).unwrap()
                    else {
                        unreachable!()
                    };
                    let fht =
                        diffusion::simulate_ig_scheme(fit.mu, fit.phi, 0.01, 500, seed ^ 0x5eed)
                            .unwrap();
                    gof::ks_test(&fht.times, &truth).unwrap().1 > KS_LEVEL
                })
                .count();
            (mu, accepted)
        })
        .collect();
    let pass = results.iter().all(|&(_, a)| a >= 90);
    let detail: Vec<String> = results
        .iter()
        .map(|(mu, a)| format!("mu={mu}: {a}/100"))
        .collect();
    report(
        1,
        pass,
        &format!(
            "KS non-rejections at 1% (need >= 90): {}",
            detail.join(", ")
        ),
    );
    assert!(pass, "{results:?}");
}

#[test]
fn criterion_2_gamma_scheme_goodness_of_fit() {
    let shapes = [2.0, 2.5, 3.0, 3.5];
    let mut pass = true;
    let mut details = Vec::new();
    for (m, &shape) in shapes.iter().enumerate() {
        let truth = DistributionSpec::gamma(shape, 1.0).unwrap();
        let runs: Vec<(bool, Vec<f64>)> = (0..100u64)
            .into_par_iter()
            .map(|r| {
                let seed = rng::derive_seed(2, 1000 * m as u64 + r);
                let data = distributions::sample(&truth, 1000, seed).unwrap();
                let DistributionSpec::Gamma(fit) =
                    distributions::fit_marginal(&data, Family::Gamma).unwrap()
                else {
                    unreachable!()
                };
                let fht = diffusion::simulate_gamma_scheme(
                    fit.shape,
                    fit.scale,
                    0.01,
                    500,
                    seed ^ 0x5eed,
                )
                .unwrap();
                (
                    gof::ks_test(&fht.times, &truth).unwrap().1 > KS_LEVEL,
                    fht.times,
                )
            })
            .collect();
        let accepted = runs.iter().filter(|r| r.0).count();

        // moments of the first repetition against alpha*beta and alpha*beta^2
        let times = &runs[0].1;
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (m_true, v_true) = (shape, shape);
        let se_mean = (v_true / n).sqrt();
        // Var(s^2) ~ (mu4 - sigma^4)/n with mu4 = 3 a (a + 2) for unit scale
        let se_var = ((3.0 * shape * (shape + 2.0) - shape * shape) / n).sqrt();
        let z_mean = (mean - m_true) / se_mean;
        let z_var = (var - v_true) / se_var;
        let ok = accepted >= 85 && z_mean.abs() <= 4.0 && z_var.abs() <= 4.0;
        pass &= ok;
        details.push(format!(
            "alpha={shape}: {accepted}/100, z_mean={z_mean:.2}, z_var={z_var:.2}"
        ));
    }
    report(
        2,
        pass,
        &format!(
            "KS >= 85/100 and moments within 4 SE: {}",
            details.join("; ")
        ),
    );
    assert!(pass, "{details:?}");
}

fn fit_gamma_replication(seed: u64) -> (SynthTruth, FittedGlmm) {
    let truth = gamma_truth();
    let data = synthesize(full_design(), &truth, seed).unwrap();
    let model = glmm::fit(&data, Family::Gamma, &FitOptions::default()).unwrap();
    (truth, model)
}

#[test]
fn criterion_3_glmm_parameter_recovery() {
    let fits: Vec<(SynthTruth, FittedGlmm)> = (0..200u64)
        .into_par_iter()
        .map(|r| fit_gamma_replication(rng::derive_seed(3, r)))
        .collect();

    let (truth, first) = &fits[0];
    let tau_err = (first.tau2 - truth.tau2).abs();
    let phi_err = (first.dispersion - truth.dispersion).abs();
    let beta_err = first
        .beta
        .iter()
        .zip(&truth.beta)
        .map(|(b, t)| (b - t).abs())
        .fold(0.0, f64::max);
    let recovered = first.converged && tau_err <= 0.05 && phi_err <= 0.05 && beta_err < 0.1;

    let mut covered = 0usize;
    let mut total = 0usize;
    let mut unconverged = 0usize;
    for (truth, model) in &fits {
        if !model.converged {
            unconverged += 1;
        }
        for level in 1..=truth.beta.len() {
            total += 1;
            match glmm::wald_ci(model, level, 0.95) {
                Ok(Some((lo, hi)))
                    if lo <= truth.beta[level - 1] && truth.beta[level - 1] <= hi =>
                {
                    covered += 1
                }
                _ => {}
            }
        }
    }
    let coverage = covered as f64 / total as f64;
    let pass = recovered && (0.92..=0.98).contains(&coverage);
    report(
        3,
        pass,
        &format!(
            "|tau2 err|={tau_err:.4}, |phi err|={phi_err:.4}, max |beta err|={beta_err:.4}; \
             Wald coverage {covered}/{total} = {:.2}% ({unconverged} unconverged fits)",
            100.0 * coverage
        ),
    );
    assert!(pass);
}

/// `sum_k ln ∫ prod_t f(y_t | c) N(c; 0, tau2) dc` by the trapezoid rule on
/// `points` nodes over `[-8 tau, 8 tau]`, with densities from the
/// distribution module.
fn dense_grid_loglik(
    params: &GlmmParams,
    family: Family,
    subjects: &[Vec<(usize, f64)>],
    points: usize,
) -> f64 {
    let tau = params.tau2.sqrt();
    let (lo, hi) = (-8.0 * tau, 8.0 * tau);
    let h = (hi - lo) / (points - 1) as f64;
    subjects
        .iter()
        .map(|trials| {
            let logs: Vec<f64> = (0..points)
                .map(|j| {
                    let c = lo + j as f64 * h;
                    let w: f64 = if j == 0 || j == points - 1 { 0.5 } else { 1.0 };
                    let cond: f64 = trials
                        .iter()
                        .map(|&(l, y)| {
                            let spec = DistributionSpec::from_mean_dispersion(
                                family,
                                (params.beta[l] + c).exp(),
                                params.dispersion,
                            )
                            .unwrap();
                            distributions::ln_pdf(&spec, y).unwrap()
                        })
                        .sum();
                    w.ln() + h.ln() + cond
                        - 0.5 * c * c / params.tau2
                        - 0.5 * (2.0 * std::f64::consts::PI * params.tau2).ln()
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + logs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .sum()
}

fn small_instance(
    family: Family,
    subjects: usize,
    reps: usize,
    seed: u64,
    tau2: f64,
    phi: f64,
) -> (TrialDataset, Vec<Vec<(usize, f64)>>) {
    let truth = SynthTruth {
        beta: vec![-0.3, 0.2, 0.5],
        tau2,
        family,
        dispersion: phi,
        responses: ResponseModel::single("r", 3),
    };
    let data = synthesize(
        SynthDesign {
            levels: 3,
            subjects,
            reps,
        },
        &truth,
        seed,
    )
    .unwrap();
    let ids = data.subject_ids();
    let grouped = ids
        .iter()
        .map(|id| {
            data.records
                .iter()
                .filter(|r| r.subject_id == *id)
                .map(|r| (r.level_id - 1, r.rt))
                .collect()
        })
        .collect();
    (data, grouped)
}

#[test]
fn criterion_4_quadrature_against_dense_grid() {
    let mut worst: f64 = 0.0;
    let mut worst_zero: f64 = 0.0;
    // random small instances: 1-5 subjects, at most 20 trials
    let mut draw = rng::master(4);
    for k in 0..40u64 {
        let family = if k % 2 == 0 {
            Family::Gamma
        } else {
            Family::InverseGaussian
        };
        let subjects = draw.random_range(1..=5usize);
        let reps = draw.random_range(1..=20 / (3 * subjects));
        let tau2 = draw.random_range(0.05..1.0);
        let phi = draw.random_range(0.2..1.0);
        let (data, grouped) =
            small_instance(family, subjects, reps, rng::derive_seed(4, k), tau2, phi);
        let design = build_design(&data).unwrap();
        let y = design.gather_rt(&data);
        let params = GlmmParams {
            beta: vec![-0.25, 0.1, 0.45],
            tau2,
            dispersion: phi,
        };
        let ll = marginal_loglik(&params, &design, &y, family, 25).unwrap();
        let oracle = dense_grid_loglik(&params, family, &grouped, 100_000);
        worst = worst.max((ll - oracle).abs());

        let zero = GlmmParams {
            tau2: 0.0,
            ..params
        };
        let ll0 = marginal_loglik(&zero, &design, &y, family, 25).unwrap();
        let glm: f64 = grouped
            .iter()
            .flatten()
            .map(|&(l, yv)| {
                let spec = DistributionSpec::from_mean_dispersion(family, zero.beta[l].exp(), phi)
                    .unwrap();
                distributions::ln_pdf(&spec, yv).unwrap()
            })
            .sum();
        worst_zero = worst_zero.max((ll0 - glm).abs() / glm.abs().max(1.0));
    }
    let pass = worst <= 1e-5 && worst_zero <= 1e-12;
    report(
        4,
        pass,
        &format!("40 instances; max |AGQ(25) - dense grid| = {worst:.2e} (need <= 1e-5); tau2=0 relative gap to GLM = {worst_zero:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_marginal_moments_by_monte_carlo() {
    let mut cfg_rng = rng::master(5);
    let mut worst_z: f64 = 0.0;
    for k in 0..20u64 {
        let family = if k % 2 == 0 {
            Family::Gamma
        } else {
            Family::InverseGaussian
        };
        let beta = cfg_rng.random_range(-1.0..1.0);
        let tau2 = cfg_rng.random_range(0.01..0.6);
        let phi = cfg_rng.random_range(0.1..1.5);
        let model =
            FittedGlmm::from_parameters(family, vec![beta], tau2, phi, ErrorVarianceMode::Exact)
                .unwrap();
        let mean = glmm::marginal_mean(&model, 1).unwrap();
        let var = glmm::marginal_variance(&model, 1).unwrap();

        // integrate the conditional moments over C ~ N(0, tau2)
        let n = 1_000_000;
        let power = family.variance_power();
        let normal = Normal::new(0.0, tau2.sqrt()).unwrap();
        let mut r = rng::substream(55, k);
        let draws: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let m = (beta + normal.sample(&mut r)).exp();
                (m, phi * m.powf(power))
            })
            .collect();
        let nf = n as f64;
        let m_hat = draws.iter().map(|d| d.0).sum::<f64>() / nf;
        let sd_m = (draws.iter().map(|d| (d.0 - m_hat).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        // Var(Y) = E[V(Y|C)] + Var(E[Y|C]); influence terms psi = v + (m - m_hat)^2
        let psi: Vec<f64> = draws
            .iter()
            .map(|&(m, v)| v + (m - m_hat).powi(2))
            .collect();
        let v_hat = psi.iter().sum::<f64>() / nf;
        let sd_v = (psi.iter().map(|p| (p - v_hat).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let z_m = (mean - m_hat) / (sd_m / nf.sqrt());
        let z_v = (var - v_hat) / (sd_v / nf.sqrt());
        worst_z = worst_z.max(z_m.abs()).max(z_v.abs());
    }
    let pass = worst_z <= 4.0;
    report(
        5,
        pass,
        &format!("20 configurations, 1e6 draws each; largest |z| = {worst_z:.2} (need <= 4)"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_reconstruction_round_trip() {
    // exact IG moments of the reconstructed diffusion
    let mut worst_rel: f64 = 0.0;
    for i in 0..40 {
        for j in 0..40 {
            let mu = 0.05 * 1.15f64.powi(i);
            let s2 = 1e-3 * 1.3f64.powi(j);
            let r = reconstruction::reconstruct_ig(mu, s2).unwrap();
            let (m, v) = (r.a / r.drift, r.a / r.drift.powi(3));
            worst_rel = worst_rel
                .max(((m - mu) / mu).abs())
                .max(((v - s2) / s2).abs());
        }
    }
    let exact = worst_rel <= 8.0 * f64::EPSILON;

    // synthesize -> fit -> reconstruct -> Euler hitting times; delta = 0.001
    let delta = 0.001;
    let outcomes: Vec<(f64, bool)> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let truth = SynthTruth {
                beta: vec![-0.4, 0.0, 0.3],
                tau2: 0.1,
                family: Family::InverseGaussian,
                dispersion: 0.5,
                responses: ResponseModel::single("r", 3),
            };
            let seed = rng::derive_seed(6, s);
            let data = synthesize(
                SynthDesign {
                    levels: 3,
                    subjects: 60,
                    reps: 7,
                },
                &truth,
                seed,
            )
            .unwrap();
            let model = glmm::fit(&data, Family::InverseGaussian, &FitOptions::default()).unwrap();
            let level = 1 + (s as usize % 3);
            let rec = reconstruction::glmm_to_diffusion(&model, level, delta).unwrap();
            let fht = diffusion::simulate_checked(&rec.diffusion, 500, seed ^ 0xfe).unwrap();
            let p = gof::ks_test(&fht.times, &rec.implied_marginal).unwrap().1;
            (p, model.converged)
        })
        .collect();
    let accepted = outcomes.iter().filter(|o| o.0 > KS_LEVEL && o.1).count();
    let pass = exact && accepted >= 9;
    let ps: Vec<String> = outcomes.iter().map(|o| format!("{:.3}", o.0)).collect();
    report(
        6,
        pass,
        &format!(
            "max relative moment error {worst_rel:.1e}; pipeline KS non-rejections {accepted}/10 at delta={delta} (p: {})",
            ps.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_gamma_preferred_by_aic() {
    let wins: Vec<(f64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|r| {
            let data = synthesize(full_design(), &gamma_truth(), rng::derive_seed(7, r)).unwrap();
            let gamma = glmm::fit(&data, Family::Gamma, &FitOptions::default()).unwrap();
            let ig = glmm::fit(&data, Family::InverseGaussian, &FitOptions::default()).unwrap();
            (glmm::aic(&gamma), glmm::aic(&ig))
        })
        .collect();
    let count = wins.iter().filter(|(g, i)| g < i).count();
    let pass = count >= 9;
    report(
        7,
        pass,
        &format!("Gamma AIC < IG AIC in {count}/10 replications"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_mixture_against_pooled_draws() {
    let labels = ["happy", "neutral", "sad"];
    let probs = vec![
        vec![0.5, 0.3, 0.2],
        vec![0.2, 0.2, 0.6],
        vec![0.34, 0.33, 0.33],
    ];
    let truth = SynthTruth {
        beta: vec![-0.3, 0.0, 0.2],
        tau2: 0.1,
        family: Family::Gamma,
        dispersion: 0.4,
        responses: ResponseModel {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            probs,
        },
    };
    let data = synthesize(
        SynthDesign {
            levels: 3,
            subjects: 50,
            reps: 7,
        },
        &truth,
        8,
    )
    .unwrap();
    let partition = responses::partition_by_response(&data).unwrap();
    let table = responses::response_probs(&partition, &data).unwrap();
    let worst_sum = table
        .probs
        .iter()
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let components = vec![
        DistributionSpec::ig(0.7, 0.5).unwrap(),
        DistributionSpec::gamma(3.0, 0.3).unwrap(),
        DistributionSpec::ig(1.4, 0.9).unwrap(),
    ];
    let model = MixtureModel::constant(
        table.labels.clone(),
        components.clone(),
        table.probs.clone(),
    )
    .unwrap();
    let n = 100_000;
    let critical = gof::ks_critical_value(n as f64, 0.01).unwrap();
    let mut worst_d: f64 = 0.0;
    for level in 1..=3 {
        let weights = model.weights_at(level).unwrap();
        let mut r = rng::substream(88, level as u64);
        let pooled: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = r.random();
                let mut acc = 0.0;
                let mut pick = weights.len() - 1;
                for (l, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = l;
                        break;
                    }
                }
                distributions::draw(&components[pick], &mut r)
            })
            .collect();
        let d =
            gof::ks_statistic_with(&pooled, |y| responses::mixture_cdf(&model, level, y)).unwrap();
        worst_d = worst_d.max(d);
    }
    let pass = worst_sum <= 1e-12 && worst_d < critical;
    report(
        8,
        pass,
        &format!("largest KS distance {worst_d:.5} vs 1% critical {critical:.5}; weight-sum error {worst_sum:.1e}"),
    );
    assert!(pass);
}

fn cli(args: &[&str], dir: &Path) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_rtglmm"))
        .args(args)
        .current_dir(dir)
        .env_remove("RTGLMM_OUT_DIR")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "rtglmm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_9_artifacts_reproduce_across_threads() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    cli(
        &[
            "synthesize",
            "--family",
            "gamma",
            "--levels",
            "3",
            "--subjects",
            "30",
            "--reps",
            "5",
            "--beta",
            "-0.3,0,0.3",
            "--tau2",
            "0.15",
            "--phi",
            "0.5",
            "--labels",
            "happy,sad",
            "--probs",
            "0.6,0.4",
            "--seed",
            "9",
            "--out-dir",
            "syn",
        ],
        w,
    );
    cli(
        &[
            "probs",
            "--data",
            "syn/trials.csv",
            "--levels",
            "3",
            "--out-dir",
            "probs",
        ],
        w,
    );
    cli(
        &[
            "fit",
            "--data",
            "syn/trials.csv",
            "--levels",
            "3",
            "--family",
            "gamma",
            "--response",
            "happy",
            "--out-dir",
            "fit_happy",
        ],
        w,
    );
    cli(
        &[
            "fit",
            "--data",
            "syn/trials.csv",
            "--levels",
            "3",
            "--family",
            "gamma",
            "--response",
            "sad",
            "--out-dir",
            "fit_sad",
        ],
        w,
    );
    let runs: Vec<(&str, Vec<&str>)> = vec![
        (
            "sim_exact",
            vec![
                "simulate", "--family", "ig", "--mu", "2", "--phi", "1", "--n", "1000", "--seed",
                "7",
            ],
        ),
        (
            "sim_diffusion",
            vec![
                "simulate",
                "--family",
                "gamma",
                "--shape",
                "3.5",
                "--scale",
                "1",
                "--n",
                "500",
                "--method",
                "diffusion",
                "--seed",
                "7",
            ],
        ),
        (
            "reconstruct",
            vec![
                "reconstruct",
                "--model",
                "fit_happy/model.json",
                "--level",
                "2",
                "--seed",
                "3",
            ],
        ),
        (
            "mixture",
            vec![
                "mixture",
                "--model",
                "happy=fit_happy/model.json",
                "--model",
                "sad=fit_sad/model.json",
                "--probs",
                "probs/probs.csv",
                "--level",
                "1",
                "--data",
                "syn/trials.csv",
                "--levels",
                "3",
            ],
        ),
    ];
    for (name, args) in &runs {
        let mut a = args.clone();
        a.extend(["--out-dir", name, "--threads", "1"]);
        cli(&a, w);
    }

    let mut checked = 0;
    let mut mismatches = Vec::new();
    let dirs = [
        "syn",
        "probs",
        "fit_happy",
        "fit_sad",
        "sim_exact",
        "sim_diffusion",
        "reconstruct",
        "mixture",
    ];
    for dir in dirs {
        let original = read_tree(&w.join(dir));
        for threads in ["1", "4", "8"] {
            let target = format!("replay_{dir}_{threads}");
            cli(
                &[
                    "replay",
                    "--manifest",
                    &format!("{dir}/manifest.json"),
                    "--out-dir",
                    &target,
                    "--threads",
                    threads,
                ],
                w,
            );
            let replayed = read_tree(&w.join(&target));
            if replayed != original {
                mismatches.push(format!("{dir} with {threads} threads"));
            }
            checked += 1;
        }
    }
    let pass = mismatches.is_empty();
    report(
        9,
        pass,
        &format!(
            "{checked} replays of {} commands at 1/4/8 threads; mismatches: {}",
            dirs.len(),
            if pass {
                "none".to_string()
            } else {
                mismatches.join(", ")
            }
        ),
    );
    assert!(pass);
}
