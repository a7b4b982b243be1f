use rtglmm::distributions::{self, DistributionSpec};
use rtglmm::gof::{self, GofReport};

#[test]
fn ks_is_calibrated_under_the_null() {
    let law = DistributionSpec::ig(2.0, 1.0).unwrap();
    let accepted = (0..100)
        .filter(|&s| {
            let x = distributions::sample(&law, 500, 1000 + s).unwrap();
            gof::ks_test(&x, &law).unwrap().1 > 0.01
        })
        .count();
    assert!(accepted >= 98, "{accepted}/100");
}

#[test]
fn null_pvalues_are_roughly_uniform() {
    let law = DistributionSpec::gamma(2.5, 0.4).unwrap();
    let p: Vec<f64> = (0..1000)
        .map(|s| {
            let x = distributions::sample(&law, 500, 5000 + s).unwrap();
            gof::ks_test(&x, &law).unwrap().1
        })
        .collect();
    let below = |t: f64| p.iter().filter(|&&v| v < t).count() as f64 / p.len() as f64;
    assert!(below(0.01) <= 0.03, "{}", below(0.01));
    assert!((0.40..=0.60).contains(&below(0.5)), "{}", below(0.5));
}

#[test]
fn ks_rejects_a_shifted_law() {
    let x = distributions::sample(&DistributionSpec::ig(1.0, 1.0).unwrap(), 500, 3).unwrap();
    let (_, p) = gof::ks_test(&x, &DistributionSpec::ig(2.0, 1.0).unwrap()).unwrap();
    assert!(p < 1e-6);
}

#[test]
fn qq_deviation_discriminates_laws() {
    let own = DistributionSpec::ig(1.0, 1.0).unwrap();
    let other = DistributionSpec::ig(2.0, 1.0).unwrap();
    let x = distributions::sample(&own, 500, 8).unwrap();
    let near = GofReport::new(&x, &own, 30)
        .unwrap()
        .mean_abs_qq_deviation();
    let far = GofReport::new(&x, &other, 30)
        .unwrap()
        .mean_abs_qq_deviation();
    assert!(near < far, "{near} vs {far}");
}

#[test]
fn histogram_converges_to_density() {
    let law = DistributionSpec::gamma(3.5, 1.0).unwrap();
    let l1 = |n: usize| {
        (0..10)
            .map(|s| {
                let x = distributions::sample(&law, n, 40 + s).unwrap();
                gof::density_overlay(&x, &law, 30).unwrap().l1_distance()
            })
            .sum::<f64>()
            / 10.0
    };
    let (small, large) = (l1(500), l1(50_000));
    assert!(large < small, "{small} -> {large}");
}

#[test]
fn report_files_are_consistent() {
    let law = DistributionSpec::ig(1.5, 0.8).unwrap();
    let x = distributions::sample(&law, 400, 2).unwrap();
    let report = GofReport::new(&x, &law, 25).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write_dir(dir.path()).unwrap();

    let qq = std::fs::read_to_string(dir.path().join("qq.csv")).unwrap();
    assert_eq!(qq.lines().count(), 401);
    let density = std::fs::read_to_string(dir.path().join("density.csv")).unwrap();
    assert_eq!(density.lines().count(), 26);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("gof.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 400);
    assert_eq!(
        summary["ks_statistic"].as_f64().unwrap(),
        report.ks_statistic
    );
    let svg = std::fs::read_to_string(dir.path().join("gof.svg")).unwrap();
    assert!(svg.contains("Q-Q") && svg.contains("P-P"));
}
