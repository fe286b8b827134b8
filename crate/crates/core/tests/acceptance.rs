//! Acceptance criteria 1-6. Each test prints one PASS/FAIL line to stderr
//! (uncaptured) followed by the measured table.

use std::io::Write;
use std::process::Command;
use std::time::Instant;

use kgz_core::harness::{run_sweep, Case, RateTable, SweepMode, SweepOutput, SweepSpec};

fn report(criterion: u32, title: &str, pass: bool, detail: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "acceptance criterion {criterion} [{}] {title}",
        if pass { "PASS" } else { "FAIL" }
    );
    for line in detail.lines() {
        let _ = writeln!(err, "    {line}");
    }
}

fn rates_table(spec: &SweepSpec) -> RateTable {
    match run_sweep(spec).expect("sweep input is valid") {
        SweepOutput::Rates(t) => t,
        SweepOutput::EpsLimit(_) => unreachable!(),
    }
}

fn in_band(v: Option<f64>, lo: f64, hi: f64) -> bool {
    v.is_some_and(|r| (lo..=hi).contains(&r))
}

#[test]
fn criterion_1_spatial_second_order() {
    let start = Instant::now();
    let mut spec = SweepSpec::new(
        SweepMode::Spatial,
        "gauss_sech",
        Case::II,
        vec![1.0, 0.25, 1.0 / 16.0],
        0.2,
        1e-4,
        4,
    );
    spec.ref_space = 8;
    let table = rates_table(&spec);
    let mut pass = table.rows.iter().all(|r| r.row.error.is_none());
    for r in table.rows.iter().filter(|r| r.row.h < 0.2 - 1e-12) {
        pass &= in_band(r.rate_e, 1.85, 2.15) && in_band(r.rate_n, 1.85, 2.15);
    }
    let first = &table.rows[0];
    assert_eq!((first.row.eps, first.row.h), (1.0, 0.2));
    let ratio = first.row.e_err / 1.57e-2;
    pass &= (1.0 / 3.0..=3.0).contains(&ratio);
    let detail = format!(
        "e_err(eps=1, h=0.2) = {:.3e} (ratio to 1.57e-2: {ratio:.2}); elapsed {:.0?}\n{}",
        first.row.e_err,
        start.elapsed(),
        table.to_csv()
    );
    report(1, "spatial rates in [1.85, 2.15], Case II", pass, &detail);
    assert!(pass, "{detail}");
}

fn temporal_table(eps: f64) -> RateTable {
    let mut spec = SweepSpec::new(SweepMode::Temporal, "gauss_sech", Case::I, vec![eps], 0.005, 0.05, 6);
    spec.ref_time = 16;
    rates_table(&spec)
}

#[test]
fn criterion_2_temporal_uniform_accuracy() {
    let start = Instant::now();
    let eps_small = 1.0 / 16.0;
    let t1 = temporal_table(1.0);
    let t16 = temporal_table(eps_small);

    let ok_rows = |t: &RateTable| t.rows.iter().all(|r| r.row.error.is_none());
    let e_ok = |t: &RateTable| t.rows.iter().skip(1).all(|r| in_band(r.rate_e, 1.85, 2.15));
    let pass_a = ok_rows(&t1) && ok_rows(&t16) && e_ok(&t1) && e_ok(&t16);

    // rate between consecutive steps (2 tau, tau) is attributed to the interval [tau, 2 tau]
    let (band_lo, band_hi) = (eps_small / 2.0, 4.0 * eps_small);
    let dip = t16.rows.iter().skip(1).any(|r| {
        let (lo, hi) = (r.row.tau, 2.0 * r.row.tau);
        hi >= band_lo && lo <= band_hi && in_band(r.rate_n, 0.7, 1.5)
    });
    let recovered = t16
        .rows
        .iter()
        .skip(1)
        .filter(|r| 2.0 * r.row.tau <= eps_small / 8.0 * (1.0 + 1e-12))
        .all(|r| r.rate_n.is_some_and(|v| v >= 1.85));
    let pass_b = dip && recovered;
    let pass_c = t1.rows.iter().skip(1).all(|r| in_band(r.rate_n, 1.85, 2.15));

    let pass = pass_a && pass_b && pass_c;
    let detail = format!(
        "(a) e rates uniform: {pass_a}; (b) n dip in [eps/2, 4 eps]: {dip}, recovery for tau <= eps/8: {recovered}; (c) eps=1 n rates: {pass_c}; elapsed {:.0?}\n{}{}",
        start.elapsed(),
        t1.to_csv(),
        t16.to_csv()
    );
    report(2, "temporal rates, resonance pattern for n at eps=1/16", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_3_tau_squared_over_eps_regime() {
    let start = Instant::now();
    let tau = 0.0125;
    // eps values with tau in [eps/2, 4 eps]
    let eps_list = vec![1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];
    let mut spec = SweepSpec::new(SweepMode::Temporal, "gauss_sech", Case::I, eps_list.clone(), 0.005, tau, 2);
    spec.paper_scale = true;
    spec.ref_time = 16;
    let table = rates_table(&spec);
    let n_at = |eps: f64| {
        table
            .rows
            .iter()
            .find(|r| r.row.eps == eps && (r.row.tau - tau).abs() < 1e-12)
            .map(|r| r.row.n_err)
            .unwrap()
    };
    let ratios: Vec<f64> = eps_list.windows(2).map(|w| n_at(w[1]) / n_at(w[0])).collect();
    let pass = ratios.iter().all(|r| (1.4..=2.6).contains(r));
    let detail = format!(
        "n_err(eps/2)/n_err(eps) at tau={tau}: {ratios:.3?}; elapsed {:.0?}\n{}",
        start.elapsed(),
        table.to_csv()
    );
    report(3, "n_err ratio under eps-halving in [1.4, 2.6]", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_4_eps_limit() {
    let start = Instant::now();
    let eps_list = vec![0.25, 0.125, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let case = Case::Custom { alpha: 0.0, beta: 0.0 };
    let spec = SweepSpec::new(SweepMode::EpsLimit, "bump", case, eps_list, 0.05, 1e-3, 1);
    let SweepOutput::EpsLimit(table) = run_sweep(&spec).unwrap() else {
        unreachable!()
    };
    let slope = table.slope.unwrap_or(f64::NAN);
    let base = table.rows[0].max_f_over_eps;
    let bounded = table
        .rows
        .iter()
        .all(|r| r.error.is_none() && r.max_f_over_eps <= 3.0 * base && r.max_f_over_eps >= base / 3.0);
    let pass = slope >= 0.9 && bounded;
    let detail = format!(
        "slope {slope:.3}, |F|/eps within 3x of eps=1/4 value: {bounded}; elapsed {:.0?}\n{}",
        start.elapsed(),
        table.to_csv()
    );
    report(4, "eta_e = O(eps) and |F|/eps bounded", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_5_property_suite() {
    let start = Instant::now();
    let results = kgz_core::checks::run_property_suite();
    let elapsed = start.elapsed();
    let pass = results.iter().all(|r| r.passed) && elapsed.as_secs() < 60;
    let detail: String = results
        .iter()
        .map(|r| format!("{} {}: {}\n", if r.passed { "ok  " } else { "FAIL" }, r.name, r.detail))
        .chain(std::iter::once(format!("elapsed {elapsed:.1?}")))
        .collect();
    report(5, "property suite", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_6_paper_scale_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ps");
    let run = |paper_scale: bool| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_kgz"));
        cmd.args([
            "solve", "--preset", "gauss_sech", "--case", "II", "--eps", "0.00390625", "--h", "0.2", "--tau", "0.05",
            "--T", "1", "--snapshots", "1",
        ])
        .arg("--out")
        .arg(&out);
        if paper_scale {
            cmd.arg("--paper-scale");
        }
        cmd.output().expect("kgz binary runs")
    };
    let accepted = run(true);
    let rejected = run(false);
    let snapshot = std::fs::read_to_string(dir.path().join("ps_t1.csv")).unwrap_or_default();
    let first_x = snapshot.lines().nth(1).and_then(|l| l.split(',').next()).unwrap_or("");
    let last_x = snapshot.lines().last().and_then(|l| l.split(',').next()).unwrap_or("");
    let finite = snapshot
        .lines()
        .skip(1)
        .flat_map(|l| l.split(','))
        .all(|v| v.parse::<f64>().is_ok_and(f64::is_finite));
    let pass = accepted.status.code() == Some(0)
        && rejected.status.code() == Some(1)
        && first_x.parse::<f64>() == Ok(-286.0)
        && last_x.parse::<f64>() == Ok(286.0)
        && finite;
    let detail = format!(
        "with flag: exit {:?}; without flag: exit {:?}; domain [{first_x}, {last_x}]; finite: {finite}\n{}",
        accepted.status.code(),
        rejected.status.code(),
        String::from_utf8_lossy(&rejected.stderr).trim()
    );
    report(6, "paper-scale eps = 1/256 solve", pass, &detail);
    assert!(pass, "{detail}");
}
