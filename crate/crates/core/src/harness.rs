//! Experiment driver: initial-data presets, domain truncation, fine-grid
//! reference runs, error metrics, convergence sweeps and their CSV tables.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KgzError, Result};
use crate::fdm::{run_sampled, InitialData, KgzParams, Snapshot};
use crate::layer::check_eps;
use crate::limit::{run_limit_pair, LimitMetrics};
use crate::mesh::{norms, Grid1D, GridFn};

pub const PRESETS: [&str; 2] = ["gauss_sech", "bump"];

/// Smallest eps accepted without the paper-scale flag.
pub const DESK_EPS_FLOOR: f64 = 1.0 / 64.0;

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

fn bump_phi(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for `x <= 0`, 1 for `x >= 1`.
pub fn smooth_step(x: f64) -> f64 {
    let a = bump_phi(x);
    let b = bump_phi(1.0 - x);
    a / (a + b)
}

pub fn preset_initial_data(name: &str) -> Result<InitialData> {
    let psi = smooth_step;
    match name {
        "gauss_sech" => Ok(InitialData::new(
            |x| (-x * x).exp() * x.sin(),
            |x| sech(0.5 * x * x) * x.cos(),
            |x| sech(x * x) * (3.0 * x).cos(),
            |x| sech(x * x) * (4.0 * x).sin(),
        )),
        "bump" => Ok(InitialData::new(
            move |x| 0.5 * psi((x + 15.0) / 8.0) * psi((15.0 - x) / 7.0) * (0.5 * x).cos(),
            move |x| 0.5 * psi((x + 10.0) / 5.0) * psi((10.0 - x) / 5.0) * (0.5 * x).sin(),
            move |x| psi((x + 18.0) / 10.0) * psi((18.0 - x) / 9.0) * (2.0 * x + std::f64::consts::FRAC_PI_6).sin(),
            |x| (-x * x / 3.0).exp() * (2.0 * x).sin(),
        )),
        other => Err(KgzError::Parameter(format!(
            "unknown preset '{other}'; available: {}",
            PRESETS.join(", ")
        ))),
    }
}

/// Incompatibility exponents of the initial density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Case {
    /// `alpha = 1`, `beta = 0`.
    I,
    /// `alpha = 0`, `beta = -1`.
    II,
    Custom { alpha: f64, beta: f64 },
}

impl Case {
    pub fn alpha(&self) -> f64 {
        match self {
            Case::I => 1.0,
            Case::II => 0.0,
            Case::Custom { alpha, .. } => *alpha,
        }
    }

    pub fn beta(&self) -> f64 {
        match self {
            Case::I => 0.0,
            Case::II => -1.0,
            Case::Custom { beta, .. } => *beta,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Case::I => "I".into(),
            Case::II => "II".into(),
            Case::Custom { alpha, beta } => format!("custom(alpha={alpha},beta={beta})"),
        }
    }

    /// Parses `I`, `II` or `custom` (the latter needs both exponents).
    pub fn parse(name: &str, alpha: Option<f64>, beta: Option<f64>) -> Result<Self> {
        match name {
            "I" | "1" => Ok(Case::I),
            "II" | "2" => Ok(Case::II),
            "custom" => match (alpha, beta) {
                (Some(alpha), Some(beta)) => Ok(Case::Custom { alpha, beta }),
                _ => Err(KgzError::Parameter("case custom needs --alpha and --beta".into())),
            },
            other => Err(KgzError::Parameter(format!("unknown case '{other}'; use I, II or custom"))),
        }
    }
}

/// Truncated domain `[-30 - 1/eps, 30 + 1/eps]`.
pub fn domain_for_eps(eps: f64) -> Result<(f64, f64)> {
    check_eps(eps)?;
    let half = 30.0 + 1.0 / eps;
    Ok((-half, half))
}

/// Rejects eps below the desk-scale floor unless `paper_scale`.
pub fn check_eps_scale(eps: f64, paper_scale: bool) -> Result<()> {
    check_eps(eps)?;
    if eps > 1.0 {
        return Err(KgzError::Parameter(format!("eps must lie in (0, 1], got {eps}")));
    }
    if !paper_scale && eps < DESK_EPS_FLOOR * (1.0 - 1e-12) {
        return Err(KgzError::Parameter(format!(
            "eps = {eps} is below the desk-scale floor {DESK_EPS_FLOOR}; pass --paper-scale to allow it"
        )));
    }
    Ok(())
}

/// Largest step not exceeding `step` that divides `length` into whole pieces.
pub fn fit_step(length: f64, step: f64) -> (f64, usize) {
    let r = length / step;
    let n = if (r - r.round()).abs() <= 1e-9 * r.round().max(1.0) {
        r.round()
    } else {
        r.ceil()
    };
    (length / n, n as usize)
}

/// Grid on the eps-dependent domain with spacing `h` (reduced to fit if needed).
pub fn grid_for(eps: f64, h: f64) -> Result<Grid1D> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(KgzError::Parameter(format!("h must be positive, got {h}")));
    }
    let (a, b) = domain_for_eps(eps)?;
    let (h_fit, m) = fit_step(b - a, h);
    if h_fit != h && ((h_fit - h) / h).abs() > 1e-12 {
        info!("h adjusted from {h} to {h_fit} to fit [{a}, {b}]");
    }
    Grid1D::new(a, b, m)
}

/// Takes every `factor`-th node of a fine-grid function.
pub fn restrict(u: &GridFn, factor: usize) -> Result<GridFn> {
    if factor == 0 || (u.len() - 1) % factor != 0 {
        return Err(KgzError::Parameter(format!(
            "cannot restrict {} cells by factor {factor}",
            u.len() - 1
        )));
    }
    GridFn::new(u.values().iter().step_by(factor).copied().collect())
}

fn check_factor(name: &str, f: usize) -> Result<()> {
    if f == 0 || !f.is_power_of_two() {
        return Err(KgzError::Parameter(format!("{name} refinement factor must be a power of two, got {f}")));
    }
    Ok(())
}

/// Runs the scheme on the nested grid `h / refine_space` with step
/// `tau / refine_time` and injects the snapshots back onto the coarse nodes.
pub fn reference_solution(
    params: &KgzParams,
    data: &InitialData,
    refine_space: usize,
    refine_time: usize,
    times: &[f64],
) -> Result<Vec<Snapshot>> {
    check_factor("space", refine_space)?;
    check_factor("time", refine_time)?;
    let fine = params
        .with_grid(params.grid.refined(refine_space)?)
        .with_tau(params.tau / refine_time as f64)?;
    let sampled = data.sample(&fine.grid);
    let layer = sampled.layer(&fine)?;
    let snaps = run_sampled(&fine, &sampled, &layer, times)?;
    snaps
        .into_iter()
        .map(|s| {
            Ok(Snapshot {
                k: s.k / refine_time,
                t: s.t,
                e: restrict(&s.e, refine_space)?,
                f: restrict(&s.f, refine_space)?,
                n: restrict(&s.n, refine_space)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPair {
    pub e_err: f64,
    pub n_err: f64,
}

/// Relative errors `(|e| + |dx+ e|) / (|E| + |dx+ E|)` and `|n| / |N|`
/// against the reference snapshot, in discrete norms on `grid`.
pub fn error_metrics(numeric: &Snapshot, reference: &Snapshot, grid: &Grid1D) -> Result<ErrorPair> {
    if (numeric.t - reference.t).abs() > 1e-9 * numeric.t.abs().max(1.0) {
        return Err(KgzError::Structural(format!(
            "comparing snapshots at t={} and t={}",
            numeric.t, reference.t
        )));
    }
    let de = numeric.e.zip_with(&reference.e, |a, b| a - b)?;
    let dn = numeric.n.zip_with(&reference.n, |a, b| a - b)?;
    let e_den = norms(&reference.e, grid)?.h1();
    let n_den = norms(&reference.n, grid)?.l2;
    if e_den == 0.0 || n_den == 0.0 {
        return Err(KgzError::Degenerate(format!(
            "reference has zero norm at t={} (|E|={e_den}, |N|={n_den})",
            reference.t
        )));
    }
    Ok(ErrorPair {
        e_err: norms(&de, grid)?.h1() / e_den,
        n_err: norms(&dn, grid)?.l2 / n_den,
    })
}

/// `log2(coarse / fine)`; `None` unless both errors are positive and finite.
pub fn convergence_rate(coarse_err: f64, fine_err: f64) -> Option<f64> {
    (coarse_err > 0.0 && fine_err > 0.0 && coarse_err.is_finite() && fine_err.is_finite())
        .then(|| (coarse_err / fine_err).log2())
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    Spatial,
    Temporal,
    EpsLimit,
}

impl FromStr for SweepMode {
    type Err = KgzError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(SweepMode::Spatial),
            "temporal" => Ok(SweepMode::Temporal),
            "eps-limit" | "eps_limit" => Ok(SweepMode::EpsLimit),
            other => Err(KgzError::Parameter(format!(
                "unknown sweep mode '{other}'; use spatial, temporal or eps-limit"
            ))),
        }
    }
}

impl SweepMode {
    pub fn label(&self) -> &'static str {
        match self {
            SweepMode::Spatial => "spatial",
            SweepMode::Temporal => "temporal",
            SweepMode::EpsLimit => "eps-limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub mode: SweepMode,
    pub preset: String,
    pub case: Case,
    pub eps_list: Vec<f64>,
    pub h0: f64,
    pub tau0: f64,
    /// Number of resolutions `h0 / 2^i` (or `tau0 / 2^i`), at least 2.
    pub levels: usize,
    pub t_final: f64,
    pub ref_space: usize,
    pub ref_time: usize,
    pub paper_scale: bool,
    pub workers: Option<usize>,
    pub out_path: Option<PathBuf>,
}

impl SweepSpec {
    pub fn new(mode: SweepMode, preset: &str, case: Case, eps_list: Vec<f64>, h0: f64, tau0: f64, levels: usize) -> Self {
        Self {
            mode,
            preset: preset.to_string(),
            case,
            eps_list,
            h0,
            tau0,
            levels,
            t_final: 1.0,
            ref_space: 8,
            ref_time: 16,
            paper_scale: false,
            workers: None,
            out_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        preset_initial_data(&self.preset)?;
        if self.mode != SweepMode::EpsLimit && self.levels < 2 {
            return Err(KgzError::Parameter(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.levels < 1 {
            return Err(KgzError::Parameter("levels must be >= 1".into()));
        }
        if self.eps_list.is_empty() {
            return Err(KgzError::Parameter("empty eps list".into()));
        }
        for &eps in &self.eps_list {
            check_eps_scale(eps, self.paper_scale)?;
        }
        for (name, v) in [("h0", self.h0), ("tau0", self.tau0), ("T", self.t_final)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(KgzError::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        check_factor("space", self.ref_space)?;
        check_factor("time", self.ref_time)?;
        if self.workers == Some(0) {
            return Err(KgzError::Parameter("workers must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub eps: f64,
    pub h: f64,
    pub tau: f64,
    pub t: f64,
    pub e_err: f64,
    pub n_err: f64,
    /// Failure message when the run for this row did not complete.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub row: ErrorRow,
    pub rate_e: Option<f64>,
    pub rate_n: Option<f64>,
}

/// Rows ordered by eps descending, then resolution descending. Rates link
/// each row to the previous row of the same eps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateTable {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<RateRow>,
}

const SWEEP_COLUMNS: &str = "eps,h,tau,t,e_err,n_err,rate_e,rate_n";

pub fn format_float(v: f64) -> String {
    format!("{v:.5e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

impl RateTable {
    /// Builds rates between consecutive rows of each eps group.
    pub fn from_rows(meta: Vec<(String, String)>, mut rows: Vec<ErrorRow>) -> Self {
        rows.sort_by(|a, b| {
            b.eps
                .total_cmp(&a.eps)
                .then(b.h.total_cmp(&a.h))
                .then(b.tau.total_cmp(&a.tau))
        });
        let mut out: Vec<RateRow> = Vec::with_capacity(rows.len());
        for row in rows {
            let (rate_e, rate_n) = match out.last() {
                Some(prev) if prev.row.eps == row.eps && refines_once(&prev.row, &row) => (
                    convergence_rate(prev.row.e_err, row.e_err),
                    convergence_rate(prev.row.n_err, row.n_err),
                ),
                _ => (None, None),
            };
            out.push(RateRow { row, rate_e, rate_n });
        }
        Self { meta, rows: out }
    }

    /// Rows for one eps, coarsest first.
    pub fn group(&self, eps: f64) -> Vec<&RateRow> {
        self.rows.iter().filter(|r| r.row.eps == eps).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        for r in &self.rows {
            if let Some(msg) = &r.row.error {
                let _ = writeln!(
                    s,
                    "# row-error: eps={} h={} tau={}: {}",
                    format_float(r.row.eps),
                    format_float(r.row.h),
                    format_float(r.row.tau),
                    msg.replace('\n', " ")
                );
            }
        }
        let _ = writeln!(s, "{SWEEP_COLUMNS}");
        for r in &self.rows {
            let row = &r.row;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                format_float(row.eps),
                format_float(row.h),
                format_float(row.tau),
                format_float(row.t),
                format_float(row.e_err),
                format_float(row.n_err),
                format_opt(r.rate_e),
                format_opt(r.rate_n)
            );
        }
        s
    }

    /// Parses the output of [`RateTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut errors: Vec<((String, String, String), String)> = Vec::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = &line[1..].trim_start();
            if let Some(rest) = body.strip_prefix("row-error: ") {
                let (key, msg) = rest
                    .split_once(": ")
                    .ok_or_else(|| KgzError::Parameter(format!("bad row-error line: {line}")))?;
                let mut parts = key.split(' ').map(|p| p.split_once('=').map(|(_, v)| v.to_string()));
                let mut next = || parts.next().flatten().unwrap_or_default();
                errors.push(((next(), next(), next()), msg.to_string()));
            } else {
                let (k, v) = body
                    .split_once(": ")
                    .ok_or_else(|| KgzError::Parameter(format!("bad metadata line: {line}")))?;
                meta.push((k.to_string(), v.to_string()));
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| KgzError::Parameter(format!("bad CSV header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.join(",") != SWEEP_COLUMNS {
            return Err(KgzError::Parameter(format!("unexpected CSV columns: {}", header.join(","))));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| KgzError::Parameter(format!("bad number '{s}' in CSV")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| KgzError::Parameter(format!("bad CSV record: {e}")))?;
            let key = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string());
            let error = errors.iter().find(|(k, _)| *k == key).map(|(_, m)| m.clone());
            rows.push(RateRow {
                row: ErrorRow {
                    eps: num(&rec[0])?,
                    h: num(&rec[1])?,
                    tau: num(&rec[2])?,
                    t: num(&rec[3])?,
                    e_err: num(&rec[4])?,
                    n_err: num(&rec[5])?,
                    error,
                },
                rate_e: opt(&rec[6])?,
                rate_n: opt(&rec[7])?,
            });
        }
        Ok(Self { meta, rows })
    }
}

fn refines_once(coarse: &ErrorRow, fine: &ErrorRow) -> bool {
    let halves = |a: f64, b: f64| ((a / b) - 2.0).abs() < 1e-9;
    let same = |a: f64, b: f64| ((a / b) - 1.0).abs() < 1e-9;
    (halves(coarse.h, fine.h) && same(coarse.tau, fine.tau)) || (same(coarse.h, fine.h) && halves(coarse.tau, fine.tau))
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| KgzError::Io(e.to_string()))?;
    Ok(())
}

/// Per-eps study of the KGZ to KG-OP distance.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsLimitRow {
    pub eps: f64,
    pub h: f64,
    pub tau: f64,
    pub max_eta_e: f64,
    pub max_eta_2: f64,
    pub max_eta_inf: f64,
    pub max_f_over_eps: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsLimitTable {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<EpsLimitRow>,
    /// Least-squares slope of `log2 max eta_e` against `log2 eps`.
    pub slope: Option<f64>,
}

impl EpsLimitTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "# slope_eta_e: {}", format_opt(self.slope));
        for r in &self.rows {
            if let Some(msg) = &r.error {
                let _ = writeln!(s, "# row-error: eps={}: {}", format_float(r.eps), msg.replace('\n', " "));
            }
        }
        let _ = writeln!(s, "eps,h,tau,max_eta_e,max_eta_2,max_eta_inf,max_f_over_eps");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                format_float(r.eps),
                format_float(r.h),
                format_float(r.tau),
                format_float(r.max_eta_e),
                format_float(r.max_eta_2),
                format_float(r.max_eta_inf),
                format_float(r.max_f_over_eps)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutput {
    Rates(RateTable),
    EpsLimit(EpsLimitTable),
}

impl SweepOutput {
    pub fn to_csv(&self) -> String {
        match self {
            SweepOutput::Rates(t) => t.to_csv(),
            SweepOutput::EpsLimit(t) => t.to_csv(),
        }
    }
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| KgzError::Parameter(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn base_meta(spec: &SweepSpec, tau: f64) -> Vec<(String, String)> {
    let mut meta = vec![
        ("mode".to_string(), spec.mode.label().to_string()),
        ("preset".to_string(), spec.preset.clone()),
        ("case".to_string(), spec.case.label()),
        ("alpha".to_string(), format_float(spec.case.alpha())),
        ("beta".to_string(), format_float(spec.case.beta())),
        ("T".to_string(), format_float(spec.t_final)),
        ("h0".to_string(), format_float(spec.h0)),
        ("tau0".to_string(), format_float(spec.tau0)),
        ("levels".to_string(), spec.levels.to_string()),
    ];
    match spec.mode {
        SweepMode::Spatial => meta.push(("reference".into(), format!("space x{}", spec.ref_space))),
        SweepMode::Temporal => meta.push(("reference".into(), format!("time x{}", spec.ref_time))),
        SweepMode::EpsLimit => {}
    }
    if tau != spec.tau0 {
        meta.push(("adjusted_tau0".into(), format_float(tau)));
    }
    meta
}

/// Runs a convergence or eps-limit sweep. Failed runs become rows carrying
/// an error message; the sweep itself only fails on invalid input or I/O.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let (tau0, _) = fit_step(spec.t_final, spec.tau0);
    if tau0 != spec.tau0 {
        info!("tau0 adjusted from {} to {tau0} so that T/tau is an integer", spec.tau0);
    }
    let data = preset_initial_data(&spec.preset)?;
    let meta = base_meta(spec, tau0);
    let output = in_pool(spec.workers, || match spec.mode {
        SweepMode::EpsLimit => SweepOutput::EpsLimit(eps_limit_sweep(spec, &data, tau0, meta)),
        _ => SweepOutput::Rates(convergence_sweep(spec, &data, tau0, meta)),
    })?;
    if let Some(path) = &spec.out_path {
        write_atomic(path, &output.to_csv())?;
    }
    Ok(output)
}

struct Job {
    eps: f64,
    level: usize,
}

fn convergence_sweep(spec: &SweepSpec, data: &InitialData, tau0: f64, meta: Vec<(String, String)>) -> RateTable {
    let spatial = spec.mode == SweepMode::Spatial;
    let t = spec.t_final;
    let params_at = |eps: f64, level: usize| -> Result<KgzParams> {
        let scale = (1u64 << level) as f64;
        let (h, tau) = if spatial { (spec.h0 / scale, tau0) } else { (spec.h0, tau0 / scale) };
        KgzParams::new(eps, spec.case.alpha(), spec.case.beta(), grid_for(eps, h)?, tau, t)
    };

    // one reference per eps, refined beyond the finest level
    let finest = spec.levels - 1;
    let references: Vec<Result<Snapshot>> = spec
        .eps_list
        .par_iter()
        .map(|&eps| {
            let p = params_at(eps, finest)?;
            let (rs, rt) = if spatial { (spec.ref_space, 1) } else { (1, spec.ref_time) };
            let fine = p
                .with_grid(p.grid.refined(rs)?)
                .with_tau(p.tau / rt as f64)?;
            info!("reference eps={eps}: M={} tau={}", fine.grid.cells(), fine.tau);
            let sampled = data.sample(&fine.grid);
            let layer = sampled.layer(&fine)?;
            Ok(run_sampled(&fine, &sampled, &layer, &[t])?.remove(0))
        })
        .collect();

    let jobs: Vec<Job> = spec
        .eps_list
        .iter()
        .flat_map(|&eps| (0..spec.levels).map(move |level| Job { eps, level }))
        .collect();
    let rows: Vec<ErrorRow> = jobs
        .par_iter()
        .map(|job| {
            let ei = spec.eps_list.iter().position(|&e| e == job.eps).unwrap();
            let p = params_at(job.eps, job.level);
            let (h, tau) = match &p {
                Ok(p) => (p.grid.h(), p.tau),
                Err(_) => (f64::NAN, f64::NAN),
            };
            let result = (|| -> Result<ErrorPair> {
                let p = p?;
                let reference = references[ei].as_ref().map_err(Clone::clone)?;
                let sampled = data.sample(&p.grid);
                let layer = sampled.layer(&p)?;
                let snap = run_sampled(&p, &sampled, &layer, &[t])?.remove(0);
                let fine_cells = reference.e.len() - 1;
                let factor = fine_cells / p.grid.cells();
                if factor * p.grid.cells() != fine_cells {
                    return Err(KgzError::Parameter("reference grid is not nested".into()));
                }
                let restricted = Snapshot {
                    k: snap.k,
                    t: reference.t,
                    e: restrict(&reference.e, factor)?,
                    f: restrict(&reference.f, factor)?,
                    n: restrict(&reference.n, factor)?,
                };
                error_metrics(&snap, &restricted, &p.grid)
            })();
            match result {
                Ok(err) => ErrorRow {
                    eps: job.eps,
                    h,
                    tau,
                    t,
                    e_err: err.e_err,
                    n_err: err.n_err,
                    error: None,
                },
                Err(e) => ErrorRow {
                    eps: job.eps,
                    h,
                    tau,
                    t,
                    e_err: f64::NAN,
                    n_err: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    RateTable::from_rows(meta, rows)
}

fn eps_limit_sweep(spec: &SweepSpec, data: &InitialData, tau0: f64, meta: Vec<(String, String)>) -> EpsLimitTable {
    let mut rows: Vec<EpsLimitRow> = spec
        .eps_list
        .par_iter()
        .map(|&eps| {
            let run = || -> Result<(KgzParams, LimitMetrics)> {
                let p = KgzParams::new(eps, spec.case.alpha(), spec.case.beta(), grid_for(eps, spec.h0)?, tau0, spec.t_final)?;
                let sampled = data.sample(&p.grid);
                let layer = sampled.layer(&p)?;
                let m = run_limit_pair(&p, &sampled, &layer)?;
                Ok((p, m))
            };
            match run() {
                Ok((p, m)) => EpsLimitRow {
                    eps,
                    h: p.grid.h(),
                    tau: p.tau,
                    max_eta_e: m.max_eta_e(),
                    max_eta_2: m.max_eta_2(),
                    max_eta_inf: m.max_eta_inf(),
                    max_f_over_eps: m.max_f_over_eps(),
                    error: None,
                },
                Err(e) => EpsLimitRow {
                    eps,
                    h: f64::NAN,
                    tau: tau0,
                    max_eta_e: f64::NAN,
                    max_eta_2: f64::NAN,
                    max_eta_inf: f64::NAN,
                    max_f_over_eps: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let ok: Vec<&EpsLimitRow> = rows
        .iter()
        .filter(|r| r.error.is_none() && r.max_eta_e > 0.0)
        .collect();
    let x: Vec<f64> = ok.iter().map(|r| r.eps.log2()).collect();
    let y: Vec<f64> = ok.iter().map(|r| r.max_eta_e.log2()).collect();
    EpsLimitTable {
        meta,
        slope: fit_slope(&x, &y),
        rows,
    }
}

/// Writes one `x,E,F,N` file per snapshot, named `<out>_t<value>.csv`.
pub fn write_snapshots(out: &Path, grid: &Grid1D, snaps: &[Snapshot]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(snaps.len());
    for s in snaps {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(format!("_t{}.csv", s.t));
        let path = out.with_file_name(name);
        let mut text = String::from("x,E,F,N\n");
        for (j, x) in grid.nodes().iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{},{},{}",
                format_float(*x),
                format_float(s.e[j]),
                format_float(s.f[j]),
                format_float(s.n[j])
            );
        }
        write_atomic(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_sech_at_origin() {
        let d = preset_initial_data("gauss_sech").unwrap();
        assert_eq!((d.e0)(0.0), 0.0);
        assert_eq!((d.e1)(0.0), 1.0);
        assert_eq!((d.w0)(0.0), 1.0);
        assert_eq!((d.w1)(0.0), 0.0);
    }

    #[test]
    fn bump_partition_and_support() {
        for i in 1..1000 {
            let x = i as f64 / 1000.0;
            assert!((smooth_step(x) + smooth_step(1.0 - x) - 1.0).abs() < 1e-12);
        }
        assert_eq!(smooth_step(-0.5), 0.0);
        assert_eq!(smooth_step(1.5), 1.0);
        let d = preset_initial_data("bump").unwrap();
        assert_eq!((d.w0)(25.0), 0.0);
        assert_eq!((d.w0)(-25.0), 0.0);
        assert_eq!((d.e0)(20.0), 0.0);
        let g = grid_for(0.25, 0.1).unwrap();
        let s = d.sample(&g);
        assert_eq!(s.w1[0], 0.0);
        assert_eq!(s.w1[g.cells()], 0.0);
    }

    #[test]
    fn unknown_preset_lists_names() {
        match preset_initial_data("nope") {
            Err(KgzError::Parameter(m)) => assert!(m.contains("gauss_sech") && m.contains("bump")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn domains() {
        assert_eq!(domain_for_eps(1.0).unwrap(), (-31.0, 31.0));
        assert_eq!(domain_for_eps(0.25).unwrap(), (-34.0, 34.0));
        assert_eq!(domain_for_eps(1.0 / 16.0).unwrap(), (-46.0, 46.0));
        assert_eq!(domain_for_eps(1.0 / 256.0).unwrap(), (-286.0, 286.0));
        assert!(domain_for_eps(0.0).is_err());
        assert!(domain_for_eps(-1.0).is_err());
    }

    #[test]
    fn desk_floor() {
        assert!(check_eps_scale(1.0 / 64.0, false).is_ok());
        assert!(check_eps_scale(1.0 / 256.0, false).is_err());
        assert!(check_eps_scale(1.0 / 256.0, true).is_ok());
        assert!(check_eps_scale(2.0, true).is_err());
    }

    #[test]
    fn step_fitting() {
        assert_eq!(fit_step(1.0, 0.05 / 32.0).1, 640);
        assert_eq!(fit_step(62.0, 0.2).1, 310);
        let (h, n) = fit_step(1.0, 0.3);
        assert_eq!(n, 4);
        assert_eq!(h, 0.25);
    }

    #[test]
    fn rates() {
        assert!((convergence_rate(4e-2, 1e-2).unwrap() - 2.0).abs() < 1e-15);
        assert!((convergence_rate(2e-3, 1e-3).unwrap() - 1.0).abs() < 1e-15);
        assert!((convergence_rate(1.57e-2, 4.05e-3).unwrap() - 1.95).abs() < 5e-3);
        assert_eq!(convergence_rate(0.0, 1e-3), None);
        assert_eq!(convergence_rate(1e-3, -1.0), None);
        assert_eq!(convergence_rate(f64::NAN, 1e-3), None);
    }

    #[test]
    fn slope_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        assert!((fit_slope(&x, &y).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(fit_slope(&[1.0], &[1.0]), None);
    }

    fn snap(e: GridFn, n: GridFn) -> Snapshot {
        Snapshot {
            k: 1,
            t: 1.0,
            f: GridFn::from_interior(&vec![0.0; e.len() - 2]),
            e,
            n,
        }
    }

    #[test]
    fn error_metric_cases() {
        let grid = Grid1D::new(0.0, std::f64::consts::PI, 64).unwrap();
        let mode = GridFn::sample(&grid, f64::sin);
        let r = snap(mode.clone(), mode.clone());
        let same = error_metrics(&r, &r, &grid).unwrap();
        assert_eq!((same.e_err, same.n_err), (0.0, 0.0));
        let pert = snap(mode.scale(1.0 + 1e-3), mode.scale(1.0 + 1e-3));
        let err = error_metrics(&pert, &r, &grid).unwrap();
        assert!((err.e_err - 1e-3).abs() < 1e-6);
        assert!((err.n_err - 1e-3).abs() < 1e-6);
        let z = snap(GridFn::zeros(&grid), GridFn::zeros(&grid));
        assert!(matches!(error_metrics(&r, &z, &grid), Err(KgzError::Degenerate(_))));
    }

    #[test]
    fn restriction() {
        let u = GridFn::new(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 0.0]).unwrap();
        assert_eq!(restrict(&u, 2).unwrap().values(), &[0.0, 2.0, 4.0, 6.0, 0.0]);
        assert_eq!(restrict(&u, 4).unwrap().values(), &[0.0, 4.0, 0.0]);
        assert!(restrict(&u, 3).is_err());
        assert_eq!(restrict(&u, 1).unwrap(), u);
    }

    #[test]
    fn reference_identity_factor() {
        let grid = Grid1D::new(-10.0, 10.0, 100).unwrap();
        let p = KgzParams::new(0.5, 1.0, 0.0, grid, 0.01, 0.1).unwrap();
        let d = preset_initial_data("gauss_sech").unwrap();
        let r = reference_solution(&p, &d, 1, 1, &[0.1]).unwrap();
        let s = crate::fdm::run(&p, &d, &[0.1]).unwrap();
        assert_eq!(r, s);
        assert!(reference_solution(&p, &d, 3, 1, &[0.1]).is_err());
    }

    fn row(eps: f64, h: f64, tau: f64, e: f64, n: f64) -> ErrorRow {
        ErrorRow {
            eps,
            h,
            tau,
            t: 1.0,
            e_err: e,
            n_err: n,
            error: None,
        }
    }

    #[test]
    fn table_rates_and_round_trip() {
        let mut failed = row(0.25, 0.05, 1e-4, f64::NAN, f64::NAN);
        failed.error = Some("stability error: boom".into());
        let table = RateTable::from_rows(
            vec![("preset".into(), "gauss_sech".into())],
            vec![
                row(0.25, 0.1, 1e-4, 4e-3, 8e-3),
                row(1.0, 0.1, 1e-4, 1e-2, 2e-2),
                row(1.0, 0.2, 1e-4, 4e-2, 8e-2),
                row(0.25, 0.2, 1e-4, 1.6e-2, 3.2e-2),
                failed,
            ],
        );
        let eps: Vec<f64> = table.rows.iter().map(|r| r.row.eps).collect();
        assert_eq!(eps, vec![1.0, 1.0, 0.25, 0.25, 0.25]);
        assert_eq!(table.rows[0].rate_e, None);
        assert!((table.rows[1].rate_e.unwrap() - 2.0).abs() < 1e-12);
        assert!((table.rows[3].rate_n.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(table.rows[4].rate_e, None);

        let csv = table.to_csv();
        assert!(csv.contains("eps,h,tau,t,e_err,n_err,rate_e,rate_n\n"));
        assert!(csv.contains("1.00000e0,2.00000e-1,1.00000e-4,1.00000e0,4.00000e-2,8.00000e-2,,\n"));
        let parsed = RateTable::from_csv(&csv).unwrap();
        assert_eq!(parsed.to_csv(), csv);
        assert_eq!(parsed.meta, table.meta);
        assert_eq!(parsed.rows[4].row.error.as_deref(), Some("stability error: boom"));
        for (a, b) in parsed.rows.iter().zip(&table.rows) {
            assert_eq!(a.row.h, b.row.h);
            assert_eq!(a.rate_e.is_some(), b.rate_e.is_some());
        }
    }

    #[test]
    fn atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "b\n");
    }

    #[test]
    fn spec_validation() {
        let mut s = SweepSpec::new(SweepMode::Spatial, "gauss_sech", Case::II, vec![1.0], 0.2, 1e-4, 1);
        assert!(s.validate().is_err());
        s.levels = 2;
        assert!(s.validate().is_ok());
        s.eps_list = vec![1.0 / 256.0];
        assert!(s.validate().is_err());
        s.paper_scale = true;
        assert!(s.validate().is_ok());
        s.preset = "x".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn case_parsing() {
        assert_eq!(Case::parse("I", None, None).unwrap(), Case::I);
        assert_eq!(Case::parse("II", None, None).unwrap().beta(), -1.0);
        assert!(Case::parse("custom", Some(1.0), None).is_err());
        assert_eq!(Case::parse("custom", Some(0.5), Some(0.0)).unwrap().alpha(), 0.5);
        assert!(Case::parse("III", None, None).is_err());
    }

    #[test]
    fn minimal_spatial_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SweepSpec::new(SweepMode::Spatial, "gauss_sech", Case::II, vec![1.0], 0.4, 0.01, 2);
        s.t_final = 0.1;
        s.ref_space = 4;
        s.out_path = Some(dir.path().join("s.csv"));
        let out = run_sweep(&s).unwrap();
        let SweepOutput::Rates(t) = out else { panic!() };
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows[1].rate_e.is_some() && t.rows[0].rate_e.is_none());
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(text, t.to_csv());
        let again = run_sweep(&s).unwrap();
        assert_eq!(again.to_csv(), text);
    }

    #[test]
    fn snapshot_files() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid1D::new(0.0, 1.0, 4).unwrap();
        let z = GridFn::zeros(&grid);
        let s = Snapshot {
            k: 0,
            t: 0.5,
            e: z.clone(),
            f: z.clone(),
            n: z,
        };
        let paths = write_snapshots(&dir.path().join("run"), &grid, &[s]).unwrap();
        assert!(paths[0].ends_with("run_t0.5.csv"));
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("x,E,F,N\n0.00000e0,"));
        assert_eq!(text.lines().count(), 6);
    }
}
