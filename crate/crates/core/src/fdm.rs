//! Two-step semi-implicit finite difference scheme for the reformulated
//! KGZ system on a bounded interval with homogeneous Dirichlet boundary.
//!
//! Unknowns are the field `E` and the corrected density `F = N + E^2 - G`,
//! where `G` is the initial-layer wave handled exactly by
//! [`InitialLayerData`]. Each step performs one tridiagonal solve for
//! `E^{k+1}` followed by one for `F^{k+1}` (the `F` right-hand side needs
//! `E^{k+1}`). The stencil is symmetric in `k-1 <-> k+1`, so the same update
//! run with swapped levels steps backwards in time.

use std::fmt;
use std::sync::Arc;

use log::warn;

use crate::error::{KgzError, Result};
use crate::layer::{check_eps, InitialLayerData};
use crate::mesh::{diff_second, inner, norms, solve_poisson_dirichlet, Grid1D, GridFn, Tridiagonal};

/// Tolerance used to decide whether a time is an integer multiple of `tau`.
pub(crate) fn step_index(t: f64, tau: f64) -> Option<usize> {
    let r = t / tau;
    let k = r.round();
    if k >= 0.0 && (r - k).abs() <= 1e-9 * k.max(1.0) {
        Some(k as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct KgzParams {
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub grid: Grid1D,
    pub tau: f64,
    pub t_final: f64,
}

impl KgzParams {
    pub fn new(eps: f64, alpha: f64, beta: f64, grid: Grid1D, tau: f64, t_final: f64) -> Result<Self> {
        check_eps(eps)?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(KgzError::Parameter(format!("tau must be positive, got {tau}")));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(KgzError::Parameter(format!("final time must be positive, got {t_final}")));
        }
        if step_index(t_final, tau).is_none() {
            let k = (t_final / tau).ceil();
            return Err(KgzError::Parameter(format!(
                "T={t_final} is not an integer multiple of tau={tau}; nearest admissible tau is {}",
                t_final / k
            )));
        }
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(KgzError::Parameter("non-finite incompatibility exponents".into()));
        }
        Ok(Self {
            eps,
            alpha,
            beta,
            grid,
            tau,
            t_final,
        })
    }

    /// Number of time steps `K = T / tau`.
    pub fn steps(&self) -> usize {
        step_index(self.t_final, self.tau).expect("validated in KgzParams::new")
    }

    pub fn with_grid(&self, grid: Grid1D) -> Self {
        Self { grid, ..self.clone() }
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.eps, self.alpha, self.beta, self.grid.clone(), tau, self.t_final)
    }

    pub fn with_final_time(&self, t_final: f64) -> Result<Self> {
        Self::new(self.eps, self.alpha, self.beta, self.grid.clone(), self.tau, t_final)
    }
}

pub type Sampler = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Initial data `E(0) = E0`, `E_t(0) = E1` and the incompatibility profiles
/// `w0`, `w1` entering `N(0) = -E0^2 + eps^alpha w0`, `N_t(0) = -2 E0 E1 + eps^beta w1`.
#[derive(Clone)]
pub struct InitialData {
    pub e0: Sampler,
    pub e1: Sampler,
    pub w0: Sampler,
    pub w1: Sampler,
}

impl fmt::Debug for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("InitialData { .. }")
    }
}

impl InitialData {
    pub fn new(
        e0: impl Fn(f64) -> f64 + Send + Sync + 'static,
        e1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        w0: impl Fn(f64) -> f64 + Send + Sync + 'static,
        w1: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            e0: Arc::new(e0),
            e1: Arc::new(e1),
            w0: Arc::new(w0),
            w1: Arc::new(w1),
        }
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, |_| 0.0, |_| 0.0, |_| 0.0)
    }

    pub fn sample(&self, grid: &Grid1D) -> SampledData {
        SampledData {
            e0: GridFn::sample(grid, &*self.e0),
            e1: GridFn::sample(grid, &*self.e1),
            w0: GridFn::sample(grid, &*self.w0),
            w1: GridFn::sample(grid, &*self.w1),
        }
    }
}

/// Initial data evaluated at the grid nodes, boundary hard-zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledData {
    pub e0: GridFn,
    pub e1: GridFn,
    pub w0: GridFn,
    pub w1: GridFn,
}

impl SampledData {
    pub fn layer(&self, params: &KgzParams) -> Result<InitialLayerData> {
        InitialLayerData::prepare(&params.grid, params.eps, params.alpha, params.beta, &self.w0, &self.w1)
    }

    pub(crate) fn check(&self, grid: &Grid1D) -> Result<()> {
        for (name, v) in [("E0", &self.e0), ("E1", &self.e1), ("w0", &self.w0), ("w1", &self.w1)] {
            if v.len() != grid.cells() + 1 {
                return Err(KgzError::Structural(format!(
                    "initial {name} has {} nodes, grid has {}",
                    v.len(),
                    grid.cells() + 1
                )));
            }
        }
        Ok(())
    }
}

/// Two consecutive time levels of `(E, F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KgzState {
    k: usize,
    tau: f64,
    e_prev: GridFn,
    e_curr: GridFn,
    f_prev: GridFn,
    f_curr: GridFn,
}

impl KgzState {
    pub fn new(k: usize, tau: f64, e_prev: GridFn, e_curr: GridFn, f_prev: GridFn, f_curr: GridFn) -> Result<Self> {
        if k < 1 {
            return Err(KgzError::Parameter("state level must be >= 1".into()));
        }
        let n = e_prev.len();
        if [e_curr.len(), f_prev.len(), f_curr.len()].iter().any(|&l| l != n) {
            return Err(KgzError::Structural("state fields have different lengths".into()));
        }
        Ok(Self {
            k,
            tau,
            e_prev,
            e_curr,
            f_prev,
            f_curr,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `t_k = k * tau`.
    pub fn t(&self) -> f64 {
        self.k as f64 * self.tau
    }

    pub fn t_prev(&self) -> f64 {
        (self.k - 1) as f64 * self.tau
    }

    pub fn e_prev(&self) -> &GridFn {
        &self.e_prev
    }

    pub fn e_curr(&self) -> &GridFn {
        &self.e_curr
    }

    pub fn f_prev(&self) -> &GridFn {
        &self.f_prev
    }

    pub fn f_curr(&self) -> &GridFn {
        &self.f_curr
    }
}

/// `(E_tt(0), F_tt(0))` at the nodes, with the spatial second derivative of
/// `E0` replaced by its second difference.
pub fn initial_accelerations(params: &KgzParams, data: &SampledData) -> Result<(GridFn, GridFn)> {
    data.check(&params.grid)?;
    let ett = e_acceleration(params, &data.e0, Some(&data.w0))?;
    let e0 = data.e0.values();
    let ftt = GridFn::zeroed_boundary(
        (0..e0.len())
            .map(|j| 2.0 * data.e1[j] * data.e1[j] + 2.0 * e0[j] * ett[j])
            .collect(),
    );
    Ok((ett, ftt))
}

/// `dxx E0 - E0 - N0 E0` with `N0 = -E0^2 + eps^alpha w0`, or `N0 = -E0^2` without `w0`.
pub(crate) fn e_acceleration(params: &KgzParams, e0: &GridFn, w0: Option<&GridFn>) -> Result<GridFn> {
    let ea = params.eps.powf(params.alpha);
    let lap = diff_second(e0, &params.grid)?;
    Ok(GridFn::zeroed_boundary(
        (0..e0.len())
            .map(|j| {
                let n0 = match w0 {
                    Some(w) => -e0[j] * e0[j] + ea * w[j],
                    None => -e0[j] * e0[j],
                };
                lap[j] - e0[j] - n0 * e0[j]
            })
            .collect(),
    ))
}

/// Levels 0 and 1: `E^0 = E0`, `F^0 = 0`, `E^1`, `F^1` from a second-order Taylor expansion.
pub fn init_first_steps(params: &KgzParams, data: &SampledData, layer: &InitialLayerData) -> Result<KgzState> {
    check_layer(params, layer)?;
    let (ett, ftt) = initial_accelerations(params, data)?;
    let tau = params.tau;
    let half_tau2 = 0.5 * tau * tau;
    let e1 = GridFn::zeroed_boundary(
        (0..data.e0.len())
            .map(|j| data.e0[j] + tau * data.e1[j] + half_tau2 * ett[j])
            .collect(),
    );
    let f1 = ftt.scale(half_tau2);
    KgzState::new(1, tau, data.e0.clone(), e1, GridFn::zeros(&params.grid), f1)
}

fn check_layer(params: &KgzParams, layer: &InitialLayerData) -> Result<()> {
    if layer.grid() != &params.grid {
        return Err(KgzError::Structural("layer and parameters use different grids".into()));
    }
    if layer.eps() != params.eps {
        return Err(KgzError::Structural(format!(
            "layer built for eps={}, parameters have eps={}",
            layer.eps(),
            params.eps
        )));
    }
    Ok(())
}

/// Solves the implicit `E` update centred at `center`:
///
/// ```text
/// [1/tau^2 + c/2] X - (1/2) dxx X = (2 center - other)/tau^2 + (1/2)(dxx - c) other
/// ```
///
/// `c` holds the interior values of the potential coefficient. With
/// `other = E^{k-1}` the result is `E^{k+1}`, and vice versa.
pub(crate) fn implicit_e_update(
    grid: &Grid1D,
    tau: f64,
    c: &[f64],
    center: &GridFn,
    other: &GridFn,
) -> Result<GridFn> {
    let inv_tau2 = 1.0 / (tau * tau);
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let n = grid.interior();
    let mut diag = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    let ce = center.values();
    let ot = other.values();
    for i in 0..n {
        let j = i + 1;
        let margin = inv_tau2 + 0.5 * c[i];
        if !(margin > 0.0) {
            return Err(KgzError::Stability { j, c: c[i], tau });
        }
        diag.push(margin + inv_h2);
        let lap_other = (ot[j + 1] - 2.0 * ot[j] + ot[j - 1]) * inv_h2;
        rhs.push((2.0 * ce[j] - ot[j]) * inv_tau2 + 0.5 * (lap_other - c[i] * ot[j]));
    }
    let system = Tridiagonal::symmetric(diag, -0.5 * inv_h2)?;
    Ok(GridFn::from_interior(&system.solve(&rhs)?))
}

/// Solves the implicit `F` update centred at `f_center`, with the source
/// `dtt(E^2)` formed from `e_other`, `e_center`, `e_new`.
#[allow(clippy::too_many_arguments)]
fn implicit_f_update(
    grid: &Grid1D,
    tau: f64,
    eps: f64,
    f_center: &GridFn,
    f_other: &GridFn,
    e_other: &GridFn,
    e_center: &GridFn,
    e_new: &GridFn,
) -> Result<GridFn> {
    let inv_tau2 = 1.0 / (tau * tau);
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let k = 0.5 * inv_h2 / (eps * eps);
    let n = grid.interior();
    let fc = f_center.values();
    let fo = f_other.values();
    let rhs: Vec<f64> = (1..=n)
        .map(|j| {
            let lap_other = fo[j + 1] - 2.0 * fo[j] + fo[j - 1];
            let e2 = (e_new[j] * e_new[j] - 2.0 * e_center[j] * e_center[j] + e_other[j] * e_other[j]) * inv_tau2;
            (2.0 * fc[j] - fo[j]) * inv_tau2 + k * lap_other + e2
        })
        .collect();
    let system = Tridiagonal::symmetric(vec![inv_tau2 + 2.0 * k; n], -k)?;
    Ok(GridFn::from_interior(&system.solve(&rhs)?))
}

/// Potential coefficient `c_j = 1 - E_j^2 + F_j + H_j` at interior nodes.
fn kgz_coefficient(e: &GridFn, f: &GridFn, h: &GridFn) -> Vec<f64> {
    e.interior()
        .iter()
        .zip(f.interior())
        .zip(h.interior())
        .map(|((&e, &f), &h)| 1.0 - e * e + f + h)
        .collect()
}

/// Advances from levels `(center - 1, center)` to `center + 1`, or from
/// `(center + 1, center)` to `center - 1`; both read the same stencil.
fn advance(
    params: &KgzParams,
    layer: &InitialLayerData,
    t_center: f64,
    e_center: &GridFn,
    e_other: &GridFn,
    f_center: &GridFn,
    f_other: &GridFn,
) -> Result<(GridFn, GridFn)> {
    let grid = &params.grid;
    let h = layer.eval_h(t_center, params.tau)?;
    let c = kgz_coefficient(e_center, f_center, &h);
    let e_new = implicit_e_update(grid, params.tau, &c, e_center, e_other)?;
    let f_new = implicit_f_update(grid, params.tau, params.eps, f_center, f_other, e_other, e_center, &e_new)?;
    Ok((e_new, f_new))
}

/// One step `k -> k + 1`.
pub fn step(state: &KgzState, params: &KgzParams, layer: &InitialLayerData) -> Result<KgzState> {
    check_state(state, params)?;
    let (e_next, f_next) = advance(
        params,
        layer,
        state.t(),
        &state.e_curr,
        &state.e_prev,
        &state.f_curr,
        &state.f_prev,
    )?;
    Ok(KgzState {
        k: state.k + 1,
        tau: state.tau,
        e_prev: state.e_curr.clone(),
        e_curr: e_next,
        f_prev: state.f_curr.clone(),
        f_curr: f_next,
    })
}

/// One reverse step `k -> k - 1`: recovers level `k - 2` from levels `k - 1`, `k`
/// by running the stencil centred at `k - 1` backwards. Requires `k >= 2`.
pub fn step_back(state: &KgzState, params: &KgzParams, layer: &InitialLayerData) -> Result<KgzState> {
    check_state(state, params)?;
    if state.k < 2 {
        return Err(KgzError::Parameter("cannot step back below level 1".into()));
    }
    let (e_before, f_before) = advance(
        params,
        layer,
        state.t_prev(),
        &state.e_prev,
        &state.e_curr,
        &state.f_prev,
        &state.f_curr,
    )?;
    Ok(KgzState {
        k: state.k - 1,
        tau: state.tau,
        e_prev: e_before,
        e_curr: state.e_prev.clone(),
        f_prev: f_before,
        f_curr: state.f_prev.clone(),
    })
}

fn check_state(state: &KgzState, params: &KgzParams) -> Result<()> {
    if state.e_curr.len() != params.grid.cells() + 1 {
        return Err(KgzError::Structural(format!(
            "state has {} nodes, grid has {}",
            state.e_curr.len(),
            params.grid.cells() + 1
        )));
    }
    if state.tau != params.tau {
        return Err(KgzError::Structural("state was produced with a different tau".into()));
    }
    Ok(())
}

/// `N = F - E^2 + G(t)` for one time level.
pub fn recover_n_at(e: &GridFn, f: &GridFn, t: f64, layer: &InitialLayerData) -> Result<GridFn> {
    let g = layer.eval_g(t)?;
    if g.len() != e.len() || f.len() != e.len() {
        return Err(KgzError::Structural("N recovery on mismatched grids".into()));
    }
    Ok(GridFn::zeroed_boundary(
        (0..e.len()).map(|j| f[j] - e[j] * e[j] + g[j]).collect(),
    ))
}

/// `N^k` for the current level of `state`.
pub fn recover_n(state: &KgzState, layer: &InitialLayerData) -> Result<GridFn> {
    recover_n_at(&state.e_curr, &state.f_curr, state.t(), layer)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    pub t: f64,
    pub e: GridFn,
    pub f: GridFn,
    pub n: GridFn,
}

/// Runs the scheme from the initial data through `K = T / tau` steps,
/// calling `visit` on every state (levels `1..=K`).
pub fn drive(
    params: &KgzParams,
    data: &SampledData,
    layer: &InitialLayerData,
    mut visit: impl FnMut(&KgzState) -> Result<()>,
) -> Result<KgzState> {
    let state = init_first_steps(params, data, layer)?;
    visit(&state)?;
    continue_run(state, params, layer, params.steps(), visit)
}

/// Continues stepping `state` up to level `until` (inclusive), visiting each new state.
pub fn continue_run(
    mut state: KgzState,
    params: &KgzParams,
    layer: &InitialLayerData,
    until: usize,
    mut visit: impl FnMut(&KgzState) -> Result<()>,
) -> Result<KgzState> {
    while state.k < until {
        state = step(&state, params, layer)?;
        visit(&state)?;
    }
    Ok(state)
}

/// Maps requested snapshot times to step indices.
pub(crate) fn snapshot_indices(times: &[f64], tau: f64, steps: usize) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| match step_index(t, tau) {
            Some(k) if k <= steps => Ok(k),
            Some(_) => Err(KgzError::Parameter(format!(
                "snapshot time {t} lies beyond T={}",
                steps as f64 * tau
            ))),
            None => {
                let lo = (t / tau).floor().max(0.0) * tau;
                let hi = (t / tau).ceil() * tau;
                Err(KgzError::Parameter(format!(
                    "snapshot time {t} is not a multiple of tau={tau}; nearest aligned times are {lo} and {hi}"
                )))
            }
        })
        .collect()
}

/// Full run returning snapshots at the requested times (which must be
/// multiples of `tau` in `[0, T]`), in the order requested.
pub fn run(params: &KgzParams, data: &InitialData, snapshot_times: &[f64]) -> Result<Vec<Snapshot>> {
    let sampled = data.sample(&params.grid);
    let layer = sampled.layer(params)?;
    run_sampled(params, &sampled, &layer, snapshot_times)
}

pub fn run_sampled(
    params: &KgzParams,
    data: &SampledData,
    layer: &InitialLayerData,
    snapshot_times: &[f64],
) -> Result<Vec<Snapshot>> {
    let wanted = snapshot_indices(snapshot_times, params.tau, params.steps())?;
    let mut taken: Vec<Option<Snapshot>> = vec![None; wanted.len()];
    drive(params, data, layer, |state| {
        if state.k == 1 {
            for (slot, &k) in taken.iter_mut().zip(&wanted) {
                if k == 0 {
                    let n = recover_n_at(&state.e_prev, &state.f_prev, 0.0, layer)?;
                    *slot = Some(Snapshot {
                        k: 0,
                        t: 0.0,
                        e: state.e_prev.clone(),
                        f: state.f_prev.clone(),
                        n,
                    });
                }
            }
        }
        if wanted.contains(&state.k) {
            let n = recover_n(state, layer)?;
            for (slot, &k) in taken.iter_mut().zip(&wanted) {
                if k == state.k {
                    *slot = Some(Snapshot {
                        k,
                        t: state.t(),
                        e: state.e_curr.clone(),
                        f: state.f_curr.clone(),
                        n: n.clone(),
                    });
                }
            }
        }
        Ok(())
    })?;
    Ok(taken.into_iter().map(|s| s.expect("every index is visited")).collect())
}

/// Discrete energy between levels `k - 1` and `k`:
///
/// ```text
/// |dt+ E|^2 + avg(|dx+ E|^2 + |E|^2 + (1/2)|N|^2 + (N, E^2)) + (eps^2/2)|dx+ phi|^2
/// ```
///
/// with `-dxx phi = -dt+ N`. A monitored diagnostic; the scheme does not
/// conserve it exactly.
pub fn compute_energy_kgz(state: &KgzState, layer: &InitialLayerData, params: &KgzParams) -> Result<f64> {
    let grid = &params.grid;
    let tau = params.tau;
    let n_prev = recover_n_at(&state.e_prev, &state.f_prev, state.t_prev(), layer)?;
    let n_curr = recover_n(state, layer)?;
    let de = state.e_curr.zip_with(&state.e_prev, |a, b| (a - b) / tau)?;
    let dn = n_prev.zip_with(&n_curr, |a, b| (a - b) / tau)?;
    let phi = solve_poisson_dirichlet(&dn, grid)?;

    let level = |e: &GridFn, n: &GridFn| -> Result<f64> {
        let ne = norms(e, grid)?;
        let e2 = e.map(|v| v * v);
        Ok(ne.h1_semi.powi(2) + ne.l2.powi(2) + 0.5 * norms(n, grid)?.l2.powi(2) + inner(n, &e2, grid)?)
    };
    let kinetic = norms(&de, grid)?.l2.powi(2);
    let potential = 0.5 * (level(&state.e_prev, &n_prev)? + level(&state.e_curr, &n_curr)?);
    let acoustic = 0.5 * params.eps * params.eps * norms(&phi, grid)?.h1_semi.powi(2);
    Ok(kinetic + potential + acoustic)
}

/// Scaling constants mapping the physical system to dimensionless form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub eps: f64,
    pub t_s: f64,
    pub x_s: f64,
    pub e_s: f64,
    pub n_s: f64,
}

/// `t_s = 1/omega_p`, `x_s = sqrt(3) v0 / omega_p`, `E_s = 2 c_s sqrt(m N0 / (n0 eps0))`,
/// `N_s = 1` and `eps = sqrt(3) v0 / c_s`.
pub fn nondimensionalize(v0: f64, omega_p: f64, c_s: f64, n0: f64, eps0: f64, m: f64, big_n0: f64) -> Result<Scales> {
    for (name, v) in [
        ("v0", v0),
        ("omega_p", omega_p),
        ("c_s", c_s),
        ("n0", n0),
        ("eps0", eps0),
        ("m", m),
        ("N0", big_n0),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(KgzError::Parameter(format!("{name} must be positive, got {v}")));
        }
    }
    let sqrt3 = 3f64.sqrt();
    let eps = sqrt3 * v0 / c_s;
    if eps > 1.0 {
        warn!("eps = {eps} > 1: thermal velocity exceeds the subsonic scaling range");
    }
    Ok(Scales {
        eps,
        t_s: 1.0 / omega_p,
        x_s: sqrt3 * v0 / omega_p,
        e_s: 2.0 * c_s * (m * big_n0 / (n0 * eps0)).sqrt(),
        n_s: 1.0,
    })
}
