//! Limiting models as `eps -> 0`: the Klein-Gordon equation with the
//! oscillatory potential `G` (KG-OP) and the plain cubic Klein-Gordon
//! equation (KG), discretised with the same stencil as the `E` part of the
//! KGZ scheme but with `F = 0`. Also the distance metrics between a KGZ run
//! and its KG-OP limit.

use std::collections::VecDeque;

use crate::error::{KgzError, Result};
use crate::fdm::{self, implicit_e_update, KgzParams, KgzState, SampledData};
use crate::layer::InitialLayerData;
use crate::mesh::{norms, Grid1D, GridFn};

#[derive(Debug, Clone, PartialEq)]
pub struct KgState {
    k: usize,
    tau: f64,
    e_prev: GridFn,
    e_curr: GridFn,
}

impl KgState {
    pub fn new(k: usize, tau: f64, e_prev: GridFn, e_curr: GridFn) -> Result<Self> {
        if k < 1 {
            return Err(KgzError::Parameter("state level must be >= 1".into()));
        }
        if e_prev.len() != e_curr.len() {
            return Err(KgzError::Structural("state levels have different lengths".into()));
        }
        Ok(Self { k, tau, e_prev, e_curr })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> f64 {
        self.k as f64 * self.tau
    }

    pub fn e_prev(&self) -> &GridFn {
        &self.e_prev
    }

    pub fn e_curr(&self) -> &GridFn {
        &self.e_curr
    }
}

/// Levels 0 and 1 of the limit model. With the potential the first step uses
/// `N0 = -E0^2 + eps^alpha w0`, otherwise `N0 = -E0^2`.
pub fn init_kg(params: &KgzParams, data: &SampledData, use_potential: bool) -> Result<KgState> {
    data.check(&params.grid)?;
    let w0 = use_potential.then_some(&data.w0);
    let ett = fdm::e_acceleration(params, &data.e0, w0)?;
    let tau = params.tau;
    let half_tau2 = 0.5 * tau * tau;
    let e1 = GridFn::zeroed_boundary(
        (0..data.e0.len())
            .map(|j| data.e0[j] + tau * data.e1[j] + half_tau2 * ett[j])
            .collect(),
    );
    KgState::new(1, tau, data.e0.clone(), e1)
}

fn kg_coefficient(e: &GridFn, h: Option<&GridFn>) -> Vec<f64> {
    match h {
        Some(h) => e
            .interior()
            .iter()
            .zip(h.interior())
            .map(|(&e, &h)| 1.0 - e * e + h)
            .collect(),
        None => e.interior().iter().map(|&e| 1.0 - e * e).collect(),
    }
}

fn kg_advance(
    params: &KgzParams,
    layer: &InitialLayerData,
    use_potential: bool,
    t_center: f64,
    center: &GridFn,
    other: &GridFn,
) -> Result<GridFn> {
    if center.len() != params.grid.cells() + 1 {
        return Err(KgzError::Structural(format!(
            "state has {} nodes, grid has {}",
            center.len(),
            params.grid.cells() + 1
        )));
    }
    let h = if use_potential {
        Some(layer.eval_h(t_center, params.tau)?)
    } else {
        None
    };
    let c = kg_coefficient(center, h.as_ref());
    implicit_e_update(&params.grid, params.tau, &c, center, other)
}

/// One step `k -> k + 1` of KG-OP (`use_potential`) or KG.
pub fn step_kg_op(
    state: &KgState,
    params: &KgzParams,
    layer: &InitialLayerData,
    use_potential: bool,
) -> Result<KgState> {
    let next = kg_advance(params, layer, use_potential, state.t(), &state.e_curr, &state.e_prev)?;
    Ok(KgState {
        k: state.k + 1,
        tau: state.tau,
        e_prev: state.e_curr.clone(),
        e_curr: next,
    })
}

/// Reverse step `k -> k - 1`, requires `k >= 2`.
pub fn step_back_kg_op(
    state: &KgState,
    params: &KgzParams,
    layer: &InitialLayerData,
    use_potential: bool,
) -> Result<KgState> {
    if state.k < 2 {
        return Err(KgzError::Parameter("cannot step back below level 1".into()));
    }
    let t_center = (state.k - 1) as f64 * state.tau;
    let before = kg_advance(params, layer, use_potential, t_center, &state.e_prev, &state.e_curr)?;
    Ok(KgState {
        k: state.k - 1,
        tau: state.tau,
        e_prev: before,
        e_curr: state.e_prev.clone(),
    })
}

/// Runs the limit model through all `K` steps, visiting every state.
pub fn drive_kg(
    params: &KgzParams,
    data: &SampledData,
    layer: &InitialLayerData,
    use_potential: bool,
    mut visit: impl FnMut(&KgState) -> Result<()>,
) -> Result<KgState> {
    let mut state = init_kg(params, data, use_potential)?;
    visit(&state)?;
    while state.k < params.steps() {
        state = step_kg_op(&state, params, layer, use_potential)?;
        visit(&state)?;
    }
    Ok(state)
}

/// Discrete KG energy between levels `k - 1` and `k`:
/// `|dt+ E|^2 + avg(|dx+ E|^2 + |E|^2 - (1/2) sum h E^4)`.
pub fn compute_energy_kg(state: &KgState, grid: &Grid1D) -> Result<f64> {
    let de = state.e_curr.zip_with(&state.e_prev, |a, b| (a - b) / state.tau)?;
    let level = |e: &GridFn| -> Result<f64> {
        let n = norms(e, grid)?;
        let quartic: f64 = e.values().iter().map(|v| v.powi(4)).sum::<f64>() * grid.h();
        Ok(n.h1_semi.powi(2) + n.l2.powi(2) - 0.5 * quartic)
    };
    Ok(norms(&de, grid)?.l2.powi(2) + 0.5 * (level(&state.e_prev)? + level(&state.e_curr)?))
}

/// Per-level distances between a KGZ run and its KG-OP limit:
///
/// * `eta_e = |E - E_op|_{l2} + |E - E_op|_{h1 semi}`
/// * `eta_2 = |F|/eps + |dt F| + |dtt F|` in the discrete `l2` norm
/// * `eta_inf`, the same in the max norm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LimitMetrics {
    pub t: Vec<f64>,
    pub eta_e: Vec<f64>,
    pub eta_2: Vec<f64>,
    pub eta_inf: Vec<f64>,
    /// `|F|_{l2} / eps`, the first term of `eta_2`.
    pub f_over_eps: Vec<f64>,
}

impl LimitMetrics {
    pub fn max_eta_e(&self) -> f64 {
        self.eta_e.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_eta_2(&self) -> f64 {
        self.eta_2.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_eta_inf(&self) -> f64 {
        self.eta_inf.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_f_over_eps(&self) -> f64 {
        self.f_over_eps.iter().copied().fold(0.0, f64::max)
    }
}

/// Streaming accumulator for [`LimitMetrics`]; keeps only a few time levels
/// of `F`. Interior levels use centred differences, the first and last
/// level one-sided second-order ones, so at least four levels are needed.
#[derive(Debug, Clone)]
pub struct LimitTracker {
    grid: Grid1D,
    tau: f64,
    eps: f64,
    head: Vec<GridFn>,
    window: VecDeque<GridFn>,
    levels: usize,
    f_l2: Vec<f64>,
    f_inf: Vec<f64>,
    eta_e: Vec<f64>,
    d_l2: Vec<f64>,
    d_inf: Vec<f64>,
}

impl LimitTracker {
    pub fn new(grid: &Grid1D, tau: f64, eps: f64) -> Self {
        Self {
            grid: grid.clone(),
            tau,
            eps,
            head: Vec::with_capacity(4),
            window: VecDeque::with_capacity(4),
            levels: 0,
            f_l2: Vec::new(),
            f_inf: Vec::new(),
            eta_e: Vec::new(),
            d_l2: Vec::new(),
            d_inf: Vec::new(),
        }
    }

    /// Adds the next time level.
    pub fn push(&mut self, e_kgz: &GridFn, f_kgz: &GridFn, e_kgop: &GridFn) -> Result<()> {
        let n = self.grid.cells() + 1;
        if e_kgz.len() != n || f_kgz.len() != n || e_kgop.len() != n {
            return Err(KgzError::Structural("trajectory level does not match the grid".into()));
        }
        let diff = e_kgz.zip_with(e_kgop, |a, b| a - b)?;
        self.eta_e.push(norms(&diff, &self.grid)?.h1());
        let nf = norms(f_kgz, &self.grid)?;
        self.f_l2.push(nf.l2);
        self.f_inf.push(nf.inf);
        self.d_l2.push(f64::NAN);
        self.d_inf.push(f64::NAN);

        if self.head.len() < 4 {
            self.head.push(f_kgz.clone());
            if self.head.len() == 4 {
                let h = &self.head;
                let (l2, inf) = self.derivative_norms(
                    [(-1.5, &h[0]), (2.0, &h[1]), (-0.5, &h[2])],
                    [(2.0, &h[0]), (-5.0, &h[1]), (4.0, &h[2]), (-1.0, &h[3])],
                )?;
                self.d_l2[0] = l2;
                self.d_inf[0] = inf;
            }
        }
        if self.window.len() == 4 {
            self.window.pop_front();
        }
        self.window.push_back(f_kgz.clone());
        self.levels += 1;
        if self.levels >= 3 {
            let w = self.window.len();
            let (a, b, c) = (&self.window[w - 3], &self.window[w - 2], &self.window[w - 1]);
            let (l2, inf) = self.derivative_norms([(-0.5, a), (0.0, b), (0.5, c)], [(1.0, a), (-2.0, b), (1.0, c), (0.0, c)])?;
            let k = self.levels - 2;
            self.d_l2[k] = l2;
            self.d_inf[k] = inf;
        }
        Ok(())
    }

    /// `|dt F|` and `|dtt F|` summed, in `l2` and max norms. The first-derivative
    /// weights are scaled by `1/tau`, the second by `1/tau^2`.
    fn derivative_norms(&self, d1: [(f64, &GridFn); 3], d2: [(f64, &GridFn); 4]) -> Result<(f64, f64)> {
        let n = self.grid.cells() + 1;
        let mut first = vec![0.0; n];
        let mut second = vec![0.0; n];
        for (w, f) in d1 {
            for (acc, v) in first.iter_mut().zip(f.values()) {
                *acc += w * v / self.tau;
            }
        }
        for (w, f) in d2 {
            for (acc, v) in second.iter_mut().zip(f.values()) {
                *acc += w * v / (self.tau * self.tau);
            }
        }
        let a = norms(&GridFn::zeroed_boundary(first), &self.grid)?;
        let b = norms(&GridFn::zeroed_boundary(second), &self.grid)?;
        Ok((a.l2 + b.l2, a.inf + b.inf))
    }

    pub fn finish(mut self) -> Result<LimitMetrics> {
        if self.levels < 4 {
            return Err(KgzError::Structural(format!(
                "limit metrics need at least 4 time levels, got {}",
                self.levels
            )));
        }
        let w = &self.window;
        let (l2, inf) = self.derivative_norms(
            [(0.5, &w[1]), (-2.0, &w[2]), (1.5, &w[3])],
            [(-1.0, &w[0]), (4.0, &w[1]), (-5.0, &w[2]), (2.0, &w[3])],
        )?;
        let last = self.levels - 1;
        self.d_l2[last] = l2;
        self.d_inf[last] = inf;
        let inv_eps = 1.0 / self.eps;
        Ok(LimitMetrics {
            t: (0..self.levels).map(|k| k as f64 * self.tau).collect(),
            eta_2: self.f_l2.iter().zip(&self.d_l2).map(|(f, d)| f * inv_eps + d).collect(),
            eta_inf: self.f_inf.iter().zip(&self.d_inf).map(|(f, d)| f * inv_eps + d).collect(),
            f_over_eps: self.f_l2.iter().map(|f| f * inv_eps).collect(),
            eta_e: self.eta_e,
        })
    }
}

/// Metrics for stored trajectories sampled at the same levels `t_k = k tau`.
pub fn limit_metrics(
    e_kgz: &[GridFn],
    f_kgz: &[GridFn],
    e_kgop: &[GridFn],
    grid: &Grid1D,
    tau: f64,
    eps: f64,
) -> Result<LimitMetrics> {
    if e_kgz.len() != f_kgz.len() || e_kgz.len() != e_kgop.len() {
        return Err(KgzError::Structural(format!(
            "trajectories have {}, {} and {} levels",
            e_kgz.len(),
            f_kgz.len(),
            e_kgop.len()
        )));
    }
    let mut tracker = LimitTracker::new(grid, tau, eps);
    for ((e, f), e_op) in e_kgz.iter().zip(f_kgz).zip(e_kgop) {
        tracker.push(e, f, e_op)?;
    }
    tracker.finish()
}

/// Runs KGZ and KG-OP side by side on the same grid and step, accumulating
/// the limit metrics without storing the trajectories.
pub fn run_limit_pair(params: &KgzParams, data: &SampledData, layer: &InitialLayerData) -> Result<LimitMetrics> {
    let mut tracker = LimitTracker::new(&params.grid, params.tau, params.eps);
    let mut kgz: KgzState = fdm::init_first_steps(params, data, layer)?;
    let mut kg = init_kg(params, data, true)?;
    tracker.push(kgz.e_prev(), kgz.f_prev(), kg.e_prev())?;
    tracker.push(kgz.e_curr(), kgz.f_curr(), kg.e_curr())?;
    while kgz.k() < params.steps() {
        kgz = fdm::step(&kgz, params, layer)?;
        kg = step_kg_op(&kg, params, layer, true)?;
        tracker.push(kgz.e_curr(), kgz.f_curr(), kg.e_curr())?;
    }
    tracker.finish()
}
