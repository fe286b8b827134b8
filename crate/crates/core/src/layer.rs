//! The initial layer `G` (free wave with speed `1/eps` seeded by the
//! incompatible part of the density data) and its triangular-kernel time
//! average `H`, both evaluated exactly in time through the sine basis.
//!
//! With `a_l = eps^alpha * w0_l`, `b_l = eps^beta * w1_l` and
//! `theta_l = l pi / (eps (b - a))`:
//!
//! ```text
//! G_j(t)        = sum_l sin(j l pi / M) [a_l cos(theta_l t) + b_l / theta_l sin(theta_l t)]
//! H_j(t_k, tau) = sum_l sin(j l pi / M) sinc^2(theta_l tau / 2) [ same bracket at t_k ]
//! ```
//!
//! where `sinc(x) = sin(x) / x`, i.e. `(4 / tau^2 theta_l^2) sin^2(theta_l tau / 2)`.

use std::f64::consts::PI;

use log::warn;

use crate::error::{KgzError, Result};
use crate::mesh::{Grid1D, GridFn};
use crate::sine::{SineSpectrum, SineTransform};

/// `alpha* = min(alpha, 1 + beta)`.
pub fn alpha_star(alpha: f64, beta: f64) -> Result<f64> {
    if !(alpha >= 0.0) || !(beta >= -1.0) {
        return Err(KgzError::Parameter(format!(
            "incompatibility exponents need alpha >= 0 and beta >= -1, got ({alpha}, {beta})"
        )));
    }
    Ok(alpha.min(1.0 + beta))
}

/// Validates `eps`: non-positive values are rejected, values above one only warn.
pub fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(KgzError::Parameter(format!("eps must be positive, got {eps}")));
    }
    if eps > 1.0 {
        warn!("eps = {eps} is outside (0, 1]; proceeding outside the analysed range");
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct InitialLayerData {
    eps: f64,
    alpha: f64,
    beta: f64,
    theta: Vec<f64>,
    w0: SineSpectrum,
    w1: SineSpectrum,
    /// `eps^alpha * w0_l`
    amp_cos: Vec<f64>,
    /// `eps^beta * w1_l / theta_l`
    amp_sin: Vec<f64>,
    zero: bool,
    grid: Grid1D,
    transform: SineTransform,
}

impl InitialLayerData {
    pub fn prepare(
        grid: &Grid1D,
        eps: f64,
        alpha: f64,
        beta: f64,
        w0_samples: &GridFn,
        w1_samples: &GridFn,
    ) -> Result<Self> {
        check_eps(eps)?;
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(KgzError::Parameter(format!("non-finite exponents ({alpha}, {beta})")));
        }
        let transform = SineTransform::new(grid);
        let w0 = transform.forward(w0_samples)?;
        let w1 = transform.forward(w1_samples)?;
        Self::from_spectra(grid, eps, alpha, beta, w0, w1)
    }

    /// Builds the layer directly from sine coefficients.
    pub fn from_spectra(
        grid: &Grid1D,
        eps: f64,
        alpha: f64,
        beta: f64,
        w0: SineSpectrum,
        w1: SineSpectrum,
    ) -> Result<Self> {
        check_eps(eps)?;
        if w0.len() != grid.interior() || w1.len() != grid.interior() {
            return Err(KgzError::Structural(format!(
                "layer spectra must have {} modes, got {} and {}",
                grid.interior(),
                w0.len(),
                w1.len()
            )));
        }
        let len = grid.len();
        let theta: Vec<f64> = (1..=grid.interior())
            .map(|l| l as f64 * PI / (eps * len))
            .collect();
        let ea = eps.powf(alpha);
        let eb = eps.powf(beta);
        let amp_cos: Vec<f64> = w0.coeffs().iter().map(|&c| ea * c).collect();
        let amp_sin: Vec<f64> = w1
            .coeffs()
            .iter()
            .zip(&theta)
            .map(|(&c, &th)| eb * c / th)
            .collect();
        let zero = w0.is_zero() && w1.is_zero();
        Ok(Self {
            eps,
            alpha,
            beta,
            theta,
            w0,
            w1,
            amp_cos,
            amp_sin,
            zero,
            grid: grid.clone(),
            transform: SineTransform::new(grid),
        })
    }

    /// Layer with vanishing incompatibility data (`G = H = 0`).
    pub fn zero(grid: &Grid1D, eps: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::from_spectra(grid, eps, alpha, beta, SineSpectrum::zeros(grid), SineSpectrum::zeros(grid))
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `theta()[l - 1]` is the frequency of mode `l`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn w0(&self) -> &SineSpectrum {
        &self.w0
    }

    pub fn w1(&self) -> &SineSpectrum {
        &self.w1
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// Modal amplitudes of `G` at time `t`.
    pub fn g_modes(&self, t: f64) -> Vec<f64> {
        self.theta
            .iter()
            .zip(self.amp_cos.iter().zip(&self.amp_sin))
            .map(|(&th, (&ac, &as_))| {
                let (s, c) = (th * t).sin_cos();
                ac * c + as_ * s
            })
            .collect()
    }

    /// Modal amplitudes of `H` at `(t_k, tau)`.
    pub fn h_modes(&self, t_k: f64, tau: f64) -> Vec<f64> {
        self.theta
            .iter()
            .zip(self.amp_cos.iter().zip(&self.amp_sin))
            .map(|(&th, (&ac, &as_))| {
                let (s, c) = (th * t_k).sin_cos();
                sinc(0.5 * th * tau).powi(2) * (ac * c + as_ * s)
            })
            .collect()
    }

    pub fn eval_g(&self, t: f64) -> Result<GridFn> {
        if self.zero {
            return Ok(GridFn::zeros(&self.grid));
        }
        self.transform.synthesize(&self.g_modes(t))
    }

    pub fn eval_h(&self, t_k: f64, tau: f64) -> Result<GridFn> {
        if !(tau > 0.0) {
            return Err(KgzError::Parameter(format!("tau must be positive, got {tau}")));
        }
        if self.zero {
            return Ok(GridFn::zeros(&self.grid));
        }
        self.transform.synthesize(&self.h_modes(t_k, tau))
    }

    /// `sum_l (|eps^alpha w0_l| + |eps^beta w1_l| / theta_l)`, a bound on `max_j |G_j(t)|`.
    pub fn g_sup_bound(&self) -> f64 {
        self.amp_cos
            .iter()
            .zip(&self.amp_sin)
            .map(|(a, b)| a.abs() + b.abs())
            .sum()
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // series to O(x^6): relative error below 1e-22
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Adaptive Simpson on `[a, b]`.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    /// Naive G at one node, summed mode by mode.
    fn g_naive(layer: &InitialLayerData, j: usize, t: f64) -> f64 {
        let m = layer.grid().cells();
        let ea = layer.eps().powf(layer.alpha());
        let eb = layer.eps().powf(layer.beta());
        (1..m)
            .map(|l| {
                let th = layer.theta()[l - 1];
                ((j * l) as f64 * PI / m as f64).sin()
                    * (ea * layer.w0().mode(l) * (th * t).cos() + eb * layer.w1().mode(l) / th * (th * t).sin())
            })
            .sum()
    }

    /// Triangular-kernel average of G by quadrature with panels no wider than
    /// a tenth of the fastest period.
    fn h_quadrature(layer: &InitialLayerData, j: usize, t_k: f64, tau: f64) -> f64 {
        let period = 2.0 * PI / layer.theta().last().unwrap();
        let panels = ((2.0 * tau / period) * 10.0).ceil().max(4.0) as usize;
        let f = |s: f64| (1.0 - s.abs()) * g_naive(layer, j, t_k + s * tau);
        let mut total = 0.0;
        // split at s = 0 where the kernel has a kink
        for side in [(-1.0, 0.0), (0.0, 1.0)] {
            let w = (side.1 - side.0) / panels as f64;
            for p in 0..panels {
                let a = side.0 + p as f64 * w;
                total += adaptive_simpson(&f, a, a + w, 1e-13 / panels as f64);
            }
        }
        total
    }

    fn random_layer(m: usize, eps: f64, seed: u64) -> InitialLayerData {
        let g = Grid1D::new(0.0, 4.0, m).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let w0 = SineSpectrum::new((1..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w1 = SineSpectrum::new((1..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        InitialLayerData::from_spectra(&g, eps, 0.5, -0.5, w0, w1).unwrap()
    }

    #[test]
    fn alpha_star_values() {
        assert_eq!(alpha_star(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(alpha_star(0.0, -1.0).unwrap(), 0.0);
        assert_eq!(alpha_star(2.0, 1.0).unwrap(), 2.0);
        assert!(alpha_star(-0.1, 0.0).is_err());
        assert!(alpha_star(0.0, -1.5).is_err());
    }

    #[test]
    fn theta_values() {
        let g = Grid1D::new(-2.0, 2.0, 8).unwrap();
        let layer = InitialLayerData::zero(&g, 0.5, 1.0, 0.0).unwrap();
        assert!((layer.theta()[1] - PI).abs() < 1e-15);
        for (i, w) in layer.theta().windows(2).enumerate() {
            assert!(w[0] > 0.0 && w[1] > w[0], "mode {i}");
        }
        for (i, th) in layer.theta().iter().enumerate() {
            let l = (i + 1) as f64;
            assert!((th * 0.5 * 4.0 - l * PI).abs() <= 1e-12 * l * PI);
        }
    }

    #[test]
    fn prepare_rejects_bad_eps() {
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        let z = GridFn::zeros(&g);
        assert!(matches!(
            InitialLayerData::prepare(&g, 0.0, 1.0, 0.0, &z, &z),
            Err(KgzError::Parameter(_))
        ));
        assert!(InitialLayerData::prepare(&g, -1.0, 1.0, 0.0, &z, &z).is_err());
        // above one only warns
        assert!(InitialLayerData::prepare(&g, 1.5, 1.0, 0.0, &z, &z).is_ok());
    }

    #[test]
    fn prepare_spectra() {
        let g = Grid1D::new(-1.0, 1.0, 16).unwrap();
        let z = GridFn::zeros(&g);
        let layer = InitialLayerData::prepare(&g, 0.3, 1.0, 0.0, &z, &z).unwrap();
        assert!(layer.w0().is_zero() && layer.w1().is_zero());
        assert_eq!(layer.eval_g(0.7).unwrap(), z);
        assert_eq!(layer.eval_h(0.7, 0.1).unwrap(), z);

        let mode = GridFn::from_interior(&(1..16).map(|j| (j as f64 * PI / 16.0).sin()).collect::<Vec<_>>());
        let layer = InitialLayerData::prepare(&g, 0.3, 1.0, 0.0, &mode, &z).unwrap();
        assert!((layer.w0().mode(1) - 1.0).abs() < 1e-13);
        for l in 2..16 {
            assert!(layer.w0().mode(l).abs() < 1e-13);
        }
    }

    #[test]
    fn g_reproduces_initial_data() {
        let g = Grid1D::new(-5.0, 5.0, 40).unwrap();
        let w0 = GridFn::sample(&g, |x| (-x * x).exp() * (3.0 * x).cos());
        let w1 = GridFn::sample(&g, |x| (-x * x).exp() * (4.0 * x).sin());
        let eps = 0.25;
        let layer = InitialLayerData::prepare(&g, eps, 1.0, 0.0, &w0, &w1).unwrap();
        let g0 = layer.eval_g(0.0).unwrap();
        for j in 0..=40 {
            assert!((g0[j] - eps * w0[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn g_single_mode_is_periodic() {
        let g = Grid1D::new(0.0, 3.0, 12).unwrap();
        let mut c = vec![0.0; 11];
        c[2] = 0.8;
        let layer = InitialLayerData::from_spectra(
            &g,
            0.2,
            0.0,
            0.0,
            SineSpectrum::new(c).unwrap(),
            SineSpectrum::zeros(&g),
        )
        .unwrap();
        let period = 2.0 * PI / layer.theta()[2];
        let a = layer.eval_g(0.0).unwrap();
        let b = layer.eval_g(period).unwrap();
        for j in 0..=12 {
            assert!((a[j] - b[j]).abs() < 1e-11);
        }
    }

    #[test]
    fn h_single_mode_closed_form() {
        // (0, pi), eps = 1, tau = pi: theta_1 = 1
        let g = Grid1D::new(0.0, PI, 8).unwrap();
        let mut c = vec![0.0; 7];
        c[0] = 1.0;
        let layer = InitialLayerData::from_spectra(
            &g,
            1.0,
            0.0,
            0.0,
            SineSpectrum::new(c).unwrap(),
            SineSpectrum::zeros(&g),
        )
        .unwrap();
        assert!((layer.theta()[0] - 1.0).abs() < 1e-15);
        for t_k in [PI, 2.0 * PI, 2.5] {
            let h = layer.eval_h(t_k, PI).unwrap();
            for j in 1..8 {
                let expected = 4.0 / (PI * PI) * t_k.cos() * (j as f64 * PI / 8.0).sin();
                let quad = h_quadrature(&layer, j, t_k, PI);
                assert!((quad - expected).abs() < 1e-10, "oracle j={j}");
                assert!((h[j] - expected).abs() < 1e-10, "j={j}");
            }
        }
    }

    #[test]
    fn h_matches_quadrature_random_spectra() {
        for &eps in &[1.0, 0.1, 0.01] {
            for &tau in &[0.1, 0.01] {
                let layer = random_layer(16, eps, (eps * 1e4) as u64 + (tau * 1e3) as u64);
                for &t_k in &[tau, 3.0 * tau, 0.77] {
                    let h = layer.eval_h(t_k, tau).unwrap();
                    for j in [1, 5, 8, 15] {
                        let q = h_quadrature(&layer, j, t_k, tau);
                        assert!((h[j] - q).abs() < 1e-9, "eps={eps} tau={tau} t={t_k} j={j}: {} vs {q}", h[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn h_approaches_g_quadratically() {
        let layer = random_layer(16, 0.5, 3);
        let t = 0.6;
        let g = layer.eval_g(t).unwrap();
        let gap = |tau: f64| {
            let h = layer.eval_h(t, tau).unwrap();
            h.zip_with(&g, |a, b| a - b).unwrap().max_abs()
        };
        let mut tau = 1e-3;
        for _ in 0..3 {
            let ratio = gap(tau) / gap(0.5 * tau);
            assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
            tau *= 0.5;
        }
    }

    #[test]
    fn g_sup_bound_holds() {
        let layer = random_layer(32, 0.05, 11);
        let bound = layer.g_sup_bound();
        for i in 0..50 {
            let g = layer.eval_g(i as f64 * 0.0371).unwrap();
            assert!(g.max_abs() <= bound);
        }
    }

    #[test]
    fn modes_solve_the_oscillator() {
        let layer = random_layer(16, 0.1, 5);
        for l in [1usize, 7, 15] {
            let th = layer.theta()[l - 1];
            let dt = 1e-4 * 2.0 * PI / th;
            let t = 0.3;
            let at = |s: f64| layer.g_modes(s)[l - 1];
            let second = (at(t + dt) - 2.0 * at(t) + at(t - dt)) / (dt * dt);
            let scale = th * th * (layer.amp_cos[l - 1].abs() + layer.amp_sin[l - 1].abs());
            let residual = (second + th * th * at(t)).abs() / scale;
            assert!(residual < 1e-6, "l={l}: {residual}");
        }
    }

    #[test]
    fn eval_h_rejects_bad_tau() {
        let layer = random_layer(8, 0.5, 1);
        assert!(layer.eval_h(1.0, 0.0).is_err());
        assert!(layer.eval_h(1.0, -0.1).is_err());
    }
}
