//! Type-I discrete sine transform with the coefficient convention
//!
//! ```text
//! forward:  s_l = (2/M) * sum_{j=1}^{M-1} u_j sin(j l pi / M),   l = 1..M-1
//! inverse:  u_j =         sum_{l=1}^{M-1} s_l sin(j l pi / M)
//! ```
//!
//! The naive O(M^2) sums are the reference implementation. [`SineTransform`]
//! evaluates the same sums through a length-2M FFT of the odd extension.

use std::f64::consts::PI;
use std::sync::Arc;

use realfft::{RealFftPlanner, RealToComplex};

use crate::error::{KgzError, Result};
use crate::mesh::{Grid1D, GridFn};

/// Sine coefficients `s_1 ..= s_{M-1}`; `coeffs()[l - 1]` holds `s_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineSpectrum {
    coeffs: Vec<f64>,
}

impl SineSpectrum {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(KgzError::Structural("empty sine spectrum".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(KgzError::Parameter("sine spectrum contains non-finite values".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(grid: &Grid1D) -> Self {
        Self {
            coeffs: vec![0.0; grid.interior()],
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of mode `l` (1-based).
    pub fn mode(&self, l: usize) -> f64 {
        self.coeffs[l - 1]
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }
}

fn check_len(len: usize, grid: &Grid1D, what: &str) -> Result<()> {
    if len != grid.interior() {
        return Err(KgzError::Structural(format!(
            "{what}: expected {} interior values, got {len}",
            grid.interior()
        )));
    }
    Ok(())
}

/// `sum_{j=1}^{M-1} v_j sin(j l pi / M)` for each `l`, by direct summation.
fn sine_sum_naive(v: &[f64], m: usize) -> Vec<f64> {
    (1..m)
        .map(|l| {
            v.iter()
                .enumerate()
                .map(|(i, &vj)| {
                    let j = i + 1;
                    // reduce j*l mod 2M first so the sine argument stays small
                    let k = (j * l) % (2 * m);
                    vj * (k as f64 * PI / m as f64).sin()
                })
                .sum()
        })
        .collect()
}

pub fn dst_forward_naive(u: &GridFn, grid: &Grid1D) -> Result<SineSpectrum> {
    check_len(u.interior().len(), grid, "dst_forward")?;
    let m = grid.cells();
    let scale = 2.0 / m as f64;
    let coeffs = sine_sum_naive(u.interior(), m).into_iter().map(|s| scale * s).collect();
    Ok(SineSpectrum { coeffs })
}

pub fn dst_inverse_naive(s: &SineSpectrum, grid: &Grid1D) -> Result<GridFn> {
    check_len(s.len(), grid, "dst_inverse")?;
    Ok(GridFn::from_interior(&sine_sum_naive(&s.coeffs, grid.cells())))
}

/// FFT-backed evaluation of the sine sums for one grid size.
#[derive(Clone)]
pub struct SineTransform {
    m: usize,
    fft: Arc<dyn RealToComplex<f64>>,
}

impl std::fmt::Debug for SineTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SineTransform").field("m", &self.m).finish()
    }
}

impl SineTransform {
    pub fn new(grid: &Grid1D) -> Self {
        let m = grid.cells();
        let fft = RealFftPlanner::new().plan_fft_forward(2 * m);
        Self { m, fft }
    }

    pub fn cells(&self) -> usize {
        self.m
    }

    fn sine_sum(&self, v: &[f64]) -> Vec<f64> {
        let m = self.m;
        // odd extension y_j = v_j, y_{2M-j} = -v_j; FFT gives -2i * sum v_j sin(pi j l / M)
        let mut buf = self.fft.make_input_vec();
        for (i, &vj) in v.iter().enumerate() {
            let j = i + 1;
            buf[j] = vj;
            buf[2 * m - j] = -vj;
        }
        let mut spec = self.fft.make_output_vec();
        self.fft
            .process(&mut buf, &mut spec)
            .expect("buffers sized by the plan");
        (1..m).map(|l| -0.5 * spec[l].im).collect()
    }

    pub fn forward(&self, u: &GridFn) -> Result<SineSpectrum> {
        if u.len() != self.m + 1 {
            return Err(KgzError::Structural(format!(
                "dst_forward: expected {} nodes, got {}",
                self.m + 1,
                u.len()
            )));
        }
        let scale = 2.0 / self.m as f64;
        let coeffs = self.sine_sum(u.interior()).into_iter().map(|s| scale * s).collect();
        Ok(SineSpectrum { coeffs })
    }

    pub fn inverse(&self, s: &SineSpectrum) -> Result<GridFn> {
        if s.len() != self.m - 1 {
            return Err(KgzError::Structural(format!(
                "dst_inverse: expected {} coefficients, got {}",
                self.m - 1,
                s.len()
            )));
        }
        Ok(GridFn::from_interior(&self.sine_sum(&s.coeffs)))
    }

    /// Inverse transform of raw coefficients (`coeffs[l - 1]` for mode `l`).
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<GridFn> {
        if coeffs.len() != self.m - 1 {
            return Err(KgzError::Structural(format!(
                "synthesize: expected {} coefficients, got {}",
                self.m - 1,
                coeffs.len()
            )));
        }
        Ok(GridFn::from_interior(&self.sine_sum(coeffs)))
    }
}

/// Forward transform; uses the FFT path for all grid sizes.
pub fn dst_forward(u: &GridFn, grid: &Grid1D) -> Result<SineSpectrum> {
    check_len(u.interior().len(), grid, "dst_forward")?;
    SineTransform::new(grid).forward(u)
}

pub fn dst_inverse(s: &SineSpectrum, grid: &Grid1D) -> Result<GridFn> {
    check_len(s.len(), grid, "dst_inverse")?;
    SineTransform::new(grid).inverse(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_fn(grid: &Grid1D, seed: u64) -> GridFn {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let v: Vec<f64> = (0..grid.interior()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GridFn::from_interior(&v)
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        num / b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE)
    }

    // plain double loop with no argument reduction
    fn double_loop(u: &GridFn, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m - 1];
        for l in 1..m {
            let mut s = 0.0;
            for j in 1..m {
                s += u[j] * ((j * l) as f64 * PI / m as f64).sin();
            }
            out[l - 1] = 2.0 / m as f64 * s;
        }
        out
    }

    #[test]
    fn zero_input() {
        let g = Grid1D::new(0.0, 1.0, 8).unwrap();
        assert!(dst_forward(&GridFn::zeros(&g), &g).unwrap().is_zero());
        assert_eq!(dst_inverse(&SineSpectrum::zeros(&g), &g).unwrap(), GridFn::zeros(&g));
    }

    #[test]
    fn single_mode_orthogonality() {
        let g = Grid1D::new(-2.0, 3.0, 16).unwrap();
        for l0 in 1..16 {
            let u = GridFn::from_interior(
                &(1..16).map(|j| ((j * l0) as f64 * PI / 16.0).sin()).collect::<Vec<_>>(),
            );
            for s in [dst_forward(&u, &g).unwrap(), dst_forward_naive(&u, &g).unwrap()] {
                for l in 1..16 {
                    let expect = if l == l0 { 1.0 } else { 0.0 };
                    assert!((s.mode(l) - expect).abs() < 1e-13, "l0={l0} l={l}");
                }
            }
            let mut unit = vec![0.0; 15];
            unit[l0 - 1] = 1.0;
            let back = dst_inverse(&SineSpectrum::new(unit).unwrap(), &g).unwrap();
            assert!(max_rel(back.values(), u.values()) < 1e-13);
        }
    }

    #[test]
    fn forward_matches_double_loop() {
        let g = Grid1D::new(0.0, 1.0, 16).unwrap();
        let u = random_fn(&g, 7);
        let oracle = double_loop(&u, 16);
        assert!(max_rel(dst_forward_naive(&u, &g).unwrap().coeffs(), &oracle) < 1e-13);
        assert!(max_rel(dst_forward(&u, &g).unwrap().coeffs(), &oracle) < 1e-13);
    }

    #[test]
    fn fast_matches_naive() {
        for m in [2, 3, 5, 16, 17, 100, 257] {
            let g = Grid1D::new(0.0, 1.0, m).unwrap();
            let u = random_fn(&g, m as u64);
            let fast = dst_forward(&u, &g).unwrap();
            let slow = dst_forward_naive(&u, &g).unwrap();
            assert!(max_rel(fast.coeffs(), slow.coeffs()) < 1e-12, "m={m}");
            let fi = dst_inverse(&fast, &g).unwrap();
            let si = dst_inverse_naive(&fast, &g).unwrap();
            assert!(max_rel(fi.values(), si.values()) < 1e-12, "m={m}");
        }
    }

    #[test]
    fn round_trip_sizes() {
        for m in [2, 3, 4, 8, 16, 64, 128] {
            let g = Grid1D::new(-1.0, 1.0, m).unwrap();
            let u = random_fn(&g, 100 + m as u64);
            let back = dst_inverse(&dst_forward(&u, &g).unwrap(), &g).unwrap();
            assert!(max_rel(back.values(), u.values()) < 1e-12, "m={m}");
            let back = dst_inverse_naive(&dst_forward_naive(&u, &g).unwrap(), &g).unwrap();
            assert!(max_rel(back.values(), u.values()) < 1e-12, "m={m}");
        }
    }

    #[test]
    fn structural_errors() {
        let g = Grid1D::new(0.0, 1.0, 8).unwrap();
        let g2 = Grid1D::new(0.0, 1.0, 9).unwrap();
        assert!(dst_forward(&GridFn::zeros(&g2), &g).is_err());
        assert!(dst_inverse(&SineSpectrum::zeros(&g2), &g).is_err());
    }

    proptest! {
        #[test]
        fn parseval(m in 2usize..100, seed in any::<u64>()) {
            let g = Grid1D::new(-3.0, 4.5, m).unwrap();
            let u = random_fn(&g, seed);
            let s = dst_forward(&u, &g).unwrap();
            let lhs = g.h() * u.interior().iter().map(|v| v * v).sum::<f64>();
            let rhs = g.len() / 2.0 * s.coeffs().iter().map(|v| v * v).sum::<f64>();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn linearity(m in 2usize..64, a in -5.0f64..5.0, b in -5.0f64..5.0, seed in any::<u64>()) {
            let g = Grid1D::new(0.0, 1.0, m).unwrap();
            let u = random_fn(&g, seed);
            let v = random_fn(&g, seed.wrapping_add(1));
            let w = u.zip_with(&v, |x, y| a * x + b * y).unwrap();
            let tw = dst_forward(&w, &g).unwrap();
            let tu = dst_forward(&u, &g).unwrap();
            let tv = dst_forward(&v, &g).unwrap();
            for l in 1..m {
                prop_assert!((tw.mode(l) - (a * tu.mode(l) + b * tv.mode(l))).abs() <= 1e-13);
            }
        }
    }
}
