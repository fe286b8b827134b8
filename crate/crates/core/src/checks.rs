//! Self-contained property suite behind `kgz check`: discrete identities,
//! transforms, the filtered potential against quadrature, reversibility and
//! solver residuals, each against an independent brute-force computation.

use std::f64::consts::PI;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::fdm::{self, InitialData, KgzParams, KgzState};
use crate::layer::InitialLayerData;
use crate::limit;
use crate::mesh::{diff_forward, diff_second, inner, inner_shifted, norms, solve_poisson_dirichlet, Grid1D, GridFn, Tridiagonal};
use crate::sine::{SineSpectrum, SineTransform};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn random_fn(grid: &Grid1D, rng: &mut StdRng) -> GridFn {
    GridFn::from_interior(&(0..grid.interior()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
}

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

fn summation_by_parts(rng: &mut StdRng) -> CheckResult {
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let m = rng.gen_range(2..=256);
        let g = Grid1D::new(rng.gen_range(-5.0..0.0), rng.gen_range(0.5..5.0), m).unwrap();
        let u = random_fn(&g, rng);
        let v = random_fn(&g, rng);
        let lhs = -inner(&diff_second(&u, &g).unwrap(), &v, &g).unwrap();
        let rhs = inner_shifted(&diff_forward(&u, &g).unwrap(), &diff_forward(&v, &g).unwrap(), &g).unwrap();
        let scale = norms(&u, &g).unwrap().h1_semi * norms(&v, &g).unwrap().h1_semi;
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    check("summation by parts (relative)", worst, 1e-13)
}

fn dst_round_trip_and_parseval(rng: &mut StdRng) -> CheckResult {
    let mut worst = 0.0_f64;
    for m in [2, 3, 7, 16, 64, 100, 255, 1024] {
        let g = Grid1D::new(0.0, rng.gen_range(1.0..10.0), m).unwrap();
        let t = SineTransform::new(&g);
        let u = random_fn(&g, rng);
        let s = t.forward(&u).unwrap();
        let back = t.inverse(&s).unwrap();
        let scale = u.max_abs();
        worst = worst.max(max_diff(back.values(), u.values()) / scale);
        let lhs: f64 = u.values().iter().map(|v| v * v).sum::<f64>() * g.h();
        let rhs: f64 = s.coeffs().iter().map(|v| v * v).sum::<f64>() * g.len() / 2.0;
        worst = worst.max((lhs - rhs).abs() / lhs);
    }
    check("DST round trip and Parseval", worst, 1e-12)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let flm = f(0.5 * (a + m));
        let frm = f(0.5 * (m + b));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

fn filtered_potential(rng: &mut StdRng) -> CheckResult {
    let mut worst = 0.0_f64;
    let m = 12;
    let g = Grid1D::new(-2.0, 2.0, m).unwrap();
    for eps in [1.0, 0.1, 0.01] {
        for tau in [0.1, 0.01] {
            let w0 = SineSpectrum::new((1..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let w1 = SineSpectrum::new((1..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let layer = InitialLayerData::from_spectra(&g, eps, 1.0, 0.0, w0, w1).unwrap();
            let t_k = rng.gen_range(0.1..1.0);
            let h = layer.eval_h(t_k, tau).unwrap();
            let period = 2.0 * PI / layer.theta().last().unwrap();
            let panels = ((2.0 * tau / period) * 10.0).ceil().max(4.0) as usize;
            for j in 1..m {
                let g_at = |t: f64| -> f64 {
                    (1..m)
                        .map(|l| {
                            let th = layer.theta()[l - 1];
                            ((j * l) as f64 * PI / m as f64).sin()
                                * (eps * layer.w0().mode(l) * (th * t).cos() + layer.w1().mode(l) / th * (th * t).sin())
                        })
                        .sum()
                };
                let f = |s: f64| (1.0 - s.abs()) * g_at(t_k + s * tau);
                let mut q = 0.0;
                for (a, b) in [(-1.0, 0.0), (0.0, 1.0)] {
                    let w = (b - a) / panels as f64;
                    for p in 0..panels {
                        let lo = a + p as f64 * w;
                        q += simpson(&f, lo, lo + w, 1e-13 / panels as f64);
                    }
                }
                worst = worst.max((h[j] - q).abs());
            }
        }
    }
    check("filtered potential vs adaptive quadrature", worst, 1e-9)
}

fn gauss_data() -> InitialData {
    InitialData::new(
        |x| (-x * x).exp() * x.sin(),
        |x| (0.5 * x * x).cosh().recip() * x.cos(),
        |x| (x * x).cosh().recip() * (3.0 * x).cos(),
        |x| (x * x).cosh().recip() * (4.0 * x).sin(),
    )
}

fn reversibility() -> CheckResult {
    let grid = Grid1D::new(-12.0, 12.0, 192).unwrap();
    let p = KgzParams::new(0.1, 1.0, 0.0, grid, 0.01, 2.0).unwrap();
    let data = gauss_data().sample(&p.grid);
    let layer = data.layer(&p).unwrap();
    let rel = |a: &GridFn, b: &GridFn| max_diff(a.values(), b.values()) / b.max_abs();

    let s1 = fdm::init_first_steps(&p, &data, &layer).unwrap();
    let mut s: KgzState = s1.clone();
    for _ in 0..100 {
        s = fdm::step(&s, &p, &layer).unwrap();
    }
    for _ in 0..100 {
        s = fdm::step_back(&s, &p, &layer).unwrap();
    }
    let mut worst = rel(s.e_prev(), s1.e_prev())
        .max(rel(s.e_curr(), s1.e_curr()))
        .max(rel(s.f_curr(), s1.f_curr()));

    let k1 = limit::init_kg(&p, &data, true).unwrap();
    let mut k = k1.clone();
    for _ in 0..100 {
        k = limit::step_kg_op(&k, &p, &layer, true).unwrap();
    }
    for _ in 0..100 {
        k = limit::step_back_kg_op(&k, &p, &layer, true).unwrap();
    }
    worst = worst.max(rel(k.e_prev(), k1.e_prev())).max(rel(k.e_curr(), k1.e_curr()));
    check("100-step forward/backward round trip (KGZ, KG-OP)", worst, 1e-8)
}

fn fixed_point_and_boundary() -> CheckResult {
    let grid = Grid1D::new(-10.0, 10.0, 100).unwrap();
    let p = KgzParams::new(0.25, 0.0, -1.0, grid, 0.02, 1.0).unwrap();
    let mut bad = 0usize;
    let zero = InitialData::zero().sample(&p.grid);
    let zl = zero.layer(&p).unwrap();
    fdm::drive(&p, &zero, &zl, |s| {
        bad += (s.e_curr().max_abs() != 0.0 || s.f_curr().max_abs() != 0.0) as usize;
        Ok(())
    })
    .unwrap();
    let data = gauss_data().sample(&p.grid);
    let layer = data.layer(&p).unwrap();
    fdm::drive(&p, &data, &layer, |s| {
        let n = fdm::recover_n(s, &layer)?;
        for v in [s.e_curr(), s.f_curr(), &n] {
            bad += (v[0] != 0.0 || v[100] != 0.0) as usize;
        }
        Ok(())
    })
    .unwrap();
    CheckResult {
        name: "zero-data fixed point and Dirichlet zeros",
        passed: bad == 0,
        detail: format!("{bad} violating levels"),
    }
}

fn solver_residuals(rng: &mut StdRng) -> CheckResult {
    let mut worst = 0.0_f64;
    for n in [1, 2, 5, 40, 120] {
        let lower: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upper: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|_| rng.gen_range(2.5..4.0)).collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sys = Tridiagonal::new(lower.clone(), diag.clone(), upper.clone()).unwrap();
        let x = sys.solve(&rhs).unwrap();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = diag[i];
            if i > 0 {
                a[i][i - 1] = lower[i - 1];
            }
            if i + 1 < n {
                a[i][i + 1] = upper[i];
            }
        }
        let y = dense_solve(a, rhs);
        worst = worst.max(max_diff(&x, &y) / max_abs(&y));
    }
    for m in [2, 9, 64, 200] {
        let g = Grid1D::new(-1.0, 3.0, m).unwrap();
        let f = random_fn(&g, rng);
        let u = solve_poisson_dirichlet(&f, &g).unwrap();
        let n = m - 1;
        let h2 = g.h() * g.h();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 2.0 / h2;
            if i > 0 {
                a[i][i - 1] = -1.0 / h2;
            }
            if i + 1 < n {
                a[i][i + 1] = -1.0 / h2;
            }
        }
        let y = dense_solve(a, f.interior().to_vec());
        worst = worst.max(max_diff(u.interior(), &y) / max_abs(&y));
    }
    check("tridiagonal and Poisson solves vs dense elimination", worst, 1e-12)
}

/// Runs every property check with a fixed seed.
pub fn run_property_suite() -> Vec<CheckResult> {
    let mut rng = StdRng::seed_from_u64(0x6b677a);
    vec![
        summation_by_parts(&mut rng),
        dst_round_trip_and_parseval(&mut rng),
        filtered_potential(&mut rng),
        reversibility(),
        fixed_point_and_boundary(),
        solver_residuals(&mut rng),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn suite_passes() {
        for r in super::run_property_suite() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
