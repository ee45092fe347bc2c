//! Fourier transforms on periodic lattices and the Poisson solve used by
//! the conformal normalisation.

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::lie::C64;

/// In-place multi-dimensional DFT over site-ordered data (axis 0 slowest).
/// The inverse is normalised by `1 / N`.
pub fn fft_nd(data: &mut [C64], sizes: &[usize], inverse: bool) {
    let total: usize = sizes.iter().product();
    assert_eq!(data.len(), total);
    let mut planner = FftPlanner::<f64>::new();
    let mut stride = total;
    let mut line = Vec::new();
    for &n in sizes {
        stride /= n;
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        line.resize(n, C64::new(0.0, 0.0));
        let block = n * stride;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                for k in 0..n {
                    line[k] = data[base + off + k * stride];
                }
                fft.process(&mut line);
                for k in 0..n {
                    data[base + off + k * stride] = line[k];
                }
            }
        }
    }
    if inverse {
        let s = 1.0 / total as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

/// Angles `theta_mu = 2 pi k_mu / N_mu` of a flat mode index.
pub fn mode_angles(geometry: &LatticeGeometry, mode: usize) -> Vec<f64> {
    let c = geometry.coords(mode);
    (0..geometry.dim())
        .map(|mu| 2.0 * std::f64::consts::PI * c[mu] as f64 / geometry.sizes()[mu] as f64)
        .collect()
}

/// Symbol of `sum_mu D_mu^2` for the centred difference `D_mu`:
/// `-sum_mu sin^2(theta_mu) / a^2`.
pub fn centered_laplacian_symbol(geometry: &LatticeGeometry, mode: usize) -> f64 {
    let a2 = geometry.spacing() * geometry.spacing();
    -mode_angles(geometry, mode).iter().map(|t| t.sin().powi(2)).sum::<f64>() / a2
}

/// Solves `sum_mu D_mu^2 phi = rhs` with zero mean.
///
/// Modes where the symbol vanishes (the constant and the Nyquist corners)
/// must carry no right-hand side; their solution component is set to zero.
pub fn solve_centered_poisson(geometry: &LatticeGeometry, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = geometry.num_sites();
    if rhs.len() != n {
        return Err(Error::Dimension("Poisson right-hand side has the wrong length".into()));
    }
    let mut data: Vec<C64> = rhs.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft_nd(&mut data, geometry.sizes(), false);
    let scale = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300) * n as f64;
    let a2 = geometry.spacing() * geometry.spacing();
    for (mode, v) in data.iter_mut().enumerate() {
        let sym = centered_laplacian_symbol(geometry, mode);
        if sym.abs() * a2 < 1e-12 {
            if v.norm() > 1e-9 * scale {
                return Err(Error::Solver(format!(
                    "right-hand side has a component {:.3e} on a null mode",
                    v.norm() / n as f64
                )));
            }
            *v = C64::new(0.0, 0.0);
        } else {
            *v /= sym;
        }
    }
    fft_nd(&mut data, geometry.sizes(), true);
    Ok(data.into_iter().map(|v| v.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(data: &[C64], g: &LatticeGeometry) -> Vec<C64> {
        (0..g.num_sites())
            .map(|k| {
                let th = mode_angles(g, k);
                (0..g.num_sites())
                    .map(|x| {
                        let c = g.coords(x);
                        let ph: f64 = (0..g.dim()).map(|mu| th[mu] * c[mu] as f64).sum();
                        data[x] * C64::from_polar(1.0, -ph)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let g = LatticeGeometry::new(3, &[4, 5, 6], 1.0).unwrap();
        let data: Vec<C64> = (0..g.num_sites()).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut fast = data.clone();
        fft_nd(&mut fast, g.sizes(), false);
        let slow = naive_dft(&data, &g);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-10);
        }
        fft_nd(&mut fast, g.sizes(), true);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn poisson_inverts_centered_laplacian() {
        let g = LatticeGeometry::cubic(2, 16, 1.0 / 16.0).unwrap();
        let phi: Vec<f64> = (0..g.num_sites())
            .map(|s| {
                let p = g.position(s);
                (2.0 * PI * p[0]).sin() + 0.5 * (2.0 * PI * (p[0] + 2.0 * p[1])).cos()
            })
            .collect();
        // rhs = (D_x^2 + D_y^2) phi by stencils
        let a = g.spacing();
        let rhs: Vec<f64> = (0..g.num_sites())
            .map(|s| {
                (0..2)
                    .map(|mu| {
                        let (p, _) = g.step(s, mu, true);
                        let (pp, _) = g.step(p, mu, true);
                        let (m, _) = g.step(s, mu, false);
                        let (mm, _) = g.step(m, mu, false);
                        (phi[pp] - 2.0 * phi[s] + phi[mm]) / (4.0 * a * a)
                    })
                    .sum()
            })
            .collect();
        let sol = solve_centered_poisson(&g, &rhs).unwrap();
        for (a, b) in sol.iter().zip(&phi) {
            assert!((a - b).abs() < 1e-10);
        }
        let bad = vec![1.0; g.num_sites()];
        assert!(matches!(solve_centered_poisson(&g, &bad), Err(Error::Solver(_))));
    }
}
