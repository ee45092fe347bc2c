//! Hermitian-Yang-Mills flow `H^{-1} dH/dt = -2 (i Lambda F_H - lambda Id)`
//! on flat complex tori of complex dimension 1 or 2.
//!
//! Real axes pair up as `z_j = x_{2j} + i x_{2j+1}` and `omega = sum_j dx_{2j} ^ dx_{2j+1}`,
//! so `i Lambda F = sum_j i F_{x_{2j} x_{2j+1}}`. Derivatives are centred
//! differences `D_mu`, with `D_z = (D_x - i D_y)/2`.
//!
//! The holomorphic structure is `dbar + a01`, `a01 = sum_j beta_j dz-bar_j`, in the
//! global frame. The Chern connection of `H` has `(1,0)`-part
//! `alpha_j = H^{-1} D_z H - H^{-1} beta_j^* H`, discretised in two parts: the
//! trace is `D_z log det H - tr beta_j^*` and the tracefree part uses the
//! unit-determinant metric `H / det(H)^{1/r}`. In the continuum this is the
//! same connection; on the lattice it makes `tr F_H - tr F_{H_0}` exactly the
//! discrete `dbar d log det h`, and `F^perp` exactly invariant under
//! conformal rescaling of `H`.

use std::borrow::Cow;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ConnectionField, LatticeField, Representation, Torus, TwoFormField};
use crate::lie::{trace_free_part, MatrixValue, ScalarKind, C64, I};
use crate::spectral::solve_centered_poisson;

const ADJ: Representation = Representation::Adjoint;

/// Flat complex torus: a lattice torus of real dimension `2m`, `m in {1, 2}`.
#[derive(Clone, Debug)]
pub struct ComplexTorusGeometry {
    torus: Arc<Torus>,
    m: usize,
}

impl ComplexTorusGeometry {
    pub fn new(torus: &Arc<Torus>) -> Result<Self> {
        if torus.kind() != ScalarKind::Complex {
            return Err(Error::UnsupportedKind("holomorphic bundles need a complex bundle".into()));
        }
        let dim = torus.dim();
        if dim != 2 && dim != 4 {
            return Err(Error::Geometry(format!("complex torus needs real dimension 2 or 4, got {dim}")));
        }
        Ok(Self {
            torus: torus.clone(),
            m: dim / 2,
        })
    }

    pub fn torus(&self) -> &Arc<Torus> {
        &self.torus
    }

    pub fn complex_dim(&self) -> usize {
        self.m
    }

    /// `Vol(M, omega) = omega^m / m!`, the flat volume.
    pub fn kahler_volume(&self) -> f64 {
        self.torus.geometry().volume()
    }

    /// `deg E = int c_1 ^ omega^{m-1} / (m-1)!` from the declared Chern numbers.
    pub fn degree(&self) -> f64 {
        let g = self.torus.geometry();
        let dim = g.dim();
        match self.m {
            1 => self.torus.twist().chern(dim, 0, 1) as f64,
            _ => {
                let vol = g.volume();
                let c01 = self.torus.twist().chern(dim, 0, 1) as f64;
                let c23 = self.torus.twist().chern(dim, 2, 3) as f64;
                vol * (c01 / (g.length(0) * g.length(1)) + c23 / (g.length(2) * g.length(3)))
            }
        }
    }

    pub fn slope(&self) -> f64 {
        slope_lambda(self.degree(), self.torus.rank(), self.kahler_volume())
    }
}

/// `lambda = 2 pi deg / (rank Vol)`.
pub fn slope_lambda(degree: f64, rank: usize, volume: f64) -> f64 {
    2.0 * std::f64::consts::PI * degree / (rank as f64 * volume)
}

/// `dbar_E = dbar + a01` in the global frame.
#[derive(Clone, Debug)]
pub struct HolomorphicStructure {
    geometry: ComplexTorusGeometry,
    /// `beta_j(x)` at `site * m + j`.
    beta: Vec<MatrixValue>,
}

impl HolomorphicStructure {
    /// `a01 = 0`; needs a bundle without abelian flux.
    pub fn trivial(geometry: &ComplexTorusGeometry) -> Result<Self> {
        let t = geometry.torus();
        if t.twist().chern_numbers().iter().any(|&c| c != 0) {
            return Err(Error::Topology {
                mu: 0,
                nu: 1,
                detail: "a01 = 0 is not a holomorphic structure on a bundle with flux".into(),
            });
        }
        let n = t.geometry().num_sites() * geometry.m;
        Ok(Self {
            geometry: geometry.clone(),
            beta: vec![MatrixValue::zeros(t.rank()); n],
        })
    }

    /// The `(0,1)`-part of a unitary connection: `beta_j = (A_{x_j} + i A_{y_j}) / 2`.
    pub fn from_connection(geometry: &ComplexTorusGeometry, a: &ConnectionField) -> Result<Self> {
        if !a.torus().same_bundle(geometry.torus()) {
            return Err(Error::Geometry("connection lives on a different bundle".into()));
        }
        let m = geometry.m;
        let dim = 2 * m;
        let beta = (0..a.torus().geometry().num_sites())
            .flat_map(|x| {
                (0..m).map(move |j| {
                    let mut b = a.data()[x * dim + 2 * j].clone();
                    b += &a.data()[x * dim + 2 * j + 1].scale_c(I);
                    b.scale(0.5)
                })
            })
            .collect();
        let hol = Self {
            geometry: geometry.clone(),
            beta,
        };
        Ok(hol)
    }

    pub fn geometry(&self) -> &ComplexTorusGeometry {
        &self.geometry
    }

    pub fn beta(&self, site: usize, j: usize) -> &MatrixValue {
        &self.beta[site * self.geometry.m + j]
    }

    /// `beta_j` at `site +- e_mu` in the frame at `site`.
    fn beta_neighbour(&self, site: usize, j: usize, mu: usize, forward: bool) -> Cow<'_, MatrixValue> {
        let t = self.geometry.torus();
        let m = self.geometry.m;
        let (n, wrapped) = t.geometry().step(site, mu, forward);
        let v = &self.beta[n * m + j];
        if !wrapped {
            return Cow::Borrowed(v);
        }
        let shift = (t.connection_shift(mu, 2 * j) + I * t.connection_shift(mu, 2 * j + 1)) * 0.5;
        let g = t.twist().transition(mu);
        let twisted = !g.is_identity();
        if forward {
            let mut w = if twisted { g.conjugate(v) } else { v.clone() };
            w.add_scalar(shift);
            Cow::Owned(w)
        } else {
            let mut w = v.clone();
            w.add_scalar(-shift);
            Cow::Owned(if twisted { g.conjugate_inverse(&w) } else { w })
        }
    }

    /// `max |dbar beta + beta ^ beta|` over the `(0,2)` components; zero for `m = 1`.
    pub fn integrability_residual(&self) -> f64 {
        if self.geometry.m == 1 {
            return 0.0;
        }
        let g = self.geometry.torus().geometry();
        let inv2a = 0.5 / g.spacing();
        let dzbar = |x: usize, j: usize, k: usize| -> MatrixValue {
            // d/dzbar_k beta_j
            let mut dx = self.beta_neighbour(x, j, 2 * k, true).into_owned();
            dx -= &self.beta_neighbour(x, j, 2 * k, false);
            let mut dy = self.beta_neighbour(x, j, 2 * k + 1, true).into_owned();
            dy -= &self.beta_neighbour(x, j, 2 * k + 1, false);
            let mut out = dx;
            out += &dy.scale_c(I);
            out.scale(0.5 * inv2a)
        };
        (0..g.num_sites())
            .map(|x| {
                let mut r = dzbar(x, 1, 0);
                r -= &dzbar(x, 0, 1);
                r += &self.beta(x, 0).commutator(self.beta(x, 1));
                r.norm_sq().sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Positive Hermitian matrix per site.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMetricField {
    torus: Arc<Torus>,
    data: Vec<MatrixValue>,
}

impl HermitianMetricField {
    pub const HERMITIAN_TOL: f64 = 1e-12;

    pub fn identity(torus: &Arc<Torus>) -> Self {
        Self {
            torus: torus.clone(),
            data: vec![MatrixValue::identity(torus.rank()); torus.geometry().num_sites()],
        }
    }

    pub fn from_data(torus: &Arc<Torus>, data: Vec<MatrixValue>) -> Result<Self> {
        if data.len() != torus.geometry().num_sites() || data.iter().any(|v| v.rank() != torus.rank()) {
            return Err(Error::Dimension("metric field has the wrong shape".into()));
        }
        for (x, v) in data.iter().enumerate() {
            let defect = v.max_diff(&v.adjoint());
            if defect > Self::HERMITIAN_TOL * (1.0 + v.max_abs()) {
                return Err(Error::Metric(format!("H is not Hermitian at site {x} (defect {defect:.3e})")));
            }
            let e = v.min_hermitian_eigenvalue();
            if !(e > 0.0) {
                return Err(Error::Metric(format!("H is not positive at site {x} (min eigenvalue {e:.3e})")));
            }
        }
        Ok(Self {
            torus: torus.clone(),
            data,
        })
    }

    /// `exp(Psi(x))` for a smooth Hermitian `Psi` built from low Fourier modes
    /// with random coefficients of size `amplitude`. Untwisted transition maps only.
    pub fn random_smooth(torus: &Arc<Torus>, amplitude: f64, max_mode: i32, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        if torus.twist().transitions().iter().any(|g| !g.is_identity()) {
            return Err(Error::Geometry("random smooth metrics need trivial transition maps".into()));
        }
        let g = torus.geometry();
        let r = torus.rank();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        let dim = g.dim();
        let mut k = vec![-max_mode; dim];
        loop {
            if k.iter().any(|&c| c != 0) {
                let coeff = MatrixValue::from_fn(r, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                let weight = amplitude / (1.0 + k.iter().map(|c| (c * c) as f64).sum::<f64>());
                modes.push((k.clone(), coeff.scale(weight)));
            }
            let mut mu = 0;
            while mu < dim {
                k[mu] += 1;
                if k[mu] <= max_mode {
                    break;
                }
                k[mu] = -max_mode;
                mu += 1;
            }
            if mu == dim {
                break;
            }
        }
        let data = (0..g.num_sites())
            .map(|x| {
                let p = g.position(x);
                let mut psi = MatrixValue::zeros(r);
                for (k, c) in &modes {
                    let ph: f64 = (0..dim).map(|mu| 2.0 * std::f64::consts::PI * k[mu] as f64 * p[mu] / g.length(mu)).sum();
                    psi.axpy(1.0, &c.scale_c(C64::from_polar(1.0, ph)));
                }
                psi.hermitian_part().hermitian_map(f64::exp)
            })
            .collect();
        Self::from_data(torus, data)
    }

    pub fn torus(&self) -> &Arc<Torus> {
        &self.torus
    }

    pub fn values(&self) -> &[MatrixValue] {
        &self.data
    }

    /// `e^{phi(x)} H(x)`.
    pub fn conformal(&self, phi: &[f64]) -> Self {
        let data = self.data.iter().zip(phi).map(|(h, &p)| h.scale(p.exp())).collect();
        Self {
            torus: self.torus.clone(),
            data,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.data.iter().map(MatrixValue::min_hermitian_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    /// `log det H` per site, from the eigenvalues.
    pub fn log_det(&self) -> Vec<f64> {
        self.data
            .par_iter()
            .map(|h| h.hermitian_eigen().0.iter().map(|e| e.ln()).sum())
            .collect()
    }

    /// `h = H_0^{-1} H` per site.
    pub fn relative_to(&self, h0: &HermitianMetricField) -> Result<Vec<MatrixValue>> {
        self.data
            .iter()
            .zip(&h0.data)
            .map(|(h, k)| Ok(k.inverse()?.matmul(h)))
            .collect()
    }

    pub fn max_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.max_diff(b)).fold(0.0, f64::max)
    }
}

impl LatticeField for HermitianMetricField {
    fn torus(&self) -> &Arc<Torus> {
        &self.torus
    }
    fn components(&self) -> usize {
        1
    }
    fn data(&self) -> &[MatrixValue] {
        &self.data
    }
    fn representation(&self, _component: usize) -> Representation {
        ADJ
    }
}

/// Chern connection of `(H, dbar_E)`: `H`-unitary, not skew in the global frame.
#[derive(Clone, Debug)]
pub struct ChernConnection {
    /// Real components `A_{x_j} = alpha_j + beta_j`, `A_{y_j} = i (alpha_j - beta_j)`.
    pub a: ConnectionField,
    pub curvature: TwoFormField,
    /// `(1,0)` coefficients `alpha_j` at `site * m + j`.
    pub alpha: Vec<MatrixValue>,
}

fn centred<'a>(
    torus: &Torus,
    values: impl Fn(usize) -> &'a MatrixValue + Copy,
    x: usize,
    mu: usize,
    rep: Representation,
) -> MatrixValue {
    let inv2a = 0.5 / torus.geometry().spacing();
    let (_, p) = torus.fetch(values, x, &[(mu, true)], rep);
    let (_, m) = torus.fetch(values, x, &[(mu, false)], rep);
    let mut d = p.into_owned();
    d -= &m;
    d.scale(inv2a)
}

fn centred_scalar(torus: &Torus, values: &[f64], x: usize, mu: usize) -> f64 {
    let g = torus.geometry();
    let (p, _) = g.step(x, mu, true);
    let (m, _) = g.step(x, mu, false);
    (values[p] - values[m]) * 0.5 / g.spacing()
}

/// `F_{mu nu} = D_mu A_nu - D_nu A_mu + [A_mu, A_nu]` with centred differences.
fn centred_curvature(a: &ConnectionField) -> TwoFormField {
    let torus = &**a.torus();
    let g = torus.geometry();
    let dim = g.dim();
    let pairs = g.pairs();
    let data = a.data();
    let out: Vec<MatrixValue> = (0..g.num_sites())
        .into_par_iter()
        .flat_map_iter(|x| {
            pairs
                .iter()
                .map(|&(mu, nu)| {
                    let mut f = centred(torus, |s| &data[s * dim + nu], x, mu, Representation::Connection { component: nu });
                    f -= &centred(torus, |s| &data[s * dim + mu], x, nu, Representation::Connection { component: mu });
                    f += &data[x * dim + mu].commutator(&data[x * dim + nu]);
                    f
                })
                .collect::<Vec<_>>()
        })
        .collect();
    TwoFormField::from_data(a.torus(), out).expect("curvature shape")
}

fn check_pair(h: &HermitianMetricField, hol: &HolomorphicStructure) -> Result<()> {
    if !h.torus.same_bundle(hol.geometry.torus()) {
        return Err(Error::Geometry("metric and holomorphic structure live on different bundles".into()));
    }
    Ok(())
}

/// Chern connection and its curvature.
pub fn chern_connection(h: &HermitianMetricField, hol: &HolomorphicStructure) -> Result<ChernConnection> {
    check_pair(h, hol)?;
    let torus = &*h.torus;
    let g = torus.geometry();
    let m = hol.geometry.m;
    let r = torus.rank();
    let inverses: Vec<MatrixValue> = h.data.par_iter().map(|v| v.inverse()).collect::<Result<_>>()?;
    let log_det = h.log_det();
    // unit-determinant representative: its logarithmic derivative carries the tracefree part
    let unit: Vec<MatrixValue> = h.data.iter().zip(&log_det).map(|(v, l)| v.scale((-l / r as f64).exp())).collect();
    let unit_inv: Vec<MatrixValue> = inverses.iter().zip(&log_det).map(|(v, l)| v.scale((l / r as f64).exp())).collect();
    let per_site: Vec<(Vec<MatrixValue>, Vec<MatrixValue>)> = (0..g.num_sites())
        .into_par_iter()
        .map(|x| {
            let hinv = &inverses[x];
            let hx = &h.data[x];
            let mut alphas = Vec::with_capacity(m);
            let mut comps = Vec::with_capacity(2 * m);
            for j in 0..m {
                let (mx, my) = (2 * j, 2 * j + 1);
                let dxh = centred(torus, |s| &unit[s], x, mx, ADJ);
                let dyh = centred(torus, |s| &unit[s], x, my, ADJ);
                let mut dzh = dxh;
                dzh -= &dyh.scale_c(I);
                dzh.scale_mut(0.5);
                let dzl = C64::new(centred_scalar(torus, &log_det, x, mx), -centred_scalar(torus, &log_det, x, my)) * 0.5;
                let beta = hol.beta(x, j);
                let beta_adj = beta.adjoint();
                let mut raw = unit_inv[x].matmul(&dzh);
                raw -= &hinv.matmul(&beta_adj).matmul(hx);
                let mut alpha = trace_free_part(&raw);
                alpha.add_scalar((dzl - beta_adj.trace()) / r as f64);
                let ax = &alpha + beta;
                let ay = (&alpha - beta).scale_c(I);
                alphas.push(alpha);
                comps.push(ax);
                comps.push(ay);
            }
            (alphas, comps)
        })
        .collect();
    let mut alpha = Vec::with_capacity(g.num_sites() * m);
    let mut comps = Vec::with_capacity(g.num_sites() * 2 * m);
    for (al, co) in per_site {
        alpha.extend(al);
        comps.extend(co);
    }
    let a = ConnectionField::from_data(&h.torus, comps)?;
    let curvature = centred_curvature(&a);
    Ok(ChernConnection { a, curvature, alpha })
}

/// `i Lambda F = sum_j i F_{x_{2j} x_{2j+1}}` per site.
pub fn lambda_contraction(f: &TwoFormField) -> Vec<MatrixValue> {
    let g = f.torus().geometry();
    let m = g.dim() / 2;
    (0..g.num_sites())
        .map(|x| {
            let mut s = MatrixValue::zeros(f.torus().rank());
            for j in 0..m {
                s += &f.pair(x, 2 * j, 2 * j + 1).scale_c(I);
            }
            s
        })
        .collect()
}

/// `|X|_H^2 = Re tr(X H^{-1} X^* H)`.
fn h_norm_sq(x: &MatrixValue, h: &MatrixValue, hinv: &MatrixValue) -> f64 {
    x.matmul(hinv).matmul(&x.adjoint()).matmul(h).trace().re
}

/// `(||F||^2_{L^2,H}, ||F^perp||^2_{L^2,H})`.
pub fn curvature_norms(f: &TwoFormField, h: &HermitianMetricField) -> Result<(f64, f64)> {
    let g = f.torus().geometry();
    let np = g.num_pairs();
    let per_site: Vec<(f64, f64)> = (0..g.num_sites())
        .into_par_iter()
        .map(|x| {
            let hx = &h.data[x];
            let hinv = hx.inverse()?;
            let mut tot = 0.0;
            let mut perp = 0.0;
            for p in 0..np {
                let v = &f.data()[x * np + p];
                tot += h_norm_sq(v, hx, &hinv);
                perp += h_norm_sq(&trace_free_part(v), hx, &hinv);
            }
            Ok((tot, perp))
        })
        .collect::<Result<_>>()?;
    let cell = g.cell_volume();
    let (t, p) = per_site.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok((t * cell, p * cell))
}

/// `K = i Lambda F_H - lambda Id` per site.
pub fn hym_rhs(h: &HermitianMetricField, hol: &HolomorphicStructure, lambda: f64) -> Result<Vec<MatrixValue>> {
    let chern = chern_connection(h, hol)?;
    Ok(lambda_contraction(&chern.curvature)
        .into_iter()
        .map(|mut k| {
            k.add_scalar(C64::new(-lambda, 0.0));
            k
        })
        .collect())
}

/// `H^{1/2} exp(-2 dt H^{1/2} K H^{-1/2}) H^{1/2}`: exact in the determinant
/// and positive for any `dt`.
fn exponential_update(h: &HermitianMetricField, k: &[MatrixValue], dt: f64) -> HermitianMetricField {
    let data = h
        .data
        .par_iter()
        .zip(k.par_iter())
        .map(|(hx, kx)| {
            let s = hx.hermitian_map(f64::sqrt);
            let sinv = hx.hermitian_map(|e| 1.0 / e.sqrt());
            let gen = s.matmul(kx).matmul(&sinv).hermitian_part().scale(-2.0 * dt);
            let e = gen.hermitian_map(f64::exp);
            s.matmul(&e).matmul(&s).hermitian_part()
        })
        .collect();
    HermitianMetricField {
        torus: h.torus.clone(),
        data,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HymConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_end: f64,
    /// Local error target, relative to `max |H|`.
    pub tolerance: f64,
    /// Steps whose minimum eigenvalue falls below this are rejected.
    pub eig_floor: f64,
    pub cadence: u64,
    pub max_steps: u64,
}

impl Default for HymConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-4,
            dt_min: 1e-12,
            dt_max: 1e-2,
            t_end: 1.0,
            tolerance: 1e-5,
            eig_floor: 1e-8,
            cadence: 10,
            max_steps: 1_000_000,
        }
    }
}

impl HymConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(Error::Config("need 0 < dt_min <= dt_init <= dt_max".into()));
        }
        if !(self.tolerance > 0.0 && self.eig_floor > 0.0 && self.t_end >= 0.0 && self.cadence > 0) {
            return Err(Error::Config("invalid HYM tolerances".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HymState {
    pub t: f64,
    pub h: HermitianMetricField,
    pub dt: f64,
    pub accepted: u64,
    pub rejected: u64,
}

impl HymState {
    pub fn new(h: HermitianMetricField, dt: f64) -> Self {
        Self {
            t: 0.0,
            h,
            dt,
            accepted: 0,
            rejected: 0,
        }
    }
}

/// Stable step bound of the exponential update near a Hermitian-Einstein
/// metric: there `log H` follows `sum_mu D_mu^2`, whose symbol reaches
/// `-n / a^2`. Includes a 10% margin.
pub fn hym_stability_limit(geometry: &crate::lattice::LatticeGeometry) -> f64 {
    let a = geometry.spacing();
    0.9 * 2.0 * a * a / geometry.dim() as f64
}

/// One accepted step with step-doubling error control; returns the step taken.
pub fn hym_step(state: &mut HymState, hol: &HolomorphicStructure, lambda: f64, config: &HymConfig) -> Result<f64> {
    let dt_max = config
        .dt_max
        .min(hym_stability_limit(state.h.torus.geometry()))
        .max(config.dt_min);
    let mut dt = state.dt.clamp(config.dt_min, dt_max);
    if config.t_end > state.t {
        dt = dt.min(config.t_end - state.t);
    }
    let k0 = hym_rhs(&state.h, hol, lambda)?;
    let scale = state.h.data.iter().map(MatrixValue::max_abs).fold(0.0, f64::max);
    loop {
        let full = exponential_update(&state.h, &k0, dt);
        let half = exponential_update(&state.h, &k0, 0.5 * dt);
        let k_half = hym_rhs(&half, hol, lambda)?;
        let two = exponential_update(&half, &k_half, 0.5 * dt);
        let err = full.max_diff(&two) / scale;
        let ok = err.is_finite() && err <= config.tolerance && two.min_eigenvalue() >= config.eig_floor;
        if ok {
            state.h = two;
            state.t += dt;
            state.accepted += 1;
            let grow = if err > 0.0 { (0.9 * (config.tolerance / err).sqrt()).clamp(1.0, 2.0) } else { 2.0 };
            state.dt = (dt.max(state.dt) * grow).min(dt_max);
            return Ok(dt);
        }
        state.rejected += 1;
        if dt <= config.dt_min {
            return Err(Error::Stiff { t: state.t, dt });
        }
        dt = (0.5 * dt).max(config.dt_min);
        state.dt = dt;
    }
}

/// `H_0 = e^phi K_0` with `i Lambda tr F_{H_0} = r lambda`; returns `(H_0, phi)`.
pub fn conformal_normalize(k0: &HermitianMetricField, hol: &HolomorphicStructure) -> Result<(HermitianMetricField, Vec<f64>)> {
    check_pair(k0, hol)?;
    let geom = &hol.geometry;
    let r = k0.torus.rank() as f64;
    let lambda = geom.slope();
    let chern = chern_connection(k0, hol)?;
    let trace: Vec<C64> = lambda_contraction(&chern.curvature).iter().map(MatrixValue::trace).collect();
    if let Some(bad) = trace.iter().find(|z| z.im.abs() > 1e-8 * (1.0 + z.re.abs())) {
        return Err(Error::Solver(format!("i Lambda tr F has imaginary part {:.3e}", bad.im)));
    }
    // i Lambda tr F_{e^phi K} = i Lambda tr F_K - (r/2) sum_mu D_mu^2 phi
    let rhs: Vec<f64> = trace.iter().map(|z| 2.0 / r * (z.re - r * lambda)).collect();
    let phi = solve_centered_poisson(geom.torus().geometry(), &rhs)?;
    let h0 = k0.conformal(&phi);
    let residual = balance_residual(&h0, hol)?;
    if residual > 1e-8 {
        return Err(Error::Solver(format!("conformal normalisation residual {residual:.3e}")));
    }
    Ok((h0, phi))
}

/// `max |i Lambda tr F_H - r lambda|`.
pub fn balance_residual(h: &HermitianMetricField, hol: &HolomorphicStructure) -> Result<f64> {
    let r = h.torus.rank() as f64;
    let lambda = hol.geometry.slope();
    let chern = chern_connection(h, hol)?;
    Ok(lambda_contraction(&chern.curvature)
        .iter()
        .map(|k| (k.trace() - r * lambda).norm())
        .fold(0.0, f64::max))
}

/// `d(D_z f)` for a periodic scalar: the discrete `dbar d f` as a two-form
/// (per site, pair order).
pub fn ddbar_scalar(torus: &Torus, f: &[f64]) -> Vec<C64> {
    let g = torus.geometry();
    let m = g.dim() / 2;
    let comps: Vec<C64> = (0..g.num_sites())
        .flat_map(|x| {
            (0..m).flat_map(move |j| {
                let dz = C64::new(centred_scalar(torus, f, x, 2 * j), -centred_scalar(torus, f, x, 2 * j + 1)) * 0.5;
                [dz, I * dz]
            })
        })
        .collect();
    let dim = g.dim();
    let inv2a = 0.5 / g.spacing();
    let d = |x: usize, mu: usize, comp: usize| -> C64 {
        let (p, _) = g.step(x, mu, true);
        let (q, _) = g.step(x, mu, false);
        (comps[p * dim + comp] - comps[q * dim + comp]) * inv2a
    };
    (0..g.num_sites())
        .flat_map(|x| g.pairs().into_iter().map(move |(mu, nu)| d(x, mu, nu) - d(x, nu, mu)))
        .collect()
}

/// `max |tr F_H - tr F_{H_0} - dbar d log det h|`.
pub fn trace_identity_residual(
    h: &HermitianMetricField,
    h0: &HermitianMetricField,
    hol: &HolomorphicStructure,
) -> Result<f64> {
    let f = chern_connection(h, hol)?.curvature;
    let f0 = chern_connection(h0, hol)?.curvature;
    let ld: Vec<f64> = h.log_det().iter().zip(h0.log_det()).map(|(a, b)| a - b).collect();
    let dd = ddbar_scalar(&h.torus, &ld);
    Ok(f.data()
        .iter()
        .zip(f0.data())
        .zip(&dd)
        .map(|((a, b), c)| (a.trace() - b.trace() - c).norm())
        .fold(0.0, f64::max))
}

/// `h^{-1} d_{H_0} h` as `(1,0)` coefficients `B_j` at `site * m + j`.
fn relative_one_form(
    h: &HermitianMetricField,
    h0: &HermitianMetricField,
    chern0: &ChernConnection,
    m: usize,
) -> Result<Vec<MatrixValue>> {
    let torus = &*h.torus;
    let rel = h.relative_to(h0)?;
    let inv: Vec<MatrixValue> = rel.iter().map(|v| v.inverse()).collect::<Result<_>>()?;
    Ok((0..torus.geometry().num_sites())
        .flat_map(|x| {
            let rel = &rel;
            let inv = &inv;
            (0..m).map(move |j| {
                let dx = centred(torus, |s| &rel[s], x, 2 * j, ADJ);
                let dy = centred(torus, |s| &rel[s], x, 2 * j + 1, ADJ);
                let mut dz = dx;
                dz -= &dy.scale_c(I);
                dz.scale_mut(0.5);
                dz += &chern0.alpha[x * m + j].commutator(&rel[x]);
                inv[x].matmul(&dz)
            })
        })
        .collect())
}

/// `max |A_H - A_{H_0} - h^{-1} d_{H_0} h|` over real components.
pub fn connection_identity_residual(
    h: &HermitianMetricField,
    h0: &HermitianMetricField,
    hol: &HolomorphicStructure,
) -> Result<f64> {
    let m = hol.geometry.m;
    let c = chern_connection(h, hol)?;
    let c0 = chern_connection(h0, hol)?;
    let b = relative_one_form(h, h0, &c0, m)?;
    let dim = 2 * m;
    let mut worst = 0.0f64;
    for (i, (a, a0)) in c.a.data().iter().zip(c0.a.data()).enumerate() {
        let (x, mu) = (i / dim, i % dim);
        let bj = &b[x * m + mu / 2];
        let expected = if mu % 2 == 0 { bj.clone() } else { bj.scale_c(I) };
        let mut d = a - a0;
        d -= &expected;
        worst = worst.max(d.max_abs());
    }
    Ok(worst)
}

/// `F(d/dz_j, d/dzbar_k)` of a two-form from its real components.
pub fn mixed_component(f: &TwoFormField, x: usize, j: usize, k: usize) -> MatrixValue {
    let get = |mu: usize, nu: usize| -> MatrixValue {
        if mu == nu {
            MatrixValue::zeros(f.torus().rank())
        } else if mu < nu {
            f.pair(x, mu, nu).clone()
        } else {
            f.pair(x, nu, mu).scale(-1.0)
        }
    };
    let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
    let mut out = get(xj, xk);
    out += &get(xj, yk).scale_c(I);
    out -= &get(yj, xk).scale_c(I);
    out += &get(yj, yk);
    out.scale(0.25)
}

/// `max |(F_H - F_{H_0}) - dbar_E(h^{-1} d_{H_0} h)|` over the `(1,1)` components.
pub fn curvature_identity_residual(
    h: &HermitianMetricField,
    h0: &HermitianMetricField,
    hol: &HolomorphicStructure,
) -> Result<f64> {
    let torus = &*h.torus;
    let m = hol.geometry.m;
    let c = chern_connection(h, hol)?;
    let c0 = chern_connection(h0, hol)?;
    let b = relative_one_form(h, h0, &c0, m)?;
    let mut worst = 0.0f64;
    for x in 0..torus.geometry().num_sites() {
        for j in 0..m {
            for k in 0..m {
                // (dbar_E B)(d/dz_j, d/dzbar_k) = -(d/dzbar_k B_j + [beta_k, B_j])
                let dx = centred(torus, |s| &b[s * m + j], x, 2 * k, ADJ);
                let dy = centred(torus, |s| &b[s * m + j], x, 2 * k + 1, ADJ);
                let mut dbar = dx;
                dbar += &dy.scale_c(I);
                dbar.scale_mut(0.5);
                dbar += &hol.beta(x, k).commutator(&b[x * m + j]);
                let mut d = mixed_component(&c.curvature, x, j, k);
                d -= &mixed_component(&c0.curvature, x, j, k);
                d += &dbar;
                worst = worst.max(d.max_abs());
            }
        }
    }
    Ok(worst)
}

/// The Yang-Mills picture of an HYM state: `sigma = h^{1/2}` (the
/// `H_0`-positive root) and the conjugated curvature `sigma F_H sigma^{-1}`.
#[derive(Clone, Debug)]
pub struct YmFromHym {
    pub sigma: Vec<MatrixValue>,
    pub curvature: TwoFormField,
}

pub fn ym_from_hym(h: &HermitianMetricField, h0: &HermitianMetricField, hol: &HolomorphicStructure) -> Result<YmFromHym> {
    check_pair(h, hol)?;
    let f = chern_connection(h, hol)?.curvature;
    let np = h.torus.geometry().num_pairs();
    let sig: Vec<(MatrixValue, MatrixValue)> = h
        .data
        .par_iter()
        .zip(h0.data.par_iter())
        .map(|(hx, k)| {
            let k_half = k.hermitian_map(f64::sqrt);
            let k_mhalf = k.hermitian_map(|e| 1.0 / e.sqrt());
            let s = k_mhalf.matmul(hx).matmul(&k_mhalf).hermitian_part();
            if !(s.min_hermitian_eigenvalue() > 0.0) {
                return Err(Error::Metric("h is not positive".into()));
            }
            let root = s.hermitian_map(f64::sqrt);
            let root_inv = s.hermitian_map(|e| 1.0 / e.sqrt());
            Ok((k_mhalf.matmul(&root).matmul(&k_half), k_mhalf.matmul(&root_inv).matmul(&k_half)))
        })
        .collect::<Result<_>>()?;
    let data = f
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (s, sinv) = &sig[i / np];
            s.matmul(v).matmul(sinv)
        })
        .collect();
    Ok(YmFromHym {
        sigma: sig.into_iter().map(|p| p.0).collect(),
        curvature: TwoFormField::from_data(&h.torus, data)?,
    })
}

/// One row of HYM monitor output.
#[derive(Clone, Debug, PartialEq)]
pub struct HymRecord {
    pub step: u64,
    pub t: f64,
    pub dt: f64,
    pub energy: f64,
    pub min_eig: f64,
    pub det_h_drift: f64,
    pub trace_identity_residual: f64,
    pub tracefree_l2: f64,
    pub balance_inf: f64,
    pub lambda: f64,
}

pub fn hym_record(state: &HymState, h0: &HermitianMetricField, hol: &HolomorphicStructure) -> Result<HymRecord> {
    let lambda = hol.geometry.slope();
    let chern = chern_connection(&state.h, hol)?;
    let (energy, perp) = curvature_norms(&chern.curvature, &state.h)?;
    let det_h_drift = state
        .h
        .relative_to(h0)?
        .iter()
        .map(|v| (v.determinant() - 1.0).norm())
        .fold(0.0, f64::max);
    let balance_inf = lambda_contraction(&chern.curvature)
        .iter()
        .map(|k| {
            let mut k = k.clone();
            k.add_scalar(C64::new(-lambda, 0.0));
            k.max_abs()
        })
        .fold(0.0, f64::max);
    Ok(HymRecord {
        step: state.accepted,
        t: state.t,
        dt: state.dt,
        energy,
        min_eig: state.h.min_eigenvalue(),
        det_h_drift,
        trace_identity_residual: trace_identity_residual(&state.h, h0, hol)?,
        tracefree_l2: perp.sqrt(),
        balance_inf,
        lambda,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum HymOutcome {
    Finished,
    StiffStop { t: f64, dt: f64 },
    MaxSteps,
}

/// Integrates to `t_end`, emitting a record at the start, every `cadence`
/// accepted steps and at the end.
pub fn run_hym(
    state: &mut HymState,
    h0: &HermitianMetricField,
    hol: &HolomorphicStructure,
    config: &HymConfig,
    sink: &mut dyn FnMut(&HymState, &HymRecord) -> Result<()>,
) -> Result<HymOutcome> {
    config.validate()?;
    let lambda = hol.geometry.slope();
    sink(state, &hym_record(state, h0, hol)?)?;
    let mut since = 0;
    let outcome = loop {
        if state.t >= config.t_end {
            break HymOutcome::Finished;
        }
        if state.accepted >= config.max_steps {
            break HymOutcome::MaxSteps;
        }
        match hym_step(state, hol, lambda, config) {
            Ok(_) => {
                since += 1;
                if since >= config.cadence {
                    since = 0;
                    sink(state, &hym_record(state, h0, hol)?)?;
                }
            }
            Err(Error::Stiff { t, dt }) => break HymOutcome::StiffStop { t, dt },
            Err(e) => return Err(e),
        }
    };
    if since > 0 {
        sink(state, &hym_record(state, h0, hol)?)?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_torus, constant_curvature_connection, LatticeGeometry, TwistCocycle};
    use crate::spectral::fft_nd;
    use std::f64::consts::PI;

    fn plane(side: usize, rank: usize, flux: i64) -> ComplexTorusGeometry {
        let g = LatticeGeometry::cubic(2, side, 1.0 / side as f64).unwrap();
        let twist = if flux == 0 {
            TwistCocycle::untwisted(2, rank, ScalarKind::Complex)
        } else {
            TwistCocycle::abelian(2, rank, &[(0, 1, flux)])
        };
        ComplexTorusGeometry::new(&build_torus(g, twist).unwrap()).unwrap()
    }

    fn scalar_field(g: &LatticeGeometry, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..g.num_sites())
            .map(|s| {
                let p = g.position(s);
                f(p[0], p[1])
            })
            .collect()
    }

    fn psi(x: f64, y: f64) -> f64 {
        0.3 * (2.0 * PI * x).sin() + 0.2 * (2.0 * PI * (x + y)).cos() - 0.1 * (4.0 * PI * y).sin()
    }

    /// Continuum `(1/4) Laplacian psi`.
    fn quarter_lap_psi(x: f64, y: f64) -> f64 {
        let k1 = 4.0 * PI * PI;
        0.25 * (-0.3 * k1 * (2.0 * PI * x).sin() - 0.2 * 2.0 * k1 * (2.0 * PI * (x + y)).cos() + 0.1 * 4.0 * k1 * (4.0 * PI * y).sin())
    }

    #[test]
    fn slope_examples() {
        assert_eq!(slope_lambda(0.0, 2, 1.0), 0.0);
        assert!((slope_lambda(1.0, 1, 2.0 * PI) - 1.0).abs() < 1e-15);
        assert!((slope_lambda(1.0, 2, 1.0) - PI).abs() < 1e-15);
        assert!((plane(8, 1, 1).slope() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn geometry_checks() {
        let g = LatticeGeometry::cubic(3, 4, 0.25).unwrap();
        let t = build_torus(g, TwistCocycle::untwisted(3, 2, ScalarKind::Complex)).unwrap();
        assert!(ComplexTorusGeometry::new(&t).is_err());
        let g = LatticeGeometry::cubic(2, 4, 0.25).unwrap();
        let t = build_torus(g, TwistCocycle::untwisted(2, 2, ScalarKind::Real)).unwrap();
        assert!(matches!(ComplexTorusGeometry::new(&t), Err(Error::UnsupportedKind(_))));
    }

    #[test]
    fn identity_metric_trivial_structure_is_flat() {
        let geom = plane(8, 2, 0);
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let c = chern_connection(&HermitianMetricField::identity(geom.torus()), &hol).unwrap();
        assert_eq!(c.a.sup_norm(), 0.0);
        assert!(c.curvature.data().iter().all(|v| v.max_abs() == 0.0));
    }

    #[test]
    fn abelian_curvature_matches_mixed_derivative() {
        // r = 1, H = e^psi: F_xy = 2i dzbar dz psi = (i/2) Laplacian psi
        let err = |side| {
            let geom = plane(side, 1, 0);
            let g = geom.torus().geometry();
            let hol = HolomorphicStructure::trivial(&geom).unwrap();
            let h = HermitianMetricField::identity(geom.torus()).conformal(&scalar_field(g, psi));
            let f = chern_connection(&h, &hol).unwrap().curvature;
            let exact = scalar_field(g, |x, y| 2.0 * quarter_lap_psi(x, y));
            f.data()
                .iter()
                .zip(&exact)
                .map(|(v, e)| (v.get(0, 0) - C64::new(0.0, *e)).norm())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(32), err(64));
        assert!(e2 < 0.05 * 2.0 * 0.25 * 4.0 * PI * PI);
        assert!((3.5..4.5).contains(&(e1 / e2)), "{e1} {e2}");
    }

    #[test]
    fn abelian_curvature_matches_spectral_oracle() {
        // the centred stencil is diagonal in Fourier space: symbol -sin^2 / a^2
        let geom = plane(16, 1, 0);
        let g = geom.torus().geometry();
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let p = scalar_field(g, psi);
        let h = HermitianMetricField::identity(geom.torus()).conformal(&p);
        let f = chern_connection(&h, &hol).unwrap().curvature;
        let mut hat: Vec<C64> = p.iter().map(|&v| C64::new(v, 0.0)).collect();
        fft_nd(&mut hat, g.sizes(), false);
        for (mode, v) in hat.iter_mut().enumerate() {
            *v *= 0.5 * crate::spectral::centered_laplacian_symbol(g, mode);
        }
        fft_nd(&mut hat, g.sizes(), true);
        for (v, e) in f.data().iter().zip(&hat) {
            assert!((v.get(0, 0) - I * e.re).norm() < 1e-10);
        }
    }

    #[test]
    fn scaling_metric_leaves_curvature() {
        let geom = plane(8, 2, 0);
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let h = HermitianMetricField::random_smooth(geom.torus(), 0.5, 1, 3).unwrap();
        let f1 = chern_connection(&h, &hol).unwrap().curvature;
        let n = geom.torus().geometry().num_sites();
        let f2 = chern_connection(&h.conformal(&vec![1.7; n]), &hol).unwrap().curvature;
        assert!(f1.max_diff(&f2) < 1e-10);
    }

    #[test]
    fn non_positive_metric_is_rejected() {
        let geom = plane(4, 2, 0);
        let mut data = vec![MatrixValue::identity(2); 16];
        data[3] = MatrixValue::diag(&[C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]);
        assert!(matches!(HermitianMetricField::from_data(geom.torus(), data), Err(Error::Metric(_))));
    }

    fn hermite_einstein(side: usize, rank: usize, flux: i64) -> (ComplexTorusGeometry, HolomorphicStructure) {
        let geom = plane(side, rank, flux);
        let a = constant_curvature_connection(geom.torus()).unwrap();
        let hol = HolomorphicStructure::from_connection(&geom, &a).unwrap();
        (geom, hol)
    }

    #[test]
    fn constant_curvature_line_bundle_is_fixed_point() {
        let (geom, hol) = hermite_einstein(16, 1, 1);
        let h = HermitianMetricField::identity(geom.torus());
        let k = hym_rhs(&h, &hol, geom.slope()).unwrap();
        assert!(k.iter().all(|v| v.max_abs() < 1e-12));
        let mut state = HymState::new(h.clone(), 1e-3);
        hym_step(&mut state, &hol, geom.slope(), &HymConfig::default()).unwrap();
        assert!(state.h.max_diff(&h) < 1e-12);
    }

    #[test]
    fn determinant_law_per_step() {
        let geom = plane(16, 2, 0);
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let h = HermitianMetricField::random_smooth(geom.torus(), 0.4, 1, 9).unwrap();
        let k = hym_rhs(&h, &hol, 0.0).unwrap();
        let resid = |dt: f64| {
            let next = exponential_update(&h, &k, dt);
            let l0 = h.log_det();
            let l1 = next.log_det();
            l0.iter()
                .zip(&l1)
                .zip(&k)
                .map(|((a, b), kk)| ((b - a) / dt + 2.0 * kk.trace().re).abs())
                .fold(0.0, f64::max)
        };
        // the exponential update satisfies the law exactly per step
        assert!(resid(1e-3) < 1e-8);
    }

    #[test]
    fn abelian_flow_matches_spectral_heat_flow() {
        // r = 1: phi_t = sum_mu D_mu^2 phi + 2 lambda with phi = log H
        let geom = plane(16, 1, 0);
        let g = geom.torus().geometry();
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let p0 = scalar_field(g, psi);
        let mut state = HymState::new(HermitianMetricField::identity(geom.torus()).conformal(&p0), 1e-5);
        let cfg = HymConfig {
            t_end: 0.01,
            tolerance: 1e-7,
            ..Default::default()
        };
        while state.t < cfg.t_end {
            hym_step(&mut state, &hol, 0.0, &cfg).unwrap();
        }
        let mut hat: Vec<C64> = p0.iter().map(|&v| C64::new(v, 0.0)).collect();
        fft_nd(&mut hat, g.sizes(), false);
        for (mode, v) in hat.iter_mut().enumerate() {
            *v *= (crate::spectral::centered_laplacian_symbol(g, mode) * state.t).exp();
        }
        fft_nd(&mut hat, g.sizes(), true);
        let logh = state.h.log_det();
        let err = logh.iter().zip(&hat).map(|(a, b)| (a - b.re).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn conformal_normalisation_recovers_scalar_factor() {
        let geom = plane(16, 1, 0);
        let g = geom.torus().geometry();
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let p = scalar_field(g, psi);
        let k0 = HermitianMetricField::identity(geom.torus()).conformal(&p);
        let (h0, phi) = conformal_normalize(&k0, &hol).unwrap();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        for (a, b) in phi.iter().zip(&p) {
            assert!((a + b - mean).abs() < 1e-10);
        }
        assert!(balance_residual(&h0, &hol).unwrap() < 1e-8);
        // already balanced
        let (_, phi) = conformal_normalize(&HermitianMetricField::identity(geom.torus()), &hol).unwrap();
        assert!(phi.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn conformal_normalisation_keeps_tracefree_curvature() {
        let geom = plane(16, 2, 0);
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let k0 = HermitianMetricField::random_smooth(geom.torus(), 0.5, 2, 4).unwrap();
        let (h0, _) = conformal_normalize(&k0, &hol).unwrap();
        let f0 = chern_connection(&k0, &hol).unwrap().curvature;
        let f1 = chern_connection(&h0, &hol).unwrap().curvature;
        let (_, p0) = curvature_norms(&f0, &k0).unwrap();
        let (_, p1) = curvature_norms(&f1, &h0).unwrap();
        assert!((p0 - p1).abs() < 1e-10 * (1.0 + p0));
    }

    #[test]
    fn conformal_normalisation_in_flux_sector() {
        let (geom, hol) = hermite_einstein(16, 2, 2);
        let k0 = HermitianMetricField::random_smooth(geom.torus(), 0.5, 1, 8).unwrap();
        let (h0, _) = conformal_normalize(&k0, &hol).unwrap();
        assert!(balance_residual(&h0, &hol).unwrap() < 1e-8);
    }

    #[test]
    fn trace_identity_is_exact_on_the_lattice() {
        let geom = plane(16, 2, 0);
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let h0 = HermitianMetricField::random_smooth(geom.torus(), 0.5, 1, 1).unwrap();
        assert_eq!(trace_identity_residual(&h0, &h0, &hol).unwrap(), 0.0);
        let h = HermitianMetricField::random_smooth(geom.torus(), 0.5, 1, 2).unwrap();
        assert!(trace_identity_residual(&h, &h0, &hol).unwrap() < 1e-10);
    }

    #[test]
    fn discrete_ddbar_converges_to_continuum() {
        // H = e^psi H_0, r = 1: tr F_H - tr F_{H_0} against the exact (i/2) Laplacian psi
        let err = |side| {
            let geom = plane(side, 1, 0);
            let g = geom.torus().geometry();
            let dd = ddbar_scalar(geom.torus(), &scalar_field(g, psi));
            let exact = scalar_field(g, |x, y| 2.0 * quarter_lap_psi(x, y));
            dd.iter().zip(&exact).map(|(a, e)| (a - I * e).norm()).fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((3.5..4.5).contains(&ratio));
    }

    #[test]
    fn connection_and_curvature_identities_converge() {
        let res = |side| {
            let geom = plane(side, 2, 0);
            let hol = HolomorphicStructure::trivial(&geom).unwrap();
            let h0 = HermitianMetricField::random_smooth(geom.torus(), 0.4, 1, 5).unwrap();
            let h = HermitianMetricField::random_smooth(geom.torus(), 0.4, 1, 6).unwrap();
            (
                connection_identity_residual(&h, &h0, &hol).unwrap(),
                curvature_identity_residual(&h, &h0, &hol).unwrap(),
                connection_identity_residual(&h0, &h0, &hol).unwrap(),
            )
        };
        let (c1, k1, z) = res(32);
        let (c2, k2, _) = res(64);
        assert!(z < 1e-12);
        assert!((3.0..5.0).contains(&(c1 / c2)), "{c1} {c2}");
        assert!((3.0..5.0).contains(&(k1 / k2)), "{k1} {k2}");
    }

    #[test]
    fn ym_picture_examples() {
        let geom = plane(8, 2, 0);
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let h0 = HermitianMetricField::random_smooth(geom.torus(), 0.4, 1, 5).unwrap();
        let same = ym_from_hym(&h0, &h0, &hol).unwrap();
        let f0 = chern_connection(&h0, &hol).unwrap().curvature;
        assert!(same.sigma.iter().all(|s| s.max_diff(&MatrixValue::identity(2)) < 1e-12));
        assert!(same.curvature.max_diff(&f0) < 1e-12);

        let h = HermitianMetricField::random_smooth(geom.torus(), 0.4, 1, 6).unwrap();
        let y = ym_from_hym(&h, &h0, &hol).unwrap();
        let f = chern_connection(&h, &hol).unwrap().curvature;
        // |sigma F sigma^{-1}|_{H_0} = |F|_H pointwise
        let np = 1;
        for x in 0..64 {
            let h0x = &h0.values()[x];
            let hx = &h.values()[x];
            let a = h_norm_sq(y.curvature.pair(x, 0, 1), h0x, &h0x.inverse().unwrap());
            let b = h_norm_sq(&f.data()[x * np], hx, &hx.inverse().unwrap());
            assert!((a - b).abs() < 1e-10 * (1.0 + b));
            // sigma^{*H0} sigma = h
            let s = &y.sigma[x];
            let lhs = h0x.inverse().unwrap().matmul(&s.adjoint()).matmul(h0x).matmul(s);
            let rel = h0x.inverse().unwrap().matmul(hx);
            assert!(lhs.max_diff(&rel) < 1e-10);
        }

        // abelian: conjugation is trivial
        let g1 = plane(8, 1, 0);
        let hol1 = HolomorphicStructure::trivial(&g1).unwrap();
        let a = HermitianMetricField::random_smooth(g1.torus(), 0.4, 1, 1).unwrap();
        let b = HermitianMetricField::random_smooth(g1.torus(), 0.4, 1, 2).unwrap();
        let y = ym_from_hym(&a, &b, &hol1).unwrap();
        assert!(y.curvature.max_diff(&chern_connection(&a, &hol1).unwrap().curvature) < 1e-12);
    }

    #[test]
    fn integrability_of_flux_structures() {
        let g = LatticeGeometry::cubic(4, 4, 0.25).unwrap();
        let t = build_torus(g.clone(), TwistCocycle::abelian(4, 1, &[(0, 1, 1), (2, 3, 2)])).unwrap();
        let geom = ComplexTorusGeometry::new(&t).unwrap();
        let hol = HolomorphicStructure::from_connection(&geom, &constant_curvature_connection(&t).unwrap()).unwrap();
        assert!(hol.integrability_residual() < 1e-10);
        assert!((geom.degree() - 3.0).abs() < 1e-12);
        // flux mixing the two complex lines has a (0,2) part
        let t = build_torus(g, TwistCocycle::abelian(4, 1, &[(0, 2, 1)])).unwrap();
        let geom = ComplexTorusGeometry::new(&t).unwrap();
        let hol = HolomorphicStructure::from_connection(&geom, &constant_curvature_connection(&t).unwrap()).unwrap();
        assert!(hol.integrability_residual() > 1.0);
    }

    #[test]
    fn flow_keeps_determinant_and_positivity_in_two_complex_dimensions() {
        let g = LatticeGeometry::cubic(4, 6, 1.0 / 6.0).unwrap();
        let t = build_torus(g, TwistCocycle::untwisted(4, 2, ScalarKind::Complex)).unwrap();
        let geom = ComplexTorusGeometry::new(&t).unwrap();
        let hol = HolomorphicStructure::trivial(&geom).unwrap();
        let k0 = HermitianMetricField::random_smooth(&t, 0.3, 1, 2).unwrap();
        let (h0, _) = conformal_normalize(&k0, &hol).unwrap();
        let mut state = HymState::new(h0.clone(), 1e-4);
        let cfg = HymConfig {
            t_end: 0.01,
            cadence: 5,
            ..Default::default()
        };
        let mut recs = Vec::new();
        run_hym(&mut state, &h0, &hol, &cfg, &mut |_, r| {
            recs.push(r.clone());
            Ok(())
        })
        .unwrap();
        for r in &recs {
            assert!(r.det_h_drift < 1e-10);
            assert!(r.min_eig > 0.0);
            assert!(r.trace_identity_residual < 1e-8);
        }
        for w in recs.windows(2) {
            assert!(w[1].tracefree_l2 <= w[0].tracefree_l2 * (1.0 + 1e-9));
        }
    }
}
