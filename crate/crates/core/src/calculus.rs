//! Covariant lattice calculus: curvature, Bianchi residual, the Yang-Mills
//! gradient, gauge action and Chern integrals.
//!
//! The curvature of the plaquette spanned by `(l, k)`, `l < k`, at `x` is
//!
//! ```text
//! F_lk(x) = (A_k(x+l) - A_k(x))/a - (A_l(x+k) - A_l(x))/a + [P, Q]
//! P = (A_l(x) + A_l(x+k))/2,  Q = (A_k(x) + A_k(x+l))/2
//! ```
//!
//! with neighbour values carried into the frame at `x` across twisted faces.
//! Both the differences and the commutator are centred at the plaquette
//! centre, so `F` is second-order accurate there and constant connections
//! give `F = [A_l, A_k]` exactly.
//!
//! [`ym_gradient`] is obtained by differentiating the discrete energy by
//! hand. It equals the discrete `D_A^* F_A`, i.e. half the `L^2` gradient:
//! `d/ds energy(A + sB) = 2 <ym_gradient(A), B>`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{ConnectionField, GaugeField, LatticeField, Representation, Torus, TwoFormField};
use crate::lie::{skew_part, MatrixValue, ScalarKind, C64};

const ADJ: Representation = Representation::Adjoint;

fn conn(mu: usize) -> Representation {
    Representation::Connection { component: mu }
}

/// Plaquette data at a site: the curvature and the two averaged links.
struct Plaquette {
    f: MatrixValue,
    p: MatrixValue,
    q: MatrixValue,
}

#[inline]
fn plaquette(torus: &Torus, a: &ConnectionField, x: usize, l: usize, k: usize) -> Plaquette {
    let dim = torus.dim();
    let inv_a = 1.0 / torus.geometry().spacing();
    let data = a.data();
    let al = &data[x * dim + l];
    let ak = &data[x * dim + k];
    let (_, ak_l) = torus.fetch(|s| &data[s * dim + k], x, &[(l, true)], conn(k));
    let (_, al_k) = torus.fetch(|s| &data[s * dim + l], x, &[(k, true)], conn(l));

    let mut p = al + &al_k;
    p.scale_mut(0.5);
    let mut q = ak + &ak_l;
    q.scale_mut(0.5);

    let mut f = p.commutator(&q);
    f.axpy(inv_a, &ak_l);
    f.axpy(-inv_a, ak);
    f.axpy(-inv_a, &al_k);
    f.axpy(inv_a, al);
    Plaquette { f, p, q }
}

/// Scratch buffers for repeated curvature and gradient evaluation on one torus.
pub struct CalculusWorkspace {
    torus: Arc<Torus>,
    /// per site and direction: contributions from plaquettes based at the site
    local: Vec<MatrixValue>,
    /// per site and pair: contributions to the two far links of the plaquette
    far: Vec<MatrixValue>,
    /// per site: `sum_{l<k} |F_lk|^2`
    density: Vec<f64>,
}

impl CalculusWorkspace {
    pub fn new(torus: &Arc<Torus>) -> Self {
        let g = torus.geometry();
        let zero = MatrixValue::zeros(torus.rank());
        Self {
            torus: torus.clone(),
            local: vec![zero.clone(); g.num_sites() * g.dim()],
            far: vec![zero; g.num_sites() * g.num_pairs() * 2],
            density: vec![0.0; g.num_sites()],
        }
    }

    pub fn torus(&self) -> &Arc<Torus> {
        &self.torus
    }

    fn check(&self, a: &ConnectionField) {
        assert!(
            Arc::ptr_eq(a.torus(), &self.torus) || a.torus().same_bundle(&self.torus),
            "field lives on a different torus"
        );
    }

    pub fn curvature(&self, a: &ConnectionField) -> TwoFormField {
        self.check(a);
        let torus = &*self.torus;
        let g = torus.geometry();
        let pairs = g.pairs();
        let np = pairs.len();
        let mut data = vec![MatrixValue::zeros(torus.rank()); g.num_sites() * np];
        data.par_chunks_mut(np).enumerate().for_each(|(x, out)| {
            for (p, &(l, k)) in pairs.iter().enumerate() {
                out[p] = skew_part(&plaquette(torus, a, x, l, k).f);
            }
        });
        TwoFormField::from_data(&self.torus, data).expect("curvature shape")
    }

    /// Discrete `D_A^* F_A`; see the module docs for the normalisation.
    pub fn ym_gradient(&mut self, a: &ConnectionField) -> ConnectionField {
        self.gradient_and_energy(a).0
    }

    /// The gradient together with the energy of `A`, from a single sweep.
    pub fn gradient_and_energy(&mut self, a: &ConnectionField) -> (ConnectionField, f64) {
        self.check(a);
        let torus = &*self.torus;
        let g = torus.geometry();
        let dim = g.dim();
        let pairs = g.pairs();
        let np = pairs.len();
        let inv_a = 1.0 / g.spacing();
        let rank = torus.rank();

        self.local
            .par_chunks_mut(dim)
            .zip(self.far.par_chunks_mut(2 * np))
            .zip(self.density.par_iter_mut())
            .enumerate()
            .for_each(|(x, ((local, far), density))| {
                for v in local.iter_mut() {
                    *v = MatrixValue::zeros(rank);
                }
                *density = 0.0;
                for (p, &(l, k)) in pairs.iter().enumerate() {
                    let Plaquette { f: w, p: pm, q } = plaquette(torus, a, x, l, k);
                    let w = skew_part(&w);
                    *density += w.norm_sq();
                    let mut qw = q.commutator(&w);
                    qw.scale_mut(0.5);
                    let mut pw = pm.commutator(&w);
                    pw.scale_mut(0.5);

                    // link l at x and at x+k
                    local[l].axpy(inv_a, &w);
                    local[l] += &qw;
                    let mut y = qw;
                    y.axpy(-inv_a, &w);
                    far[2 * p] = y;

                    // link k at x and at x+l
                    local[k].axpy(-inv_a, &w);
                    local[k] -= &pw;
                    let mut y = w.scale(inv_a);
                    y -= &pw;
                    far[2 * p + 1] = y;
                }
            });

        let local = &self.local;
        let far = &self.far;
        let mut out = vec![MatrixValue::zeros(rank); g.num_sites() * dim];
        out.par_chunks_mut(dim).enumerate().for_each(|(y, out)| {
            for mu in 0..dim {
                out[mu] = local[y * dim + mu].clone();
            }
            for (p, &(l, k)) in pairs.iter().enumerate() {
                let (_, yl) = torus.fetch(|s| &far[s * 2 * np + 2 * p], y, &[(k, false)], ADJ);
                out[l] += &yl;
                let (_, yk) = torus.fetch(|s| &far[s * 2 * np + 2 * p + 1], y, &[(l, false)], ADJ);
                out[k] += &yk;
            }
            for v in out.iter_mut() {
                *v = skew_part(v);
            }
        });
        let energy = self.density.iter().sum::<f64>() * g.cell_volume();
        (ConnectionField::from_data(&self.torus, out).expect("gradient shape"), energy)
    }
}

pub fn curvature(a: &ConnectionField) -> TwoFormField {
    CalculusWorkspace::new(a.torus()).curvature(a)
}

pub fn ym_gradient(a: &ConnectionField) -> ConnectionField {
    CalculusWorkspace::new(a.torus()).ym_gradient(a)
}

/// `max |D_mu F_{nu rho} + cyclic|` over sites and triples, evaluated at cube
/// centres: differences of `F` along the cube edge and commutators with
/// edge-averaged links and face-averaged curvature.
pub fn bianchi_residual(a: &ConnectionField, f: &TwoFormField) -> f64 {
    let torus = &**a.torus();
    let g = torus.geometry();
    let dim = g.dim();
    if dim < 3 {
        return 0.0;
    }
    let inv_a = 1.0 / g.spacing();
    let np = g.num_pairs();
    let mut triples = Vec::new();
    for m in 0..dim {
        for n in m + 1..dim {
            for r in n + 1..dim {
                triples.push((m, n, r));
            }
        }
    }
    let adata = a.data();
    let fdata = f.data();
    let term = |x: usize, al: usize, b: usize, c: usize| -> MatrixValue {
        // D_al F_bc with b < c
        let p = g.pair_index(b, c);
        let fx = &fdata[x * np + p];
        let (_, fn_) = torus.fetch(|s| &fdata[s * np + p], x, &[(al, true)], ADJ);
        let fetch_a = |path: &[(usize, bool)]| torus.fetch(|s| &adata[s * dim + al], x, path, conn(al)).1.into_owned();
        let mut abar = adata[x * dim + al].clone();
        abar += &fetch_a(&[(b, true)]);
        abar += &fetch_a(&[(c, true)]);
        abar += &fetch_a(&[(b, true), (c, true)]);
        abar.scale_mut(0.25);
        let mut fbar = fx + &fn_;
        fbar.scale_mut(0.5);
        let mut d = abar.commutator(&fbar);
        d.axpy(inv_a, &fn_);
        d.axpy(-inv_a, fx);
        d
    };
    (0..g.num_sites())
        .into_par_iter()
        .map(|x| {
            let mut worst = 0.0f64;
            for &(m, n, r) in &triples {
                // D_m F_nr + D_n F_rm + D_r F_mn, F_rm = -F_mr
                let mut s = term(x, m, n, r);
                s -= &term(x, n, m, r);
                s += &term(x, r, m, n);
                worst = worst.max(s.norm_sq().sqrt());
            }
            worst
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// `A'_mu = u A_mu u^{-1} - (grad_mu u) u^{-1}` with `u` averaged to the link
/// midpoint, skew-projected. Exact for constant `u`.
pub fn gauge_act(u: &GaugeField, a: &ConnectionField) -> Result<ConnectionField> {
    if !a.torus().same_bundle(u.torus()) {
        return Err(Error::Geometry("gauge transformation and connection live on different bundles".into()));
    }
    let torus = &**a.torus();
    let g = torus.geometry();
    let dim = g.dim();
    let inv_a = 1.0 / g.spacing();
    let udata = u.data();
    let adata = a.data();
    let mut out = vec![MatrixValue::zeros(torus.rank()); adata.len()];
    out.par_chunks_mut(dim).enumerate().for_each(|(x, out)| {
        let ux = &udata[x];
        for mu in 0..dim {
            let (_, un) = torus.fetch(|s| &udata[s], x, &[(mu, true)], ADJ);
            let mut ubar = ux + &un;
            ubar.scale_mut(0.5);
            let ubar_inv = ubar.adjoint();
            let mut du = &*un - ux;
            du.scale_mut(inv_a);
            let mut v = ubar.matmul(&adata[x * dim + mu]).matmul(&ubar_inv);
            v -= &du.matmul(&ubar_inv);
            out[mu] = skew_part(&v);
        }
    });
    ConnectionField::from_data(a.torus(), out)
}

/// `(i / 2 pi) sum_x tr F_{mu nu}(x) a^2`, averaged over the parallel
/// `(mu, nu)` slices. Approximates `c_{mu nu}`.
pub fn chern_integral(f: &TwoFormField, mu: usize, nu: usize) -> Result<f64> {
    let torus = f.torus();
    if torus.kind() != ScalarKind::Complex {
        return Err(Error::UnsupportedKind("Chern integrals need a complex bundle".into()));
    }
    let g = torus.geometry();
    if mu == nu || mu >= g.dim() || nu >= g.dim() {
        return Err(Error::Dimension(format!("invalid axis pair ({mu}, {nu})")));
    }
    let (lo, hi, sign) = if mu < nu { (mu, nu, 1.0) } else { (nu, mu, -1.0) };
    let p = g.pair_index(lo, hi);
    let np = g.num_pairs();
    let total: C64 = (0..g.num_sites()).map(|x| f.data()[x * np + p].trace()).sum();
    let slices = (g.num_sites() / (g.sizes()[lo] * g.sizes()[hi])) as f64;
    let a2 = g.spacing() * g.spacing();
    Ok(sign * (C64::new(0.0, 1.0) * total).re * a2 / (2.0 * std::f64::consts::PI) / slices)
}
