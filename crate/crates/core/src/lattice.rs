//! Periodic hypercubic lattices on flat `T^n` carrying a (possibly twisted)
//! vector bundle, plus the field containers that live on them.
//!
//! # Index order
//!
//! Sites are numbered with axis 0 varying slowest:
//! `site = sum_mu x_mu * stride_mu`, `stride_{n-1} = 1`. A one-form is stored
//! site-major, direction-minor (`site * n + mu`), a two-form as
//! `site * n_pairs + pair` with pairs `(mu, nu), mu < nu` in lexicographic
//! order. Every reduction in the crate walks these arrays in index order.
//!
//! # Twisted boundary conditions
//!
//! Crossing the face `x_mu = L_mu` applies the constant transition map `g_mu`:
//! endomorphism-valued data (curvature, gauge transformations, metrics) is
//! conjugated `v -> g_mu v g_mu^{-1}`, fundamental data is multiplied `v -> g_mu v`,
//! and a connection component `A_nu` with `mu < nu` additionally gains the
//! central term `-2 pi i c_{mu nu} / (r L_nu) Id`. The central term carries the
//! abelian part of the first Chern class; the commutators of the `g_mu` carry
//! the matching central phase `exp(2 pi i c_{mu nu} / r)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lie::{GroupElement, MatrixValue, ScalarKind, C64, MAX_RANK};

pub const MAX_DIM: usize = 5;
pub const MIN_SIDE: usize = 4;

/// Site coordinates; only the first `dim` entries are meaningful.
pub type Coords = [usize; MAX_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGeometry {
    dim: usize,
    sizes: Vec<usize>,
    spacing: f64,
    strides: Vec<usize>,
    num_sites: usize,
}

impl LatticeGeometry {
    pub fn new(dim: usize, sizes: &[usize], spacing: f64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::Geometry(format!("dimension {dim} outside 2..={MAX_DIM}")));
        }
        if sizes.len() != dim {
            return Err(Error::Geometry(format!("{} sizes given for dimension {dim}", sizes.len())));
        }
        if let Some(&n) = sizes.iter().find(|&&n| n < MIN_SIDE) {
            return Err(Error::Geometry(format!("axis with {n} sites; at least {MIN_SIDE} required")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Geometry(format!("spacing {spacing} must be positive")));
        }
        let mut strides = vec![1; dim];
        for mu in (0..dim - 1).rev() {
            strides[mu] = strides[mu + 1] * sizes[mu + 1];
        }
        let num_sites = sizes.iter().product();
        Ok(Self {
            dim,
            sizes: sizes.to_vec(),
            spacing,
            strides,
            num_sites,
        })
    }

    /// Cubic lattice with `side` sites per axis.
    pub fn cubic(dim: usize, side: usize, spacing: f64) -> Result<Self> {
        Self::new(dim, &vec![side; dim], spacing)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn num_pairs(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    /// Physical side length `L_mu = a N_mu`.
    pub fn length(&self, mu: usize) -> f64 {
        self.spacing * self.sizes[mu] as f64
    }

    /// `a^n prod N_mu`.
    pub fn volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32) * self.num_sites as f64
    }

    /// Volume of one lattice cell, `a^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Injectivity radius of the flat torus, `a min(N_mu) / 2`.
    pub fn injectivity_radius(&self) -> f64 {
        self.spacing * *self.sizes.iter().min().unwrap() as f64 / 2.0
    }

    pub fn pair_index(&self, mu: usize, nu: usize) -> usize {
        debug_assert!(mu < nu && nu < self.dim);
        // pairs (0,1),(0,2),...,(0,n-1),(1,2),...
        mu * (2 * self.dim - mu - 1) / 2 + (nu - mu - 1)
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_pairs());
        for mu in 0..self.dim {
            for nu in mu + 1..self.dim {
                out.push((mu, nu));
            }
        }
        out
    }

    pub fn coords(&self, site: usize) -> Coords {
        let mut c = [0; MAX_DIM];
        let mut rest = site;
        for mu in 0..self.dim {
            c[mu] = rest / self.strides[mu];
            rest %= self.strides[mu];
        }
        c
    }

    pub fn site(&self, coords: &[usize]) -> usize {
        (0..self.dim).map(|mu| (coords[mu] % self.sizes[mu]) * self.strides[mu]).sum()
    }

    /// Neighbour of `site` one step along `mu`; the flag reports a wrap across the face.
    #[inline]
    pub fn step(&self, site: usize, mu: usize, forward: bool) -> (usize, bool) {
        let n = self.sizes[mu];
        let x = (site / self.strides[mu]) % n;
        if forward {
            if x + 1 == n {
                (site - x * self.strides[mu], true)
            } else {
                (site + self.strides[mu], false)
            }
        } else if x == 0 {
            (site + (n - 1) * self.strides[mu], true)
        } else {
            (site - self.strides[mu], false)
        }
    }

    /// Position of a site in physical units.
    pub fn position(&self, site: usize) -> [f64; MAX_DIM] {
        let c = self.coords(site);
        let mut p = [0.0; MAX_DIM];
        for mu in 0..self.dim {
            p[mu] = c[mu] as f64 * self.spacing;
        }
        p
    }

    /// Minimal-image displacement `y - x` on the flat torus.
    pub fn displacement(&self, x: &[f64], y: &[f64]) -> [f64; MAX_DIM] {
        let mut d = [0.0; MAX_DIM];
        for mu in 0..self.dim {
            let l = self.length(mu);
            let mut v = (y[mu] - x[mu]) % l;
            if v > l / 2.0 {
                v -= l;
            } else if v < -l / 2.0 {
                v += l;
            }
            d[mu] = v;
        }
        d
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.displacement(x, y);
        d[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Integer offsets `v` with `|v| a <= radius` (centre-in-ball rule), each
    /// reduced to distinct lattice sites when the ball wraps.
    pub fn ball_offsets(&self, radius: f64) -> Vec<[isize; MAX_DIM]> {
        let reach = (radius / self.spacing).floor() as isize;
        let mut out = Vec::new();
        let mut v = [0isize; MAX_DIM];
        let r2 = (radius / self.spacing).powi(2) + 1e-9;
        self.enumerate_box(0, reach, &mut v, &mut |v| {
            let n2: isize = v.iter().map(|c| c * c).sum();
            if (n2 as f64) <= r2 {
                out.push(*v);
            }
        });
        out
    }

    fn enumerate_box(&self, mu: usize, reach: isize, v: &mut [isize; MAX_DIM], f: &mut impl FnMut(&[isize; MAX_DIM])) {
        if mu == self.dim {
            f(v);
            return;
        }
        // a ball wider than the torus would revisit sites
        let half = (self.sizes[mu] as isize - 1) / 2;
        let lo = -reach.min(half);
        let hi = reach.min(self.sizes[mu] as isize / 2);
        for c in lo..=hi {
            v[mu] = c;
            self.enumerate_box(mu + 1, reach, v, f);
        }
        v[mu] = 0;
    }

    pub fn offset_site(&self, site: usize, offset: &[isize; MAX_DIM]) -> usize {
        let c = self.coords(site);
        let mut s = 0;
        for mu in 0..self.dim {
            let n = self.sizes[mu] as isize;
            let x = (c[mu] as isize + offset[mu]).rem_euclid(n) as usize;
            s += x * self.strides[mu];
        }
        s
    }
}

/// How a value transforms when it is carried across a twisted face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    /// Endomorphism-valued: `v -> g v g^{-1}`.
    Adjoint,
    /// Section of `E`: `v -> g v`.
    Fundamental,
    /// Component `A_nu` of a connection: adjoint plus the central shift.
    Connection { component: usize },
}

/// Constant transition maps and declared Chern numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistCocycle {
    rank: usize,
    kind: ScalarKind,
    transitions: Vec<GroupElement>,
    /// `c_{mu nu}` for `mu < nu` in pair order.
    chern: Vec<i64>,
}

impl TwistCocycle {
    pub const CENTRAL_TOL: f64 = 1e-10;

    pub fn untwisted(dim: usize, rank: usize, kind: ScalarKind) -> Self {
        Self {
            rank,
            kind,
            transitions: vec![GroupElement::identity(rank); dim],
            chern: vec![0; dim * (dim - 1) / 2],
        }
    }

    /// Explicit transition maps and Chern data; validated by [`build_torus`].
    pub fn new(rank: usize, kind: ScalarKind, transitions: Vec<GroupElement>, chern: Vec<i64>) -> Self {
        Self {
            rank,
            kind,
            transitions,
            chern,
        }
    }

    /// Identity transition maps with abelian Chern numbers `c_{mu nu}`
    /// (`(mu, nu, c)` triples). Consistent only when every `c` is a multiple of `r`.
    pub fn abelian(dim: usize, rank: usize, fluxes: &[(usize, usize, i64)]) -> Self {
        let mut t = Self::untwisted(dim, rank, ScalarKind::Complex);
        for &(mu, nu, c) in fluxes {
            let p = pair_index_for(dim, mu, nu);
            t.chern[p] = c;
        }
        t
    }

    /// 't Hooft clock/shift twist: for every flux `(mu, nu, c)` the clock matrix
    /// sits on axis `mu` and the shift matrix `S^c` on axis `nu`, so the
    /// commutator equals `exp(2 pi i c / r)`. Axes may carry at most one flux.
    pub fn clock_shift(dim: usize, rank: usize, fluxes: &[(usize, usize, i64)]) -> Result<Self> {
        let mut t = Self::untwisted(dim, rank, ScalarKind::Complex);
        let mut used = vec![false; dim];
        for &(mu, nu, c) in fluxes {
            if mu >= nu || nu >= dim {
                return Err(Error::Topology {
                    mu,
                    nu,
                    detail: "flux axes must satisfy mu < nu < dim".into(),
                });
            }
            if used[mu] || used[nu] {
                return Err(Error::Topology {
                    mu,
                    nu,
                    detail: "axis already carries a clock/shift twist".into(),
                });
            }
            used[mu] = true;
            used[nu] = true;
            t.chern[pair_index_for(dim, mu, nu)] = c;
            if c.rem_euclid(rank as i64) != 0 {
                let shift = shift_matrix(rank);
                let mut s_pow = MatrixValue::identity(rank);
                for _ in 0..c.rem_euclid(rank as i64) {
                    s_pow = s_pow.matmul(&shift);
                }
                t.transitions[mu] = GroupElement::new(clock_matrix(rank))?;
                t.transitions[nu] = GroupElement::new(s_pow)?;
            }
        }
        Ok(t)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn kind(&self) -> ScalarKind {
        self.kind
    }

    pub fn transitions(&self) -> &[GroupElement] {
        &self.transitions
    }

    pub fn transition(&self, mu: usize) -> &GroupElement {
        &self.transitions[mu]
    }

    pub fn chern_numbers(&self) -> &[i64] {
        &self.chern
    }

    pub fn chern(&self, dim: usize, mu: usize, nu: usize) -> i64 {
        if mu < nu {
            self.chern[pair_index_for(dim, mu, nu)]
        } else if nu < mu {
            -self.chern[pair_index_for(dim, nu, mu)]
        } else {
            0
        }
    }

    pub fn is_untwisted(&self) -> bool {
        self.transitions.iter().all(GroupElement::is_identity) && self.chern.iter().all(|&c| c == 0)
    }

    /// Expected central element `exp(2 pi i c / r)` for the pair.
    pub fn central_phase(&self, dim: usize, mu: usize, nu: usize) -> C64 {
        let c = self.chern(dim, mu, nu) as f64;
        C64::from_polar(1.0, 2.0 * PI * c / self.rank as f64)
    }
}

fn pair_index_for(dim: usize, mu: usize, nu: usize) -> usize {
    mu * (2 * dim - mu - 1) / 2 + (nu - mu - 1)
}

/// Cyclic shift `S e_j = e_{j+1}`.
pub fn shift_matrix(rank: usize) -> MatrixValue {
    MatrixValue::from_fn(rank, |i, j| {
        if i == (j + 1) % rank {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// `diag(1, w, w^2, ...)` with `w = exp(2 pi i / r)`.
pub fn clock_matrix(rank: usize) -> MatrixValue {
    let phases: Vec<C64> = (0..rank)
        .map(|j| C64::from_polar(1.0, 2.0 * PI * j as f64 / rank as f64))
        .collect();
    MatrixValue::diag(&phases)
}

/// A validated lattice together with the bundle twist.
#[derive(Clone, Debug, PartialEq)]
pub struct Torus {
    geometry: LatticeGeometry,
    twist: TwistCocycle,
    /// `shifts[mu * dim + nu]`: central term added to `A_nu` when crossing the `mu` face.
    shifts: Vec<C64>,
    twisted_axes: Vec<bool>,
}

/// Validates geometry and cocycle and packages them.
pub fn build_torus(geometry: LatticeGeometry, twist: TwistCocycle) -> Result<Arc<Torus>> {
    let dim = geometry.dim();
    let rank = twist.rank;
    if !(1..=MAX_RANK).contains(&rank) {
        return Err(Error::Dimension(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    if twist.transitions.len() != dim {
        return Err(Error::Dimension(format!(
            "{} transition maps for dimension {dim}",
            twist.transitions.len()
        )));
    }
    if twist.chern.len() != geometry.num_pairs() {
        return Err(Error::Dimension(format!(
            "{} Chern numbers for {} axis pairs",
            twist.chern.len(),
            geometry.num_pairs()
        )));
    }
    for (mu, g) in twist.transitions.iter().enumerate() {
        if g.value().rank() != rank {
            return Err(Error::Dimension(format!("transition map {mu} has the wrong rank")));
        }
        if twist.kind == ScalarKind::Real && !g.value().is_real() {
            return Err(Error::Topology {
                mu,
                nu: mu,
                detail: "complex transition map on a real bundle".into(),
            });
        }
    }
    for (mu, nu) in geometry.pairs() {
        let g = twist.transitions[mu].value();
        let h = twist.transitions[nu].value();
        let comm = g.matmul(h).matmul(&g.adjoint()).matmul(&h.adjoint());
        let phase = twist.central_phase(dim, mu, nu);
        let expected = MatrixValue::scalar(rank, phase);
        let defect = comm.max_diff(&expected);
        if defect > TwistCocycle::CENTRAL_TOL {
            let central = comm.max_diff(&MatrixValue::scalar(rank, comm.get(0, 0))) <= TwistCocycle::CENTRAL_TOL;
            let detail = if central {
                format!(
                    "commutator is central but equals {:.6} instead of exp(2 pi i c/r) = {:.6}",
                    comm.get(0, 0),
                    phase
                )
            } else {
                format!("commutator of transition maps is not central (defect {defect:.3e})")
            };
            return Err(Error::Topology { mu, nu, detail });
        }
    }
    if twist.kind == ScalarKind::Real && twist.chern.iter().any(|&c| (2 * c).rem_euclid(rank as i64) != 0) {
        return Err(Error::UnsupportedKind(
            "real bundles only support central twists equal to +-Id".into(),
        ));
    }

    let mut shifts = vec![C64::new(0.0, 0.0); dim * dim];
    if twist.kind == ScalarKind::Complex {
        for (mu, nu) in geometry.pairs() {
            let c = twist.chern(dim, mu, nu) as f64;
            shifts[mu * dim + nu] = C64::new(0.0, -2.0 * PI * c / (rank as f64 * geometry.length(nu)));
        }
    }
    let twisted_axes = twist.transitions.iter().map(|g| !g.is_identity()).collect();
    Ok(Arc::new(Torus {
        geometry,
        twist,
        shifts,
        twisted_axes,
    }))
}

impl Torus {
    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn twist(&self) -> &TwistCocycle {
        &self.twist
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    pub fn rank(&self) -> usize {
        self.twist.rank
    }

    pub fn kind(&self) -> ScalarKind {
        self.twist.kind
    }

    /// Central term added to `A_nu` when crossing the `mu` face forward.
    pub fn connection_shift(&self, mu: usize, nu: usize) -> C64 {
        self.shifts[mu * self.geometry.dim + nu]
    }

    /// Expresses a value stored at the far side of the `mu` face in the frame
    /// of the near side (`forward`), or the inverse map (`!forward`).
    pub fn transport(&self, value: &MatrixValue, mu: usize, forward: bool, rep: Representation) -> MatrixValue {
        let twisted = self.twisted_axes[mu];
        let g = &self.twist.transitions[mu];
        match rep {
            Representation::Adjoint => {
                if !twisted {
                    value.clone()
                } else if forward {
                    g.conjugate(value)
                } else {
                    g.conjugate_inverse(value)
                }
            }
            Representation::Fundamental => {
                if !twisted {
                    value.clone()
                } else if forward {
                    g.value().matmul(value)
                } else {
                    g.value().adjoint().matmul(value)
                }
            }
            Representation::Connection { component } => {
                let s = self.connection_shift(mu, component);
                if forward {
                    let mut v = if twisted { g.conjugate(value) } else { value.clone() };
                    if s.im != 0.0 || s.re != 0.0 {
                        v.add_scalar(s);
                    }
                    v
                } else {
                    let mut v = value.clone();
                    if s.im != 0.0 || s.re != 0.0 {
                        v.add_scalar(-s);
                    }
                    if twisted {
                        g.conjugate_inverse(&v)
                    } else {
                        v
                    }
                }
            }
        }
    }

    /// Parallel-frame neighbour value: `value` stored at `site + step e_mu`
    /// expressed in the frame at `site`.
    #[inline]
    pub fn neighbour_value<'a>(
        &self,
        values: impl Fn(usize) -> &'a MatrixValue,
        site: usize,
        mu: usize,
        forward: bool,
        rep: Representation,
    ) -> std::borrow::Cow<'a, MatrixValue> {
        let (n, wrapped) = self.geometry.step(site, mu, forward);
        if wrapped {
            std::borrow::Cow::Owned(self.transport(values(n), mu, forward, rep))
        } else {
            std::borrow::Cow::Borrowed(values(n))
        }
    }

    /// Value stored at the end of `path` (steps `(axis, forward)` from `site`),
    /// expressed in the frame at `site`. Returns the end site as well.
    #[inline]
    pub fn fetch<'a>(
        &self,
        values: impl Fn(usize) -> &'a MatrixValue,
        site: usize,
        path: &[(usize, bool)],
        rep: Representation,
    ) -> (usize, std::borrow::Cow<'a, MatrixValue>) {
        let mut cur = site;
        let mut wraps = [false; 4];
        for (k, &(mu, fwd)) in path.iter().enumerate() {
            let (next, w) = self.geometry.step(cur, mu, fwd);
            wraps[k] = w;
            cur = next;
        }
        let mut v = std::borrow::Cow::Borrowed(values(cur));
        for (k, &(mu, fwd)) in path.iter().enumerate().rev() {
            if wraps[k] {
                v = std::borrow::Cow::Owned(self.transport(&v, mu, fwd, rep));
            }
        }
        (cur, v)
    }

    pub fn same_bundle(&self, other: &Torus) -> bool {
        self == other
    }
}

/// Common access for the site-indexed field containers.
pub trait LatticeField {
    fn torus(&self) -> &Arc<Torus>;
    /// Number of stored components per site.
    fn components(&self) -> usize;
    fn data(&self) -> &[MatrixValue];
    fn representation(&self, component: usize) -> Representation;

    fn value(&self, site: usize, component: usize) -> &MatrixValue {
        &self.data()[site * self.components() + component]
    }
}

/// Value of `field` at `site +- e_mu`, expressed in the frame at `site`.
pub fn shifted_value<F: LatticeField>(
    field: &F,
    site: usize,
    component: usize,
    mu: usize,
    forward: bool,
) -> Result<MatrixValue> {
    let torus = field.torus();
    if mu >= torus.dim() {
        return Err(Error::Dimension(format!("axis {mu} out of range for dimension {}", torus.dim())));
    }
    if site >= torus.geometry().num_sites() || component >= field.components() {
        return Err(Error::Dimension(format!("site {site} / component {component} out of range")));
    }
    let rep = field.representation(component);
    Ok(torus
        .neighbour_value(|s| field.value(s, component), site, mu, forward, rep)
        .into_owned())
}

/// Shifts every stored value one step along `mu` (see [`shifted_value`]).
pub fn shift_data<F: LatticeField>(field: &F, mu: usize, forward: bool) -> Vec<MatrixValue> {
    let torus = field.torus();
    let comps = field.components();
    (0..torus.geometry().num_sites() * comps)
        .map(|i| {
            let (site, c) = (i / comps, i % comps);
            torus
                .neighbour_value(|s| field.value(s, c), site, mu, forward, field.representation(c))
                .into_owned()
        })
        .collect()
}

fn check_len(torus: &Torus, data: &[MatrixValue], comps: usize) -> Result<()> {
    let expected = torus.geometry().num_sites() * comps;
    if data.len() != expected {
        return Err(Error::Dimension(format!("field has {} values, expected {expected}", data.len())));
    }
    if let Some(v) = data.iter().find(|v| v.rank() != torus.rank()) {
        return Err(Error::Dimension(format!("value of rank {} on a rank {} bundle", v.rank(), torus.rank())));
    }
    Ok(())
}

/// Lattice one-form `A_mu(x)` of skew matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionField {
    torus: Arc<Torus>,
    data: Vec<MatrixValue>,
}

impl ConnectionField {
    pub fn zero(torus: &Arc<Torus>) -> Self {
        let len = torus.geometry().num_sites() * torus.dim();
        Self {
            torus: torus.clone(),
            data: vec![MatrixValue::zeros(torus.rank()); len],
        }
    }

    /// Wraps raw data; values are expected to be skew.
    pub fn from_data(torus: &Arc<Torus>, data: Vec<MatrixValue>) -> Result<Self> {
        check_len(torus, &data, torus.dim())?;
        Ok(Self {
            torus: torus.clone(),
            data,
        })
    }

    pub fn data_mut(&mut self) -> &mut [MatrixValue] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<MatrixValue> {
        self.data
    }

    /// `self + alpha * other`, re-projected onto skew matrices.
    pub fn add_scaled(&self, alpha: f64, other: &ConnectionField) -> ConnectionField {
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| {
                let mut v = a.clone();
                v.axpy(alpha, b);
                v
            })
            .collect();
        ConnectionField {
            torus: self.torus.clone(),
            data,
        }
    }

    /// `max_x,mu |A_mu(x)|` (Frobenius).
    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sq().sqrt()).fold(0.0, f64::max)
    }

    /// `a^n sum Re Tr(A B^*)`.
    pub fn l2_inner(&self, other: &ConnectionField) -> f64 {
        let s: f64 = self.data.iter().zip(other.data.iter()).map(|(a, b)| a.real_dot(b)).sum();
        s * self.torus.geometry().cell_volume()
    }

    pub fn max_diff(&self, other: &ConnectionField) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.max_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(&MatrixValue) -> MatrixValue) -> ConnectionField {
        ConnectionField {
            torus: self.torus.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl LatticeField for ConnectionField {
    fn torus(&self) -> &Arc<Torus> {
        &self.torus
    }
    fn components(&self) -> usize {
        self.torus.dim()
    }
    fn data(&self) -> &[MatrixValue] {
        &self.data
    }
    fn representation(&self, component: usize) -> Representation {
        Representation::Connection { component }
    }
}

/// Lattice two-form `F_{mu nu}(x)`, `mu < nu`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoFormField {
    torus: Arc<Torus>,
    data: Vec<MatrixValue>,
}

impl TwoFormField {
    pub fn zero(torus: &Arc<Torus>) -> Self {
        let len = torus.geometry().num_sites() * torus.geometry().num_pairs();
        Self {
            torus: torus.clone(),
            data: vec![MatrixValue::zeros(torus.rank()); len],
        }
    }

    pub fn from_data(torus: &Arc<Torus>, data: Vec<MatrixValue>) -> Result<Self> {
        check_len(torus, &data, torus.geometry().num_pairs())?;
        Ok(Self {
            torus: torus.clone(),
            data,
        })
    }

    pub fn data_mut(&mut self) -> &mut [MatrixValue] {
        &mut self.data
    }

    pub fn pair(&self, site: usize, mu: usize, nu: usize) -> &MatrixValue {
        let p = self.torus.geometry().pair_index(mu, nu);
        &self.data[site * self.torus.geometry().num_pairs() + p]
    }

    /// `|F|^2(x) = sum_{mu<nu} |F_{mu nu}(x)|^2` per site.
    pub fn density(&self) -> Vec<f64> {
        let np = self.torus.geometry().num_pairs();
        self.data
            .chunks(np)
            .map(|c| c.iter().map(MatrixValue::norm_sq).sum())
            .collect()
    }

    pub fn map(&self, f: impl Fn(&MatrixValue) -> MatrixValue) -> TwoFormField {
        TwoFormField {
            torus: self.torus.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn max_diff(&self, other: &TwoFormField) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.max_diff(b))
            .fold(0.0, f64::max)
    }
}

impl LatticeField for TwoFormField {
    fn torus(&self) -> &Arc<Torus> {
        &self.torus
    }
    fn components(&self) -> usize {
        self.torus.geometry().num_pairs()
    }
    fn data(&self) -> &[MatrixValue] {
        &self.data
    }
    fn representation(&self, _component: usize) -> Representation {
        Representation::Adjoint
    }
}

/// Gauge transformation `u(x)`; across a face it is conjugated by the twist.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeField {
    torus: Arc<Torus>,
    data: Vec<MatrixValue>,
}

impl GaugeField {
    pub fn identity(torus: &Arc<Torus>) -> Self {
        Self::constant(torus, &GroupElement::identity(torus.rank()))
    }

    pub fn constant(torus: &Arc<Torus>, u: &GroupElement) -> Self {
        Self {
            torus: torus.clone(),
            data: vec![u.value().clone(); torus.geometry().num_sites()],
        }
    }

    /// Validates unitarity of every entry.
    pub fn from_data(torus: &Arc<Torus>, data: Vec<MatrixValue>) -> Result<Self> {
        check_len(torus, &data, 1)?;
        for v in &data {
            GroupElement::new(v.clone())?;
        }
        Ok(Self {
            torus: torus.clone(),
            data,
        })
    }
}

impl LatticeField for GaugeField {
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
        Representation::Adjoint
    }
}

/// Section of `E` (one vector per site, stored as the first column of a matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct SectionField {
    torus: Arc<Torus>,
    data: Vec<MatrixValue>,
}

impl SectionField {
    pub fn from_data(torus: &Arc<Torus>, data: Vec<MatrixValue>) -> Result<Self> {
        check_len(torus, &data, 1)?;
        Ok(Self {
            torus: torus.clone(),
            data,
        })
    }
}

impl LatticeField for SectionField {
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
        Representation::Fundamental
    }
}

/// Random skew matrix with every entry of modulus at most `amplitude`.
pub fn random_algebra_value(rng: &mut impl Rng, rank: usize, kind: ScalarKind, amplitude: f64) -> MatrixValue {
    let mut m = MatrixValue::zeros(rank);
    if amplitude == 0.0 {
        return m;
    }
    for i in 0..rank {
        if kind == ScalarKind::Complex {
            m.set(i, i, C64::new(0.0, rng.gen_range(-amplitude..=amplitude)));
        }
        for j in i + 1..rank {
            let z = match kind {
                ScalarKind::Real => C64::new(rng.gen_range(-amplitude..=amplitude), 0.0),
                ScalarKind::Complex => {
                    let r = amplitude * rng.gen::<f64>().sqrt();
                    C64::from_polar(r, rng.gen_range(0.0..2.0 * PI))
                }
            };
            m.set(i, j, z);
            m.set(j, i, -z.conj());
        }
    }
    m
}

/// I.i.d. skew values per link, entries bounded by `amplitude`, reproducible from `seed`.
pub fn random_connection(torus: &Arc<Torus>, amplitude: f64, seed: u64) -> ConnectionField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = torus.geometry().num_sites() * torus.dim();
    let data = (0..len)
        .map(|_| random_algebra_value(&mut rng, torus.rank(), torus.kind(), amplitude))
        .collect();
    ConnectionField {
        torus: torus.clone(),
        data,
    }
}

/// Smooth random connection: `terms` Fourier modes with wave numbers in
/// `[-max_mode, max_mode]^n`. For a fixed seed it samples the same continuum
/// field at every resolution of the same box. Needs trivial transition maps.
pub fn smooth_random_connection(
    torus: &Arc<Torus>,
    amplitude: f64,
    max_mode: i32,
    terms: usize,
    seed: u64,
) -> Result<ConnectionField> {
    if torus.twist().transitions().iter().any(|g| !g.is_identity()) {
        return Err(Error::Geometry("smooth random data needs trivial transition maps".into()));
    }
    if max_mode < 1 {
        return Err(Error::Geometry("max_mode must be at least 1".into()));
    }
    let g = torus.geometry();
    let dim = g.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(Vec<f64>, f64, Vec<MatrixValue>)> = (0..terms)
        .map(|_| {
            let mut k = vec![0i32; dim];
            while k.iter().all(|&c| c == 0) {
                k.iter_mut().for_each(|c| *c = rng.gen_range(-max_mode..=max_mode));
            }
            let wave = (0..dim).map(|mu| 2.0 * PI * k[mu] as f64 / g.length(mu)).collect();
            let phase = rng.gen_range(0.0..2.0 * PI);
            let coeffs = (0..dim)
                .map(|_| random_algebra_value(&mut rng, torus.rank(), torus.kind(), amplitude))
                .collect();
            (wave, phase, coeffs)
        })
        .collect();
    let mut field = ConnectionField::zero(torus);
    for site in 0..g.num_sites() {
        let x = g.position(site);
        for (wave, phase, coeffs) in &modes {
            let c = (wave.iter().zip(&x[..dim]).map(|(k, x)| k * x).sum::<f64>() + phase).cos();
            for (mu, v) in coeffs.iter().enumerate() {
                field.data[site * dim + mu].axpy(c, v);
            }
        }
    }
    Ok(field)
}

/// The abelian connection with constant curvature
/// `F_{mu nu} = -2 pi i c_{mu nu} / (r L_mu L_nu) Id` in the declared sector.
pub fn constant_curvature_connection(torus: &Arc<Torus>) -> Result<ConnectionField> {
    if torus.kind() != ScalarKind::Complex {
        return Err(Error::UnsupportedKind("constant-curvature connection needs a complex bundle".into()));
    }
    let g = torus.geometry();
    let dim = g.dim();
    let r = torus.rank() as f64;
    let mut field = ConnectionField::zero(torus);
    for site in 0..g.num_sites() {
        let x = g.position(site);
        for nu in 0..dim {
            let mut coeff = 0.0;
            for mu in 0..nu {
                let c = torus.twist().chern(dim, mu, nu) as f64;
                coeff += -2.0 * PI * c * x[mu] / (r * g.length(mu) * g.length(nu));
            }
            if coeff != 0.0 {
                field.data[site * dim + nu] = MatrixValue::scalar(torus.rank(), C64::new(0.0, coeff));
            }
        }
    }
    Ok(field)
}

/// Parameters of [`concentrated_bump_connection`].
#[derive(Clone, Debug, PartialEq)]
pub struct BumpSpec {
    /// Scale `lambda` (length units).
    pub scale: f64,
    /// Centre in physical coordinates.
    pub center: Vec<f64>,
    /// Multiplier of the instanton-core profile; 1 reproduces the core.
    pub strength: f64,
    /// Seeds a constant SU(2) orientation of the profile.
    pub seed: u64,
}

/// Smooth cutoff: 1 on `[0,1]`, 0 on `[2, inf)`.
pub fn smooth_cutoff(s: f64) -> f64 {
    fn psi(t: f64) -> f64 {
        if t > 0.0 {
            (-1.0 / t).exp()
        } else {
            0.0
        }
    }
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let a = psi(2.0 - s);
        a / (a + psi(s - 1.0))
    }
}

/// 't Hooft symbol `eta^a_{mu nu}` for `a in 0..3`, `mu, nu in 0..4` (axis 3 plays the role of 4).
pub fn thooft_eta(a: usize, mu: usize, nu: usize) -> f64 {
    if mu < 3 && nu < 3 {
        levi_civita(a, mu, nu)
    } else if nu == 3 && mu < 3 {
        if a == mu {
            1.0
        } else {
            0.0
        }
    } else if mu == 3 && nu < 3 {
        if a == nu {
            -1.0
        } else {
            0.0
        }
    } else {
        0.0
    }
}

fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Pauli matrices embedded in the upper-left block of a rank-`r` matrix.
fn pauli(rank: usize, a: usize) -> MatrixValue {
    let mut m = MatrixValue::zeros(rank);
    let (o, z, i) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0));
    let block = match a {
        0 => [z, o, o, z],
        1 => [z, -i, i, z],
        _ => [o, z, z, -o],
    };
    m.set(0, 0, block[0]);
    m.set(0, 1, block[1]);
    m.set(1, 0, block[2]);
    m.set(1, 1, block[3]);
    m
}

/// Instanton-core bump
/// `A_mu(x) = strength * f(|y|/lambda) * (-i eta^a_{mu nu} y_nu sigma_a) / lambda^2`,
/// `y = x - center` (minimal image), acting on the first four axes in an
/// su(2) block; `A_mu = 0` for `mu >= 4` and outside `B_{2 lambda}`.
pub fn concentrated_bump_connection(torus: &Arc<Torus>, spec: &BumpSpec) -> Result<ConnectionField> {
    let g = torus.geometry();
    let dim = g.dim();
    let rank = torus.rank();
    if dim < 4 {
        return Err(Error::Geometry(format!("bump needs dimension >= 4, got {dim}")));
    }
    if rank < 2 || torus.kind() != ScalarKind::Complex {
        return Err(Error::UnsupportedKind("bump needs a complex bundle of rank >= 2".into()));
    }
    if spec.center.len() != dim {
        return Err(Error::Dimension(format!("centre has {} coordinates", spec.center.len())));
    }
    let lambda = spec.scale;
    if !(lambda >= g.spacing() - 1e-12) {
        return Err(Error::Resolution(format!(
            "bump scale {lambda} is below the lattice spacing {}",
            g.spacing()
        )));
    }
    if lambda > g.injectivity_radius() / 2.0 + 1e-12 {
        return Err(Error::Resolution(format!(
            "bump scale {lambda} exceeds half the injectivity radius {}",
            g.injectivity_radius()
        )));
    }

    // Constant SU(2) frame rotation chosen from the seed.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let axis: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let mut rot = MatrixValue::zeros(rank);
    for (a, w) in axis.iter().enumerate() {
        rot.axpy(0.5 * w, &pauli(rank, a).scale_c(C64::new(0.0, 1.0)));
    }
    let rot = crate::lie::expm(&rot);
    // keep the identity on the complement of the su(2) block
    let mut frame = MatrixValue::identity(rank);
    for i in 0..2 {
        for j in 0..2 {
            frame.set(i, j, rot.get(i, j));
        }
    }
    let generators: Vec<MatrixValue> = (0..3)
        .map(|a| pauli(rank, a).scale_c(C64::new(0.0, -1.0)).conjugate_by(&frame))
        .collect();

    let mut field = ConnectionField::zero(torus);
    for site in 0..g.num_sites() {
        let x = g.position(site);
        let y = g.displacement(&spec.center, &x);
        let rho = y[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = smooth_cutoff(rho / lambda);
        if f == 0.0 {
            continue;
        }
        let pref = spec.strength * f / (lambda * lambda);
        for mu in 0..4 {
            let mut v = MatrixValue::zeros(rank);
            for (a, gen) in generators.iter().enumerate() {
                let coeff: f64 = (0..4).map(|nu| thooft_eta(a, mu, nu) * y[nu]).sum();
                if coeff != 0.0 {
                    v.axpy(pref * coeff, gen);
                }
            }
            field.data[site * dim + mu] = crate::lie::skew_part(&v);
        }
    }
    Ok(field)
}
