//! Density-matrix kinetics of the optical cycle ground -> excited ->
//! (metastable) -> ground.
//!
//! The state is `(rho_g, rho_e, n_m)`. Each Hermitian 4x4 block is stored as
//! 16 real coordinates in an orthonormal Hermitian basis, so the whole linear
//! generator is a real 33x33 matrix. Time is in microseconds and rates in
//! 1/us; Hamiltonians are in MHz and enter as `2 pi i [rho, H]`.

use std::f64::consts::TAU;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{asymptotic_labels, build_hamiltonian, eigensystem, CenterParams, Level};
use crate::rate_model;
use crate::spin_algebra::{commutator, sym_anticommutator, ComplexMat4, SpinOperators};

/// Real coordinates per Hermitian block.
pub const BLOCK_DIM: usize = 16;
/// Dimension of the full state vector.
pub const STATE_DIM: usize = 2 * BLOCK_DIM + 1;
/// Index of the metastable population in the state vector.
pub const N_M_INDEX: usize = 2 * BLOCK_DIM;

/// Kinetic rates of the optical cycle, all in 1/us.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    /// Optical pump rate `P`.
    pub pump: f64,
    /// Radiative recombination rate `Gamma`.
    pub recomb: f64,
    /// Base rate of the metastable channel, `Gamma_e`.
    pub gamma_ms: f64,
    /// Spin selectivity of metastable -> ground.
    pub eta_g: f64,
    /// Spin selectivity of excited -> metastable.
    pub eta_e: f64,
    /// Isotropic spin relaxation in the ground state.
    pub gamma_g: f64,
    /// Isotropic spin relaxation in the excited state.
    pub gamma_e: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        RateParams { pump: 1.0, recomb: 10.0, gamma_ms: 1.0, eta_g: 0.5, eta_e: 0.35, gamma_g: 0.01, gamma_e: 0.1 }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("pump", self.pump),
            ("recomb", self.recomb),
            ("gamma_ms", self.gamma_ms),
            ("gamma_g", self.gamma_g),
            ("gamma_e", self.gamma_e),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidRates(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("eta_g", self.eta_g), ("eta_e", self.eta_e)] {
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::InvalidRates(format!("|{name}| must be <= 1 (branch rate would be negative), got {v}")));
            }
        }
        Ok(())
    }

    /// Metastable -> ground rates into the `+-1/2` and `+-3/2` doublets.
    pub fn ms_to_ground(&self) -> (f64, f64) {
        (self.gamma_ms * (1.0 + self.eta_g), self.gamma_ms * (1.0 - self.eta_g))
    }

    /// Excited -> metastable rates out of the `+-1/2` and `+-3/2` doublets.
    pub fn excited_to_ms(&self) -> (f64, f64) {
        (self.gamma_ms * (1.0 + self.eta_e), self.gamma_ms * (1.0 - self.eta_e))
    }

    /// Excited-state population loss rate `Gamma + Gamma_e + gamma_e`.
    pub fn excited_loss(&self) -> f64 {
        self.recomb + self.gamma_ms + self.gamma_e
    }

    /// `P Gamma / ((P + gamma_g)(Gamma + Gamma_e + gamma_e))`, the fraction of
    /// excited-state spin polarization returned after one optical round trip.
    pub fn loop_gain(&self) -> f64 {
        self.pump * self.recomb / ((self.pump + self.gamma_g) * self.excited_loss())
    }

    /// Messages for rates outside `gamma_e, gamma_g, Gamma_e << P, Gamma`,
    /// the regime assumed by the small-field closed forms. The relaxation
    /// rates must sit a decade below `min(P, Gamma)`; `Gamma_e` must not
    /// exceed it.
    pub fn hierarchy_warnings(&self) -> Vec<String> {
        let fast = self.pump.min(self.recomb);
        let mut out = Vec::new();
        for (name, v) in [("gamma_e", self.gamma_e), ("gamma_g", self.gamma_g)] {
            if v * 10.0 > fast {
                out.push(format!(
                    "{name} = {v} is not << min(pump, recomb) = {fast}; small-field closed forms are outside their stated hierarchy"
                ));
            }
        }
        if self.gamma_ms > fast {
            out.push(format!(
                "gamma_ms = {} exceeds min(pump, recomb) = {fast}; small-field closed forms are outside their stated hierarchy",
                self.gamma_ms
            ));
        }
        out
    }
}

/// Ground and excited spin density matrices plus the metastable population.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    pub rho_g: ComplexMat4,
    pub rho_e: ComplexMat4,
    pub n_m: f64,
}

impl SpinState {
    pub fn zero() -> Self {
        SpinState { rho_g: ComplexMat4::zeros(), rho_e: ComplexMat4::zeros(), n_m: 0.0 }
    }

    /// Unpolarized population `1` in the ground state.
    pub fn unpolarized_ground() -> Self {
        SpinState { rho_g: ComplexMat4::identity().scale(0.25), rho_e: ComplexMat4::zeros(), n_m: 0.0 }
    }

    pub fn total_population(&self) -> f64 {
        self.rho_g.trace().re + self.rho_e.trace().re + self.n_m
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(STATE_DIM);
        v.rows_mut(0, BLOCK_DIM).copy_from_slice(&to_coords(&self.rho_g));
        v.rows_mut(BLOCK_DIM, BLOCK_DIM).copy_from_slice(&to_coords(&self.rho_e));
        v[N_M_INDEX] = self.n_m;
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), STATE_DIM, "state vector must have {STATE_DIM} entries");
        SpinState {
            rho_g: from_coords(&v.as_slice()[..BLOCK_DIM]),
            rho_e: from_coords(&v.as_slice()[BLOCK_DIM..2 * BLOCK_DIM]),
            n_m: v[N_M_INDEX],
        }
    }

    /// Hermiticity, normalization and positivity, with the tolerances the
    /// solvers guarantee.
    pub fn check_invariants(&self) -> Result<()> {
        use crate::spin_algebra::hermiticity_deviation;
        let herm = hermiticity_deviation(&self.rho_g).max(hermiticity_deviation(&self.rho_e));
        if herm > 1e-10 {
            return Err(Error::NotHermitian { deviation: herm });
        }
        let total = self.total_population();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("state is not normalized (total {total})")));
        }
        let min_eig = min_eigenvalue(&self.rho_g).min(min_eigenvalue(&self.rho_e)).min(self.n_m);
        if min_eig < -1e-9 {
            return Err(Error::InvalidParameter(format!("state is not positive (min eigenvalue {min_eig:e})")));
        }
        Ok(())
    }
}

pub(crate) fn min_eigenvalue(m: &ComplexMat4) -> f64 {
    let h = (m + m.adjoint()).scale(0.5);
    nalgebra::SymmetricEigen::new(h).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of Hermitian 4x4 matrices under `Tr(A B)`: the four
/// diagonal units followed by `(E_ij + E_ji)/sqrt2, i(E_ji - E_ij)/sqrt2` for
/// each `i < j`. The first four coordinates are the diagonal elements.
pub fn hermitian_basis() -> &'static [ComplexMat4; BLOCK_DIM] {
    static BASIS: OnceLock<[ComplexMat4; BLOCK_DIM]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut basis = [ComplexMat4::zeros(); BLOCK_DIM];
        for (k, b) in basis.iter_mut().enumerate().take(4) {
            b[(k, k)] = Complex64::new(1.0, 0.0);
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut k = 4;
        for i in 0..4 {
            for j in i + 1..4 {
                basis[k][(i, j)] = Complex64::new(s, 0.0);
                basis[k][(j, i)] = Complex64::new(s, 0.0);
                basis[k + 1][(i, j)] = Complex64::new(0.0, -s);
                basis[k + 1][(j, i)] = Complex64::new(0.0, s);
                k += 2;
            }
        }
        basis
    })
}

/// Real coordinates `Tr(B_k m)` of a Hermitian matrix.
pub fn to_coords(m: &ComplexMat4) -> [f64; BLOCK_DIM] {
    let mut out = [0.0; BLOCK_DIM];
    for (c, b) in out.iter_mut().zip(hermitian_basis()) {
        *c = (b * m).trace().re;
    }
    out
}

pub fn from_coords(c: &[f64]) -> ComplexMat4 {
    hermitian_basis().iter().zip(c).fold(ComplexMat4::zeros(), |acc, (b, &x)| acc + b.scale(x))
}

/// Row vector of the total-population functional `Tr rho_g + Tr rho_e + n_m`.
pub fn trace_functional() -> DVector<f64> {
    let mut t = DVector::zeros(STATE_DIM);
    for k in 0..4 {
        t[k] = 1.0;
        t[BLOCK_DIM + k] = 1.0;
    }
    t[N_M_INDEX] = 1.0;
    t
}

/// Time derivative of the state, evaluated term by term with matrix products.
pub fn kinetic_rhs(center: &CenterParams, rates: &RateParams, bx: f64, s: &SpinState) -> SpinState {
    let ops = SpinOperators::get();
    let h_g = build_hamiltonian(Level::Ground, center, bx);
    let h_e = build_hamiltonian(Level::Excited, center, bx);
    kinetic_rhs_with(&h_g, &h_e, rates, s, ops)
}

fn kinetic_rhs_with(h_g: &ComplexMat4, h_e: &ComplexMat4, rates: &RateParams, s: &SpinState, ops: &SpinOperators) -> SpinState {
    let coherent = Complex64::new(0.0, TAU);
    let id = ComplexMat4::identity();
    let (g_half, g_three) = rates.ms_to_ground();
    let (e_half, e_three) = rates.excited_to_ms();
    let tr_g = s.rho_g.trace();
    let tr_e = s.rho_e.trace();

    let d_rho_g = commutator(&s.rho_g, h_g) * coherent + s.rho_e.scale(rates.recomb)
        - s.rho_g.scale(rates.pump)
        - (s.rho_g - id * (tr_g / 4.0)).scale(rates.gamma_g)
        + (ops.p_half.scale(g_half) + ops.p_three_half.scale(g_three)).scale(s.n_m / 2.0);

    let d_rho_e = commutator(&s.rho_e, h_e) * coherent - s.rho_e.scale(rates.recomb) - (s.rho_e - id * (tr_e / 4.0)).scale(rates.gamma_e)
        + s.rho_g.scale(rates.pump)
        - sym_anticommutator(&ops.p_half, &s.rho_e).scale(e_half)
        - sym_anticommutator(&ops.p_three_half, &s.rho_e).scale(e_three);

    let d_n_m = e_half * (ops.p_half * s.rho_e).trace().re + e_three * (ops.p_three_half * s.rho_e).trace().re - (g_half + g_three) * s.n_m;

    SpinState { rho_g: d_rho_g, rho_e: d_rho_e, n_m: d_n_m }
}

/// Linear generator `ds/dt = G s` on the 33 real state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    pub matrix: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn apply(&self, s: &SpinState) -> SpinState {
        SpinState::from_vector(&(&self.matrix * s.to_vector()))
    }

    /// `|t^T G|_max` for the total-population functional `t`.
    pub fn trace_leak(&self) -> f64 {
        (trace_functional().transpose() * &self.matrix).amax()
    }
}

type Super = DMatrix<Complex64>;

/// `vec(A X B) = (B^T kron A) vec(X)` with column-major `vec`.
fn sandwich(left: &ComplexMat4, right: &ComplexMat4) -> Super {
    let mut out = Super::zeros(BLOCK_DIM, BLOCK_DIM);
    for bc in 0..4 {
        for br in 0..4 {
            // (B^T)[bc, br] = B[br, bc]
            let factor = right[(br, bc)];
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for ar in 0..4 {
                for ac in 0..4 {
                    out[(4 * bc + ar, 4 * br + ac)] += factor * left[(ar, ac)];
                }
            }
        }
    }
    out
}

fn vec_of(m: &ComplexMat4) -> DVector<Complex64> {
    DVector::from_column_slice(m.as_slice())
}

/// Superoperator of `X -> 2 pi i [X, H]`.
fn coherent_super(h: &ComplexMat4) -> Super {
    let id = ComplexMat4::identity();
    (sandwich(&id, h) - sandwich(h, &id)) * Complex64::new(0.0, TAU)
}

/// Real 16x16 block equivalent to a Hermiticity-preserving superoperator.
fn realify(sup: &Super) -> DMatrix<f64> {
    let (to_coord, from_coord) = coordinate_maps();
    let complex = to_coord * sup * from_coord;
    complex.map(|z| z.re)
}

/// `C` (vec -> coordinates) and `C^-1` (coordinates -> vec).
fn coordinate_maps() -> &'static (Super, Super) {
    static MAPS: OnceLock<(Super, Super)> = OnceLock::new();
    MAPS.get_or_init(|| {
        let basis = hermitian_basis();
        let mut to_coord = Super::zeros(BLOCK_DIM, BLOCK_DIM);
        let mut from_coord = Super::zeros(BLOCK_DIM, BLOCK_DIM);
        for (k, b) in basis.iter().enumerate() {
            // Tr(B X) = sum_ij B[j,i] X[i,j] = vec(B^T) . vec(X)
            let bt = vec_of(&b.transpose());
            for idx in 0..BLOCK_DIM {
                to_coord[(k, idx)] = bt[idx];
            }
            from_coord.set_column(k, &vec_of(b));
        }
        (to_coord, from_coord)
    })
}

/// Real coordinates of the linear functional `X -> Tr(Q X)`.
fn trace_row(q: &ComplexMat4) -> [f64; BLOCK_DIM] {
    let mut row = [0.0; BLOCK_DIM];
    for (r, b) in row.iter_mut().zip(hermitian_basis()) {
        *r = (q * b).trace().re;
    }
    row
}

/// Real 33x33 matrix of `(rho_g, rho_e, n_m) -> (2 pi i [rho_g, h_g], 2 pi i [rho_e, h_e], 0)`.
pub fn coherent_generator(h_g: &ComplexMat4, h_e: &ComplexMat4) -> DMatrix<f64> {
    let mut g = DMatrix::<f64>::zeros(STATE_DIM, STATE_DIM);
    g.view_mut((0, 0), (BLOCK_DIM, BLOCK_DIM)).copy_from(&realify(&coherent_super(h_g)));
    g.view_mut((BLOCK_DIM, BLOCK_DIM), (BLOCK_DIM, BLOCK_DIM)).copy_from(&realify(&coherent_super(h_e)));
    g
}

/// Builds the generator from Kronecker-product superoperators of every term
/// of the kinetic equations.
pub fn build_generator(center: &CenterParams, rates: &RateParams, bx: f64) -> Result<GeneratorMatrix> {
    rates.validate()?;
    center.validate()?;
    if !bx.is_finite() {
        return Err(Error::InvalidParameter(format!("field must be finite, got {bx}")));
    }
    let ops = SpinOperators::get();
    let id = ComplexMat4::identity();
    let id16 = Super::identity(BLOCK_DIM, BLOCK_DIM);
    let vec_id = vec_of(&id);
    // X -> X - Tr(X)/4
    let depolarize = &id16 - &vec_id * vec_id.transpose() * Complex64::new(0.25, 0.0);

    let (g_half, g_three) = rates.ms_to_ground();
    let (e_half, e_three) = rates.excited_to_ms();

    let h_g = build_hamiltonian(Level::Ground, center, bx);
    let h_e = build_hamiltonian(Level::Excited, center, bx);

    let gg = coherent_super(&h_g) - &id16 * Complex64::from(rates.pump) - &depolarize * Complex64::from(rates.gamma_g);
    let anti = |q: &ComplexMat4| (sandwich(q, &id) + sandwich(&id, q)) * Complex64::new(0.5, 0.0);
    let ee = coherent_super(&h_e)
        - &id16 * Complex64::from(rates.recomb)
        - &depolarize * Complex64::from(rates.gamma_e)
        - anti(&ops.p_half) * Complex64::from(e_half)
        - anti(&ops.p_three_half) * Complex64::from(e_three);

    let mut g = DMatrix::<f64>::zeros(STATE_DIM, STATE_DIM);
    g.view_mut((0, 0), (BLOCK_DIM, BLOCK_DIM)).copy_from(&realify(&gg));
    g.view_mut((BLOCK_DIM, BLOCK_DIM), (BLOCK_DIM, BLOCK_DIM)).copy_from(&realify(&ee));
    for k in 0..BLOCK_DIM {
        // rho_g <- Gamma rho_e, rho_e <- P rho_g
        g[(k, BLOCK_DIM + k)] = rates.recomb;
        g[(BLOCK_DIM + k, k)] = rates.pump;
    }

    let refill = to_coords(&(ops.p_half.scale(g_half) + ops.p_three_half.scale(g_three)).scale(0.5));
    for (k, v) in refill.iter().enumerate() {
        g[(k, N_M_INDEX)] = *v;
    }
    let drain = trace_row(&(ops.p_half.scale(e_half) + ops.p_three_half.scale(e_three)));
    for (k, v) in drain.iter().enumerate() {
        g[(N_M_INDEX, BLOCK_DIM + k)] = *v;
    }
    g[(N_M_INDEX, N_M_INDEX)] = -(g_half + g_three);

    Ok(GeneratorMatrix { matrix: g })
}

/// Relative singular-value threshold for the kernel dimension test.
pub const KERNEL_RTOL: f64 = 1e-9;

/// Solves `G s = 0` with the normalization `Tr rho_g + Tr rho_e + n_m = 1`.
pub fn steady_state(gen: &GeneratorMatrix) -> Result<SpinState> {
    let g = &gen.matrix;
    let sv = g.singular_values();
    let smax = sv.max();
    let dimension = sv.iter().filter(|&&s| s <= KERNEL_RTOL * smax).count();
    if dimension != 1 {
        return Err(Error::DegenerateKernel { dimension });
    }

    // [[G, t], [t^T, 0]] [s; l] = [0; 1]. Since t^T G = 0, l = 0 and the
    // bordered matrix is regular exactly when the kernel is one-dimensional.
    let t = trace_functional();
    let bordered = border(g, &t, &t);
    let mut rhs = DVector::zeros(STATE_DIM + 1);
    rhs[STATE_DIM] = 1.0;
    let sol = bordered.lu().solve(&rhs).ok_or(Error::SolveFailed("bordered steady-state system"))?;
    let mut s = sol.rows(0, STATE_DIM).into_owned();
    s /= t.dot(&s);

    let residual = (g * &s).amax();
    let gnorm = g.amax();
    if residual > KERNEL_RTOL * gnorm {
        return Err(Error::SolveFailed("steady-state residual above tolerance"));
    }
    Ok(SpinState::from_vector(&s))
}

/// `[[g, column], [row^T, 0]]`.
pub(crate) fn border(g: &DMatrix<f64>, column: &DVector<f64>, row: &DVector<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(g);
    m.view_mut((0, n), (n, 1)).copy_from(column);
    m.view_mut((n, 0), (1, n)).copy_from(&row.transpose());
    m
}

/// `s(t) = exp(G t) s0` by dense matrix exponential.
pub fn time_evolve(gen: &GeneratorMatrix, s0: &SpinState, t: f64) -> Result<SpinState> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!("evolution time must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(s0.clone());
    }
    let propagator = (&gen.matrix * t).exp();
    Ok(SpinState::from_vector(&(propagator * s0.to_vector())))
}

/// Photoluminescence rate `Gamma Tr rho_e`, 1/us.
pub fn pl_intensity(rates: &RateParams, s: &SpinState) -> f64 {
    rates.recomb * s.rho_e.trace().re
}

/// Population and relative brightness of one eigenstate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelEntry {
    /// MHz.
    pub energy: f64,
    pub population: f64,
    /// Change in PL per unit population moved into this state (relative;
    /// only differences between states of one level are meaningful).
    pub brightness: f64,
    /// Twice the large-field `S_x` projection.
    pub label: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub bx: f64,
    pub ground: [LevelEntry; 4],
    pub excited: [LevelEntry; 4],
}

/// Steady-state eigenstate populations and brightness of both levels.
pub fn level_report(center: &CenterParams, rates: &RateParams, bx: f64) -> Result<LevelReport> {
    let state = steady_state(&build_generator(center, rates, bx)?)?;
    let tm = rate_model::transfer_matrices(center, bx)?;
    let labels = asymptotic_labels(bx);

    let entries = |level: Level, rho: &ComplexMat4| -> Result<[LevelEntry; 4]> {
        let eig = eigensystem(level, center, bx)?;
        let populations = eig.to_eigenbasis(rho).diagonal().map(|z| z.re);
        let brightness: Vector4<f64> = rate_model::brightness(rates, &tm, level)?;
        Ok(std::array::from_fn(|k| LevelEntry {
            energy: eig.energies[k],
            population: populations[k],
            brightness: brightness[k],
            label: labels[k],
        }))
    };

    Ok(LevelReport { bx, ground: entries(Level::Ground, &state.rho_g)?, excited: entries(Level::Excited, &state.rho_e)? })
}
