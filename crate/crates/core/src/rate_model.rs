//! Secular rate-equation reduction of the kinetic model.
//!
//! When level splittings are much larger than all rates, only eigenstate
//! populations matter. Population transfer between the eigenbases of the
//! ground state, the excited state and the zero-field basis is described by
//! the doubly stochastic matrices `T_ab[i][j] = |<a_i|b_j>|^2`.
//!
//! Population variations are `df_i = f_i - sum(f)/4`, listed in
//! descending-energy order of the respective eigenbasis.

use nalgebra::{Matrix4, Vector4};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{eigensystem, transitions_from_eig, CenterParams, DriveAxis, Level, TransitionTable};
use crate::kinetics::{build_generator, steady_state, RateParams};
use crate::spin_algebra::{ComplexMat4, EigenSystem};

/// Largest condition number accepted for `1 - kappa T_eg T_ge`.
pub const MAX_CONDITION: f64 = 1e8;

/// Zero-field quadrupole population pattern: `-1/2` on the `+-3/2`
/// doublet (zero-field states 0, 1) and `+1/2` on the `+-1/2` doublet.
pub fn d0() -> Vector4<f64> {
    Vector4::new(-0.5, -0.5, 0.5, 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrices {
    pub bx: f64,
    /// Ground eigenbasis vs zero-field basis.
    pub t_g0: Matrix4<f64>,
    /// Excited eigenbasis vs zero-field basis.
    pub t_e0: Matrix4<f64>,
    /// Excited vs ground eigenbasis.
    pub t_eg: Matrix4<f64>,
    /// `u_ab[i][j] = <a_i|b_j>`.
    pub u_g0: ComplexMat4,
    pub u_e0: ComplexMat4,
    pub u_eg: ComplexMat4,
    pub eig_g: EigenSystem,
    pub eig_e: EigenSystem,
}

impl TransferMatrices {
    pub fn t_ge(&self) -> Matrix4<f64> {
        self.t_eg.transpose()
    }

    pub fn eig(&self, level: Level) -> &EigenSystem {
        match level {
            Level::Ground => &self.eig_g,
            Level::Excited => &self.eig_e,
        }
    }

    /// Transition table of `level` at this field with the given drive axis.
    pub fn transitions(&self, level: Level, axis: DriveAxis) -> TransitionTable {
        transitions_from_eig(self.eig(level), level, self.bx, axis)
    }
}

fn overlaps(a: &EigenSystem, b: &EigenSystem) -> (ComplexMat4, Matrix4<f64>) {
    let u = a.vectors.adjoint() * b.vectors;
    let t = u.map(|z| z.norm_sqr());
    (u, t)
}

/// Transfer matrices at field `bx` (mT). The zero-field basis is the
/// tie-broken ground-state eigenbasis at `bx = 0`, i.e.
/// `(|+3/2>, |-3/2>, |+1/2>, |-1/2>)`.
pub fn transfer_matrices(center: &CenterParams, bx: f64) -> Result<TransferMatrices> {
    let eig_0 = eigensystem(Level::Ground, center, 0.0)?;
    let eig_g = eigensystem(Level::Ground, center, bx)?;
    let eig_e = eigensystem(Level::Excited, center, bx)?;
    let (u_g0, t_g0) = overlaps(&eig_g, &eig_0);
    let (u_e0, t_e0) = overlaps(&eig_e, &eig_0);
    let (u_eg, t_eg) = overlaps(&eig_e, &eig_g);
    Ok(TransferMatrices { bx, t_g0, t_e0, t_eg, u_g0, u_e0, u_eg, eig_g, eig_e })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationVariation {
    pub df_g: Vector4<f64>,
    pub df_e: Vector4<f64>,
    /// Excited-state population.
    pub n_e: f64,
}

impl PopulationVariation {
    pub fn df(&self, level: Level) -> &Vector4<f64> {
        match level {
            Level::Ground => &self.df_g,
            Level::Excited => &self.df_e,
        }
    }
}

/// `[1 - kappa T_eg T_ge]^-1` with `kappa = P Gamma / ((P + gamma_g) A)`.
pub fn loop_inverse(rates: &RateParams, tm: &TransferMatrices) -> Result<Matrix4<f64>> {
    let m = Matrix4::identity() - tm.t_eg * tm.t_ge() * rates.loop_gain();
    let sv = m.singular_values();
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    m.try_inverse().ok_or(Error::IllConditioned { condition: f64::INFINITY })
}

/// Steady-state population variations of both levels for a given excited
/// population `n_e`.
pub fn solve_population_variations(rates: &RateParams, tm: &TransferMatrices, n_e: f64) -> Result<PopulationVariation> {
    rates.validate()?;
    let a = rates.excited_loss();
    let p_g = rates.pump + rates.gamma_g;
    let inv = loop_inverse(rates, tm)?;
    let d0 = d0();
    let source = (tm.t_eg * tm.t_g0 * (rates.eta_g * rates.pump / p_g) - tm.t_e0 * rates.eta_e) * d0;
    let df_e = inv * source * (rates.gamma_ms * n_e / a);
    let df_g = (tm.t_g0 * d0 * (rates.eta_g * rates.gamma_ms * n_e) + tm.t_ge() * df_e * rates.recomb) / p_g;
    Ok(PopulationVariation { df_g, df_e, n_e })
}

/// Residuals of the two secular balance equations
/// `(P + gamma_g) df_g = eta_g Gamma_e N_e T_g0 d0 + Gamma T_ge df_e` and
/// `A df_e = P T_eg df_g - eta_e Gamma_e N_e T_e0 d0`.
pub fn balance_residual(rates: &RateParams, tm: &TransferMatrices, pv: &PopulationVariation) -> f64 {
    let d0 = d0();
    let ge_ne = rates.gamma_ms * pv.n_e;
    let r_g = pv.df_g * (rates.pump + rates.gamma_g) - tm.t_g0 * d0 * (rates.eta_g * ge_ne) - tm.t_ge() * pv.df_e * rates.recomb;
    let r_e = pv.df_e * rates.excited_loss() - tm.t_eg * pv.df_g * rates.pump + tm.t_e0 * d0 * (rates.eta_e * ge_ne);
    r_g.amax().max(r_e.amax())
}

/// Transfer matrices and population variations at `bx`, with `N_e` taken
/// from the full kinetic steady state.
pub fn population_variations_at(center: &CenterParams, rates: &RateParams, bx: f64) -> Result<(TransferMatrices, PopulationVariation)> {
    let state = steady_state(&build_generator(center, rates, bx)?)?;
    let tm = transfer_matrices(center, bx)?;
    let pv = solve_population_variations(rates, &tm, state.rho_e.trace().re)?;
    Ok((tm, pv))
}

/// Linear response of the PL to a population change in each eigenstate of
/// `level`: an ODMR line with population kick `k` has intensity
/// `brightness . k`.
pub fn brightness(rates: &RateParams, tm: &TransferMatrices, level: Level) -> Result<Vector4<f64>> {
    let inv = loop_inverse(rates, tm)?;
    let a = rates.excited_loss();
    // d0^T T_0e M, as a column vector
    let excited = inv.transpose() * tm.t_e0 * d0() * (-rates.eta_e / a);
    Ok(match level {
        Level::Excited => excited,
        Level::Ground => tm.t_ge() * excited * (rates.pump / (rates.pump + rates.gamma_g)),
    })
}

/// Population change rate from driving transition `i <-> j`:
/// `m2 (df_j - df_i)` into state `i` and the opposite into `j`.
pub fn mw_population_kick(tt: &TransitionTable, pv: &PopulationVariation, level: Level, i: usize, j: usize) -> Result<Vector4<f64>> {
    if i == j || i > 3 || j > 3 {
        return Err(Error::InvalidParameter(format!("transition needs two distinct states in 0..4, got ({i}, {j})")));
    }
    let m2 = tt.get(i, j).map_or(0.0, |t| t.m2);
    let df = pv.df(level);
    let mut kick = Vector4::zeros();
    kick[i] = m2 * (df[j] - df[i]);
    kick[j] = -kick[i];
    Ok(kick)
}

pub fn odmr_line_intensity(rates: &RateParams, tm: &TransferMatrices, kick: &Vector4<f64>, level: Level) -> Result<f64> {
    Ok(brightness(rates, tm, level)?.dot(kick))
}

/// One secular-model ODMR line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateLine {
    pub level: Level,
    pub i: usize,
    pub j: usize,
    /// MHz.
    pub freq: f64,
    pub m2: f64,
    pub intensity: f64,
    pub label: (i8, i8),
}

/// All twelve secular-model lines at `bx` for the given drive axis.
pub fn rate_model_lines(center: &CenterParams, rates: &RateParams, bx: f64, axis: DriveAxis) -> Result<Vec<RateLine>> {
    let (tm, pv) = population_variations_at(center, rates, bx)?;
    let mut lines = Vec::with_capacity(12);
    for level in Level::BOTH {
        let tt = tm.transitions(level, axis);
        let b = brightness(rates, &tm, level)?;
        for t in &tt.transitions {
            let kick = mw_population_kick(&tt, &pv, level, t.i, t.j)?;
            lines.push(RateLine { level, i: t.i, j: t.j, freq: t.freq, m2: t.m2, intensity: b.dot(&kick), label: t.label });
        }
    }
    Ok(lines)
}

/// `x(b) = (1 + 3/(1 + b^2 + b^4))/4`, the `d0` eigenvalue of `T_0g T_g0`.
pub fn small_field_x(b_g: f64) -> f64 {
    let b2 = b_g * b_g;
    0.25 * (1.0 + 3.0 / (1.0 + b2 + b2 * b2))
}

/// Inverse of [`small_field_x`] on `b >= 0`, for `x` in `(1/4, 1]`.
pub fn small_field_x_inverse(x: f64) -> Result<f64> {
    if !(x > 0.25 && x <= 1.0) {
        return Err(Error::InvalidParameter(format!("x must lie in (1/4, 1], got {x}")));
    }
    // 1 + u + u^2 = 3/(4x - 1) with u = b^2
    let c = 1.0 - 3.0 / (4.0 * x - 1.0);
    let u = 0.5 * (-1.0 + (1.0 - 4.0 * c).sqrt());
    Ok(u.max(0.0).sqrt())
}

/// Field (mT) where the small-field excited-state signal changes sign,
/// `x(b_g) = eta_e / eta_g`. `None` when the ratio is outside `(1/4, 1]`.
pub fn small_field_crossover(center: &CenterParams, rates: &RateParams) -> Option<f64> {
    let ratio = rates.eta_e / rates.eta_g;
    let b = small_field_x_inverse(ratio).ok()?;
    Some(b * center.d_g / center.gyro(Level::Ground))
}

/// Small-field excited-state line strength per unit excited population,
/// `Gamma_e/((1 - x) Gamma) eta_e eta_g (x - eta_e/eta_g)`. Only its sign
/// is meaningful; it diverges at `b_g = 0`.
pub fn es_signal_small_field(rates: &RateParams, b_g: f64) -> f64 {
    let x = small_field_x(b_g);
    rates.gamma_ms / ((1.0 - x) * rates.recomb) * rates.eta_e * (rates.eta_g * x - rates.eta_e)
}

/// `eta_e eta_g (1 - eta_e/eta_g)`, the small-field ground-state line sign.
pub fn gs_signal_sign_small_field(rates: &RateParams) -> f64 {
    rates.eta_e * (rates.eta_g - rates.eta_e)
}

/// Large ground-state field limit of the ground-state lines:
/// `(+-1/2 <-> +-3/2, -1/2 <-> +1/2)` as functions of the reduced
/// excited-state field `b_e`.
pub fn large_field_signals(rates: &RateParams, b_e: f64) -> (f64, f64) {
    let (ee, eg) = (rates.eta_e, rates.eta_g);
    let b2 = b_e * b_e;
    let q = 1.0 + b2 + b2 * b2;
    let r = (2.0 - b2 + 2.0 * b2 * b2) / (2.0 * q);
    let outer = 0.25 * (1.0 + b2) * (ee * eg - r * ee * ee);
    let inner = -1.25 * ee * ee * b2 * (1.0 + b2) / q;
    (outer, inner)
}

/// Reduced fields `(b*, 1/b*)` where the large-field `+-1/2 <-> +-3/2`
/// signal changes sign, for `ratio = eta_e/eta_g`. Real roots exist only for
/// `1 < ratio < 2`.
pub fn large_field_sign_changes(ratio: f64) -> Option<(f64, f64)> {
    // (2 - 2r) u^2 + (2 + r) u + (2 - 2r) = 0, u = b^2; palindromic
    let a = 2.0 - 2.0 * ratio;
    let bq = 2.0 + ratio;
    let disc = bq * bq - 4.0 * a * a;
    if !(ratio > 1.0 && ratio < 2.0) || disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let u1 = (-bq + sq) / (2.0 * a);
    let u2 = (-bq - sq) / (2.0 * a);
    let (lo, hi) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
    Some((lo.sqrt(), hi.sqrt()))
}
