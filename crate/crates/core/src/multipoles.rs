//! Spin multipoles, Husimi maps and the inversion of ODMR peak areas into
//! eigenstate populations.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{CenterParams, DriveAxis, Level};
use crate::kinetics::{build_generator, steady_state, RateParams};
use crate::rate_model::{brightness, rate_model_lines, transfer_matrices};
use crate::spin_algebra::{rotation_operator, ComplexMat4, SpinOperators};

fn normalized(rho: &ComplexMat4, op: &ComplexMat4) -> Result<f64> {
    let tr = rho.trace().re;
    if tr.abs() < f64::MIN_POSITIVE {
        return Err(Error::ZeroTrace);
    }
    Ok((rho * op).trace().re / tr)
}

/// `Tr(rho (S_z^2 - 5/4)) / Tr(rho)`, in `[-1, 1]`.
pub fn quadrupole(rho: &ComplexMat4) -> Result<f64> {
    normalized(rho, &SpinOperators::get().quadrupole_op())
}

/// `Tr(rho S_x) / Tr(rho)`, in `[-3/2, 3/2]`.
pub fn dipole_x(rho: &ComplexMat4) -> Result<f64> {
    normalized(rho, &SpinOperators::get().sx)
}

/// Unnormalized `Tr(rho (S_z^2 - 5/4))`; defined for traceless `rho`.
pub fn quadrupole_moment(rho: &ComplexMat4) -> f64 {
    (rho * SpinOperators::get().quadrupole_op()).trace().re
}

/// Unnormalized `Tr(rho S_x)`.
pub fn dipole_moment(rho: &ComplexMat4) -> f64 {
    (rho * SpinOperators::get().sx).trace().re
}

/// Quadrupole and x-dipole moments of the population variation `df`
/// (descending-energy eigenstates) of a level at reduced field `b`.
///
/// Equals `Tr(rho_d (S_z^2 - 5/4))` and `Tr(rho_d S_x)` for the diagonal
/// `rho_d` built from `df` in that field's eigenbasis. At exactly `b = 0` the
/// degenerate states are taken as the `b -> 0+` limits.
pub fn multipoles_from_populations(df: &Vector4<f64>, b: f64) -> Result<(f64, f64)> {
    let sum = df.sum();
    if !sum.is_finite() || sum.abs() > 1e-9 {
        return Err(Error::UnnormalizedInput { sum });
    }
    if !b.is_finite() {
        return Err(Error::InvalidParameter(format!("reduced field must be finite, got {b}")));
    }
    let a = b.abs();
    let (f1, f2, f3, f4) = (df[0], df[1], df[2], df[3]);
    let plus = 2.0 * (1.0 + a + a * a).sqrt();
    let minus = 2.0 * (1.0 - a + a * a).sqrt();
    let quad = (2.0 + a) * (f2 - f4) / plus + (2.0 - a) * (f1 - f3) / minus;
    let dip = (1.0 + 2.0 * a) * (f2 - f4) / plus + (1.0 - 2.0 * a) * (f3 - f1) / minus + (f1 + f3 - f2 - f4) / 2.0;
    // H(-b) = R H(b) R^dagger with R = exp(-i pi S_z), which flips S_x
    Ok((quad, if b < 0.0 { -dip } else { dip }))
}

/// Husimi function `P(theta, phi) = <psi|rho|psi>` sampled at the midpoints
/// of a regular `(theta, phi)` grid, with `|psi>` the spin coherent state
/// `exp(-i phi S_z) exp(-i theta S_y)|+3/2>`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HusimiGrid {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
    /// Row-major, `values[it * phis.len() + ip]`.
    pub values: Vec<f64>,
}

impl HusimiGrid {
    pub fn value(&self, it: usize, ip: usize) -> f64 {
        self.values[it * self.phis.len() + ip]
    }

    fn weighted_sum(&self, weight: impl Fn(f64, f64) -> f64) -> f64 {
        let dtheta = PI / self.thetas.len() as f64;
        let dphi = 2.0 * PI / self.phis.len() as f64;
        let mut total = 0.0;
        for (it, &theta) in self.thetas.iter().enumerate() {
            let row: f64 = self.phis.iter().enumerate().map(|(ip, &phi)| self.value(it, ip) * weight(theta, phi)).sum();
            total += row * theta.sin();
        }
        total * dtheta * dphi / PI
    }

    /// `(1/pi) int P dOmega`, which equals `Tr(rho)` for spin 3/2.
    pub fn normalization(&self) -> f64 {
        self.weighted_sum(|_, _| 1.0)
    }

    /// `(1/pi) int P n dOmega` for the unit vector `n(theta, phi)`.
    pub fn first_moment(&self) -> [f64; 3] {
        [self.weighted_sum(|t, p| t.sin() * p.cos()), self.weighted_sum(|t, p| t.sin() * p.sin()), self.weighted_sum(|t, _| t.cos())]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub const DEFAULT_HUSIMI_THETA: usize = 91;
pub const DEFAULT_HUSIMI_PHI: usize = 181;

pub fn husimi(rho: &ComplexMat4, n_theta: usize, n_phi: usize) -> Result<HusimiGrid> {
    if n_theta == 0 || n_phi == 0 {
        return Err(Error::InvalidParameter(format!("Husimi grid needs at least one point per axis, got {n_theta}x{n_phi}")));
    }
    let thetas: Vec<f64> = (0..n_theta).map(|k| (k as f64 + 0.5) * PI / n_theta as f64).collect();
    let phis: Vec<f64> = (0..n_phi).map(|k| (k as f64 + 0.5) * 2.0 * PI / n_phi as f64).collect();
    let values: Vec<f64> = thetas
        .par_iter()
        .flat_map_iter(|&theta| {
            phis.iter().map(move |&phi| {
                let psi = rotation_operator(theta, phi).column(0).into_owned();
                (psi.adjoint() * rho * psi)[(0, 0)].re
            })
        })
        .collect();
    Ok(HusimiGrid { thetas, phis, values })
}

/// Transition between eigenstates `i < j`, 0-based. Written `"{i+1}-{j+1}"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransitionKey {
    pub i: usize,
    pub j: usize,
}

impl TransitionKey {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b || a > 3 || b > 3 {
            return Err(Error::InvalidParameter(format!("invalid transition ({a}, {b})")));
        }
        Ok(TransitionKey { i: a.min(b), j: a.max(b) })
    }

    pub fn all() -> impl Iterator<Item = TransitionKey> {
        (0..4).flat_map(|i| (i + 1..4).map(move |j| TransitionKey { i, j }))
    }
}

impl fmt::Display for TransitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.i + 1, self.j + 1)
    }
}

impl FromStr for TransitionKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("transition key must look like \"1-2\" (states 1..4), got {s:?}"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if !(1..=4).contains(&a) || !(1..=4).contains(&b) {
            return Err(bad());
        }
        TransitionKey::new(a - 1, b - 1)
    }
}

/// Signed ODMR peak areas of one level at one field.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakAreaSet {
    pub level: Level,
    pub field: f64,
    pub areas: BTreeMap<TransitionKey, f64>,
}

impl PeakAreaSet {
    pub fn new(level: Level, field: f64) -> Self {
        PeakAreaSet { level, field, areas: BTreeMap::new() }
    }

    pub fn with(mut self, key: TransitionKey, area: f64) -> Self {
        self.areas.insert(key, area);
        self
    }

    /// Ground-state transitions observed between neighbouring levels.
    pub fn ground_keys() -> [TransitionKey; 3] {
        [TransitionKey { i: 0, j: 1 }, TransitionKey { i: 1, j: 2 }, TransitionKey { i: 2, j: 3 }]
    }

    /// Excited-state transitions that carry signal; the rest are taken as zero.
    pub fn excited_keys() -> [TransitionKey; 2] {
        [TransitionKey { i: 0, j: 3 }, TransitionKey { i: 1, j: 2 }]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    /// Population variations in the units of the areas (one global scale).
    #[default]
    Uncalibrated,
    /// Scale fixed so the summed ground-state area matches the model.
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    pub df_g: Vector4<f64>,
    pub df_e: Vector4<f64>,
    /// Normalized per level population when calibrated, raw moments otherwise.
    pub quad_g: f64,
    pub quad_e: f64,
    pub dip_g: f64,
    pub dip_e: f64,
    /// Factor applied to the raw solution.
    pub scale: f64,
    pub calibration: Calibration,
    /// Largest absolute residual of the linear systems.
    pub residual: f64,
    pub warnings: Vec<String>,
}

/// Below this field (mT) the ground-state lines overlap in measured spectra.
pub const RESOLVED_FIELD_MT: f64 = 2.0;

/// Solves the forward model `area(i,j) = (b_i - b_j) m2_ij (df_j - df_i)`
/// with `sum(df) = 0` for one level.
fn invert_level(set: &PeakAreaSet, brightness: &Vector4<f64>, m2: &BTreeMap<TransitionKey, f64>) -> Result<(Vector4<f64>, f64)> {
    let mut rows: Vec<([f64; 4], f64)> = Vec::new();
    let keys: Vec<TransitionKey> = match set.level {
        Level::Ground => set.areas.keys().copied().collect(),
        // unobserved excited-state transitions are prescribed zero
        Level::Excited => TransitionKey::all().collect(),
    };
    for key in keys {
        let area = set.areas.get(&key).copied().unwrap_or(0.0);
        if !area.is_finite() {
            return Err(Error::InvalidParameter(format!("area of {} transition {key} is not finite", set.level)));
        }
        let c = (brightness[key.i] - brightness[key.j]) * m2[&key];
        let mut row = [0.0; 4];
        row[key.j] = c;
        row[key.i] = -c;
        rows.push((row, area));
    }
    rows.push(([1.0; 4], 0.0));

    let a = DMatrix::from_fn(rows.len(), 4, |r, c| rows[r].0[c]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let level = match set.level {
        Level::Ground => "ground",
        Level::Excited => "excited",
    };
    if smin.is_nan() || smin <= 1e-12 * smax {
        return Err(Error::SingularExtraction { level });
    }
    let x = svd.solve(&y, 0.0).map_err(Error::SolveFailed)?;
    let residual = (&a * &x - &y).amax();
    Ok((Vector4::new(x[0], x[1], x[2], x[3]), residual))
}

/// Recovers population variations and multipoles from ODMR peak areas,
/// using the secular rate model as the forward model.
pub fn extract_from_peak_areas(
    gs: &PeakAreaSet,
    es: &PeakAreaSet,
    center: &CenterParams,
    rates: &RateParams,
    bx: f64,
    axis: DriveAxis,
    calibration: Calibration,
) -> Result<Extraction> {
    if gs.level != Level::Ground || es.level != Level::Excited {
        return Err(Error::InvalidParameter("expected one ground-state and one excited-state area set".into()));
    }
    for set in [gs, es] {
        if (set.field - bx).abs() > 1e-9 * bx.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "{} areas were taken at {} mT, extraction requested at {bx} mT",
                set.level, set.field
            )));
        }
    }
    let mut warnings = Vec::new();
    if bx.abs() < RESOLVED_FIELD_MT {
        warnings.push(format!("|B| = {} mT is below {RESOLVED_FIELD_MT} mT; ground-state lines are not spectrally resolved", bx.abs()));
    }

    let tm = transfer_matrices(center, bx)?;
    let mut solved = Vec::with_capacity(2);
    let mut residual: f64 = 0.0;
    for set in [gs, es] {
        let tt = tm.transitions(set.level, axis);
        let m2: BTreeMap<TransitionKey, f64> = tt.transitions.iter().map(|t| (TransitionKey { i: t.i, j: t.j }, t.m2)).collect();
        let (df, res) = invert_level(set, &brightness(rates, &tm, set.level)?, &m2)?;
        residual = residual.max(res);
        solved.push(df);
    }
    let (mut df_g, mut df_e) = (solved[0], solved[1]);

    let mut scale = 1.0;
    let mut populations = (1.0, 1.0);
    if calibration == Calibration::Calibrated {
        let measured: f64 = gs.areas.values().sum();
        let model: f64 = rate_model_lines(center, rates, bx, axis)?
            .iter()
            .filter(|l| l.level == Level::Ground && gs.areas.contains_key(&TransitionKey { i: l.i, j: l.j }))
            .map(|l| l.intensity)
            .sum();
        if measured.abs() < f64::MIN_POSITIVE || model.abs() < f64::MIN_POSITIVE {
            return Err(Error::InvalidParameter("calibration needs a nonzero total ground-state area".into()));
        }
        scale = model / measured;
        let state = steady_state(&build_generator(center, rates, bx)?)?;
        populations = (state.rho_g.trace().re, state.rho_e.trace().re);
    }
    df_g *= scale;
    df_e *= scale;

    let (qg, dg) = multipoles_from_populations(&df_g, center.reduced_field(Level::Ground, bx))?;
    let (qe, de) = multipoles_from_populations(&df_e, center.reduced_field(Level::Excited, bx))?;
    Ok(Extraction {
        df_g,
        df_e,
        quad_g: qg / populations.0,
        quad_e: qe / populations.1,
        dip_g: dg / populations.0,
        dip_e: de / populations.1,
        scale,
        calibration,
        residual,
        warnings,
    })
}
