//! Second-order microwave response of the kinetic model.
//!
//! The drive `H_1(t) = gyro S_axis (b1 e^{-i w t} + b1* e^{i w t})` is
//! treated by harmonic balance truncated at the first harmonic:
//!
//! ```text
//! (G + i w) s+ = -b1 W s0,    s- = conj(s+)
//! G ds = -(b1 W s- + b1* W s+),    Tr ds = 0
//! ```
//!
//! where `W` is the unit-amplitude commutator superoperator on both levels.
//! The reported quantity is `dPL/PL = Tr(d rho_e) / Tr(rho_e)`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{transitions_from_eig, CenterParams, DriveAxis, Level};
use crate::kinetics::{border, build_generator, coherent_generator, steady_state, trace_functional, RateParams, BLOCK_DIM, STATE_DIM};
use crate::spin_algebra::hermitian_eig;

/// Default microwave amplitude, mT.
pub const DEFAULT_B1: f64 = 0.001;
/// Relative PL change above which second-order perturbation theory is suspect.
pub const PERTURBATIVE_LIMIT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveParams {
    /// Complex amplitude, mT. Accepts a number or `[re, im]`.
    #[serde(with = "complex_amplitude")]
    pub b1: Complex64,
    pub axis: DriveAxis,
    /// MHz.
    pub freq: f64,
}

impl Default for DriveParams {
    fn default() -> Self {
        DriveParams { b1: Complex64::new(DEFAULT_B1, 0.0), axis: DriveAxis::Y, freq: 0.0 }
    }
}

impl DriveParams {
    pub fn validate(&self) -> Result<()> {
        if !self.b1.re.is_finite() || !self.b1.im.is_finite() {
            return Err(Error::InvalidParameter(format!("b1 must be finite, got {}", self.b1)));
        }
        if !self.freq.is_finite() {
            return Err(Error::InvalidParameter(format!("drive frequency must be finite, got {}", self.freq)));
        }
        Ok(())
    }
}

mod complex_amplitude {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Real(f64),
        Pair([f64; 2]),
    }

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        if z.im == 0.0 {
            Repr::Real(z.re).serialize(s)
        } else {
            Repr::Pair([z.re, z.im]).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Real(re) => Complex64::new(re, 0.0),
            Repr::Pair([re, im]) => Complex64::new(re, im),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MwResponse {
    /// MHz.
    pub freq: f64,
    /// `dPL/PL`.
    pub dpl: f64,
    /// Unperturbed PL `Gamma Tr(rho_e)`, 1/us.
    pub baseline: f64,
    /// Largest imaginary part of the second-order source relative to its size.
    pub imag_residue: f64,
}

impl MwResponse {
    pub fn is_perturbative(&self) -> bool {
        self.dpl.abs() <= PERTURBATIVE_LIMIT
    }
}

/// Field-dependent part of the response calculation, reused across
/// frequencies and amplitudes.
pub struct ResponseSolver {
    pub bx: f64,
    pub axis: DriveAxis,
    baseline: f64,
    n_e: f64,
    /// Hessenberg form `H` of `G = Q H Q^T`.
    hess: DMatrix<f64>,
    /// `Q^T W s0`
    source0: DVector<f64>,
    /// `W Q`
    wq: DMatrix<f64>,
    dc: LU<f64, Dyn, Dyn>,
    trace: DVector<f64>,
}

impl ResponseSolver {
    pub fn new(center: &CenterParams, rates: &RateParams, bx: f64, axis: DriveAxis) -> Result<Self> {
        let gen = build_generator(center, rates, bx)?;
        let s0 = steady_state(&gen)?.to_vector();
        let op = axis.operator();
        let w = coherent_generator(&op.scale(center.gyro(Level::Ground)), &op.scale(center.gyro(Level::Excited)));
        let trace = trace_functional();
        let n_e: f64 = s0.rows(BLOCK_DIM, 4).sum();
        if n_e <= 0.0 {
            return Err(Error::InvalidRates("excited-state population vanishes; no PL to modulate".into()));
        }

        // ds is fixed by G ds + l s0 = -src, t^T ds = 0
        let dc = border(&gen.matrix, &s0, &trace).lu();
        let (q, hess) = gen.matrix.clone().hessenberg().unpack();
        let source0 = q.transpose() * (&w * &s0);
        let wq = &w * &q;
        Ok(ResponseSolver { bx, axis, baseline: rates.recomb * n_e, n_e, hess, source0, wq, dc, trace })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn response(&self, b1: Complex64, freq: f64) -> Result<MwResponse> {
        if b1 == Complex64::new(0.0, 0.0) {
            return Ok(MwResponse { freq, dpl: 0.0, baseline: self.baseline, imag_residue: 0.0 });
        }
        let omega = TAU * freq;
        let rhs: Vec<Complex64> = self.source0.iter().map(|&v| -b1 * v).collect();
        let y = solve_shifted_hessenberg(&self.hess, omega, rhs).ok_or(Error::SingularResponse { freq_mhz: freq })?;
        let y = DVector::from_vec(y);

        // W s+ = (W Q) y
        let w_plus: DVector<Complex64> = self.wq.map(Complex64::from) * &y;
        let src: DVector<Complex64> = w_plus.map(|z| z.conj() * b1) + w_plus.map(|z| z * b1.conj());
        let scale = src.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let imag = src.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let imag_residue = if scale > 0.0 { imag / scale } else { 0.0 };

        let mut real_src = src.map(|z| z.re);
        let leak = self.trace.dot(&real_src) / self.trace.norm_squared();
        real_src.axpy(-leak, &self.trace, 1.0);

        let mut b = DVector::zeros(STATE_DIM + 1);
        b.rows_mut(0, STATE_DIM).copy_from(&(-real_src));
        let ds = self.dc.solve(&b).ok_or(Error::SolveFailed("second-order response system"))?;
        let d_ne: f64 = ds.rows(BLOCK_DIM, 4).sum();
        Ok(MwResponse { freq, dpl: d_ne / self.n_e, baseline: self.baseline, imag_residue })
    }
}

/// Solves `(H + i omega) y = r` for upper-Hessenberg real `H` by Gaussian
/// elimination with adjacent-row pivoting. `None` on a zero pivot.
fn solve_shifted_hessenberg(h: &DMatrix<f64>, omega: f64, mut r: Vec<Complex64>) -> Option<Vec<Complex64>> {
    let n = h.nrows();
    let shift = Complex64::new(0.0, omega);
    let mut a: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| Complex64::from(if j + 1 >= i { h[(i, j)] } else { 0.0 }) + if i == j { shift } else { Complex64::new(0.0, 0.0) })
                .collect()
        })
        .collect();
    let norm = h.amax().max(omega.abs());
    let tiny = norm * f64::EPSILON * n as f64;
    for k in 0..n.saturating_sub(1) {
        if a[k + 1][k].norm() > a[k][k].norm() {
            a.swap(k, k + 1);
            r.swap(k, k + 1);
        }
        if a[k][k].norm() <= tiny {
            return None;
        }
        let m = a[k + 1][k] / a[k][k];
        if m != Complex64::new(0.0, 0.0) {
            let (upper, lower) = a.split_at_mut(k + 1);
            for (dst, src) in lower[0][k..].iter_mut().zip(&upper[k][k..]) {
                *dst -= m * src;
            }
            let rk = r[k];
            r[k + 1] -= m * rk;
        }
    }
    if n > 0 && a[n - 1][n - 1].norm() <= tiny {
        return None;
    }
    for i in (0..n).rev() {
        let mut acc = r[i];
        for j in i + 1..n {
            acc -= a[i][j] * r[j];
        }
        r[i] = acc / a[i][i];
    }
    Some(r)
}

/// Second-order PL change at one field and drive frequency.
pub fn mw_response(center: &CenterParams, rates: &RateParams, bx: f64, drive: &DriveParams) -> Result<MwResponse> {
    drive.validate()?;
    ResponseSolver::new(center, rates, bx, drive.axis)?.response(drive.b1, drive.freq)
}

/// Position of a spin transition drawn over a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineMarker {
    pub level: Level,
    pub i: usize,
    pub j: usize,
    pub freq: f64,
    pub m2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdmrResult {
    /// MHz.
    pub freqs: Vec<f64>,
    /// mT.
    pub fields: Vec<f64>,
    /// `dpl[field][freq]`.
    pub dpl: Vec<Vec<f64>>,
    /// Unperturbed PL per field, 1/us.
    pub baseline: Vec<f64>,
    /// Transition frequencies per field.
    pub lines: Vec<Vec<LineMarker>>,
    pub max_imag_residue: f64,
    /// Grid points whose response exceeds the perturbative limit.
    pub nonperturbative: usize,
}

impl OdmrResult {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.nonperturbative > 0 {
            out.push(format!(
                "{} grid points have |dPL/PL| > {PERTURBATIVE_LIMIT}; reduce b1 for a second-order result",
                self.nonperturbative
            ));
        }
        out
    }
}

fn check_grid(name: &str, grid: &[f64], sorted: bool) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} grid has non-finite entries")));
    }
    if sorted && grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(format!("{name} grid must be sorted ascending")));
    }
    Ok(())
}

struct Row {
    dpl: Vec<f64>,
    baseline: f64,
    lines: Vec<LineMarker>,
    imag: f64,
    nonperturbative: usize,
}

fn spectrum_row(center: &CenterParams, rates: &RateParams, bx: f64, drive: &DriveParams, freqs: &[f64]) -> Result<Row> {
    let solver = ResponseSolver::new(center, rates, bx, drive.axis)?;
    let mut dpl = Vec::with_capacity(freqs.len());
    let mut imag: f64 = 0.0;
    let mut nonperturbative = 0;
    for &f in freqs {
        let r = solver.response(drive.b1, f)?;
        imag = imag.max(r.imag_residue);
        nonperturbative += usize::from(!r.is_perturbative());
        dpl.push(r.dpl);
    }
    let mut lines = Vec::with_capacity(12);
    for level in Level::BOTH {
        let eig = hermitian_eig(&crate::hamiltonian::build_hamiltonian(level, center, bx))?;
        for t in transitions_from_eig(&eig, level, bx, drive.axis).transitions {
            lines.push(LineMarker { level, i: t.i, j: t.j, freq: t.freq, m2: t.m2 });
        }
    }
    Ok(Row { dpl, baseline: solver.baseline(), lines, imag, nonperturbative })
}

fn assemble(freqs: &[f64], fields: &[f64], rows: Vec<Row>) -> OdmrResult {
    let mut out = OdmrResult {
        freqs: freqs.to_vec(),
        fields: fields.to_vec(),
        dpl: Vec::with_capacity(rows.len()),
        baseline: Vec::with_capacity(rows.len()),
        lines: Vec::with_capacity(rows.len()),
        max_imag_residue: 0.0,
        nonperturbative: 0,
    };
    for row in rows {
        out.max_imag_residue = out.max_imag_residue.max(row.imag);
        out.nonperturbative += row.nonperturbative;
        out.dpl.push(row.dpl);
        out.baseline.push(row.baseline);
        out.lines.push(row.lines);
    }
    out
}

/// ODMR spectrum at one field over an ascending frequency grid (MHz).
pub fn odmr_spectrum(center: &CenterParams, rates: &RateParams, bx: f64, drive: &DriveParams, freqs: &[f64]) -> Result<OdmrResult> {
    drive.validate()?;
    check_grid("frequency", freqs, true)?;
    let row = spectrum_row(center, rates, bx, drive, freqs)?;
    Ok(assemble(freqs, &[bx], vec![row]))
}

/// ODMR map over field and frequency grids. Fields are evaluated in
/// parallel on the current rayon pool; rows come back in grid order.
pub fn odmr_map(center: &CenterParams, rates: &RateParams, drive: &DriveParams, freqs: &[f64], fields: &[f64]) -> Result<OdmrResult> {
    drive.validate()?;
    check_grid("frequency", freqs, true)?;
    check_grid("field", fields, false)?;
    let rows = fields.par_iter().map(|&bx| spectrum_row(center, rates, bx, drive, freqs)).collect::<Result<Vec<_>>>()?;
    Ok(assemble(freqs, fields, rows))
}

/// A contiguous run of grid points where `|dpl|` exceeds a threshold with
/// one sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feature {
    pub start: usize,
    pub end: usize,
    /// Frequency of the extremum, refined by a parabola through its
    /// neighbours, MHz.
    pub center: f64,
    pub extremum: f64,
    /// Trapezoidal area over the run, MHz.
    pub area: f64,
}

/// Splits a spectrum into resonance features above `rel_threshold` times
/// the largest `|dpl|`.
pub fn resonance_features(freqs: &[f64], dpl: &[f64], rel_threshold: f64) -> Vec<Feature> {
    assert_eq!(freqs.len(), dpl.len(), "frequency and response grids differ in length");
    let peak = dpl.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Vec::new();
    }
    let thr = rel_threshold * peak;
    let mut features = Vec::new();
    let mut k = 0;
    while k < dpl.len() {
        if dpl[k].abs() <= thr {
            k += 1;
            continue;
        }
        let sign = dpl[k].signum();
        let start = k;
        while k < dpl.len() && dpl[k].abs() > thr && dpl[k].signum() == sign {
            k += 1;
        }
        let end = k - 1;
        let ext = (start..=end).max_by(|&a, &b| dpl[a].abs().total_cmp(&dpl[b].abs())).unwrap_or(start);
        let mut center = freqs[ext];
        if ext > 0 && ext + 1 < dpl.len() {
            let (y0, y1, y2) = (dpl[ext - 1], dpl[ext], dpl[ext + 1]);
            let denom = y0 - 2.0 * y1 + y2;
            let h = 0.5 * (freqs[ext + 1] - freqs[ext - 1]);
            if denom != 0.0 {
                let shift = 0.5 * (y0 - y2) / denom;
                if shift.abs() <= 1.0 {
                    center += shift * h;
                }
            }
        }
        let area = (start..end).map(|i| 0.5 * (dpl[i] + dpl[i + 1]) * (freqs[i + 1] - freqs[i])).sum();
        features.push(Feature { start, end, center, extremum: dpl[ext], area });
    }
    features
}
