//! Spin-3/2 operators and the small amount of 4x4 complex linear algebra the
//! rest of the crate is built on.
//!
//! All matrices are written in the fixed z basis
//! `(|+3/2>, |+1/2>, |-1/2>, |-3/2>)`.

use std::sync::OnceLock;

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::Level;

pub type ComplexMat4 = Matrix4<Complex64>;
pub type ComplexVec4 = Vector4<Complex64>;

/// Absolute Hermiticity tolerance (scaled by `max(1, |m|_max)`).
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Eigenvalues closer than this fraction of the spectral range are treated
/// as one degenerate level.
pub const DEGENERACY_RTOL: f64 = 1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Spin-3/2 angular momentum matrices (units of hbar) and the doublet projectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperators {
    pub sx: ComplexMat4,
    pub sy: ComplexMat4,
    pub sz: ComplexMat4,
    /// Projector onto `|+1/2>, |-1/2>`.
    pub p_half: ComplexMat4,
    /// Projector onto `|+3/2>, |-3/2>`.
    pub p_three_half: ComplexMat4,
}

impl SpinOperators {
    /// Shared instance; the operators never change.
    pub fn get() -> &'static SpinOperators {
        static OPS: OnceLock<SpinOperators> = OnceLock::new();
        OPS.get_or_init(make_spin_operators)
    }

    /// `S_z^2 - 5/4`, the quadrupole operator.
    pub fn quadrupole_op(&self) -> ComplexMat4 {
        self.sz * self.sz - ComplexMat4::identity().scale(1.25)
    }
}

/// Builds `S_x`, `S_y`, `S_z` from the ladder operator `S_+` and the two
/// doublet projectors.
pub fn make_spin_operators() -> SpinOperators {
    let spin = 1.5_f64;
    let m = [1.5_f64, 0.5, -0.5, -1.5];

    // <m+1|S+|m> = sqrt(S(S+1) - m(m+1)); row k holds m[k], column k+1 holds m[k+1].
    let mut s_plus = ComplexMat4::zeros();
    for k in 0..3 {
        let mk = m[k + 1];
        s_plus[(k, k + 1)] = Complex64::new((spin * (spin + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
    }
    let s_minus = s_plus.adjoint();

    let sx = (s_plus + s_minus).scale(0.5);
    let sy = (s_plus - s_minus) * Complex64::new(0.0, -0.5);
    let sz = ComplexMat4::from_diagonal(&Vector4::from_iterator(m.iter().map(|&v| Complex64::new(v, 0.0))));

    let p_half = ComplexMat4::from_diagonal(&Vector4::new(ZERO, ONE, ONE, ZERO));
    let p_three_half = ComplexMat4::from_diagonal(&Vector4::new(ONE, ZERO, ZERO, ONE));

    SpinOperators { sx, sy, sz, p_half, p_three_half }
}

/// `[a, b] = ab - ba`.
pub fn commutator(a: &ComplexMat4, b: &ComplexMat4) -> ComplexMat4 {
    a * b - b * a
}

/// Symmetrized product `{a, b} = (ab + ba) / 2`.
///
/// Note the factor one half: the identity is the neutral element.
pub fn sym_anticommutator(a: &ComplexMat4, b: &ComplexMat4) -> ComplexMat4 {
    (a * b + b * a).scale(0.5)
}

/// Largest entry magnitude.
pub fn max_abs(m: &ComplexMat4) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// `max |m - m^dagger|`.
pub fn hermiticity_deviation(m: &ComplexMat4) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Which level and field an eigenbasis was computed for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisTag {
    pub level: Level,
    pub bx_mt: f64,
}

/// Eigen-decomposition of a Hermitian 4x4 matrix with energies in descending
/// order. Column `k` of `vectors` belongs to `energies[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub energies: [f64; 4],
    pub vectors: ComplexMat4,
    pub tag: Option<BasisTag>,
}

impl EigenSystem {
    pub fn vector(&self, k: usize) -> ComplexVec4 {
        self.vectors.column(k).into_owned()
    }

    /// `V diag(E) V^dagger`.
    pub fn reconstruct(&self) -> ComplexMat4 {
        let d = ComplexMat4::from_diagonal(&Vector4::from_iterator(self.energies.iter().map(|&e| Complex64::new(e, 0.0))));
        self.vectors * d * self.vectors.adjoint()
    }

    /// `<k| op |l>` in this eigenbasis.
    pub fn matrix_element(&self, op: &ComplexMat4, k: usize, l: usize) -> Complex64 {
        (self.vectors.column(k).adjoint() * op * self.vectors.column(l))[(0, 0)]
    }

    /// `V^dagger op V`.
    pub fn to_eigenbasis(&self, op: &ComplexMat4) -> ComplexMat4 {
        self.vectors.adjoint() * op * self.vectors
    }

    pub fn with_tag(mut self, level: Level, bx_mt: f64) -> Self {
        self.tag = Some(BasisTag { level, bx_mt });
        self
    }
}

/// Diagonalizes a Hermitian matrix.
///
/// Energies come out in descending order. Inside a degenerate subspace the
/// eigenvectors are the projections of the canonical basis vectors taken in
/// basis order and Gram-Schmidt orthonormalized, so that e.g. a diagonal
/// input always returns canonical vectors. Every vector is phase-fixed so
/// that its largest component is real and positive.
pub fn hermitian_eig(m: &ComplexMat4) -> Result<EigenSystem> {
    let scale = max_abs(m).max(1.0);
    let deviation = hermiticity_deviation(m);
    if !deviation.is_finite() || deviation > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian { deviation });
    }
    let h = (m + m.adjoint()).scale(0.5);

    let eig = SymmetricEigen::new(h);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut energies = [0.0; 4];
    let mut raw = ComplexMat4::zeros();
    for (dst, &src) in order.iter().enumerate() {
        energies[dst] = eig.eigenvalues[src];
        raw.set_column(dst, &eig.eigenvectors.column(src));
    }

    let range = energies[0] - energies[3];
    let threshold = DEGENERACY_RTOL * range;
    let mut vectors = ComplexMat4::zeros();
    let mut start = 0;
    while start < 4 {
        let mut end = start + 1;
        while end < 4 && energies[end - 1] - energies[end] <= threshold {
            end += 1;
        }
        if end - start == 1 {
            vectors.set_column(start, &fix_phase(raw.column(start).into_owned()));
        } else {
            let group = canonical_subspace_basis(&raw, start, end);
            for (offset, v) in group.into_iter().enumerate() {
                vectors.set_column(start + offset, &v);
            }
        }
        start = end;
    }

    Ok(EigenSystem { energies, vectors, tag: None })
}

fn canonical_subspace_basis(raw: &ComplexMat4, start: usize, end: usize) -> Vec<ComplexVec4> {
    let size = end - start;
    let mut projector = ComplexMat4::zeros();
    for k in start..end {
        let v = raw.column(k);
        projector += v * v.adjoint();
    }

    let mut basis: Vec<ComplexVec4> = Vec::with_capacity(size);
    for k in 0..4 {
        if basis.len() == size {
            break;
        }
        let mut candidate: ComplexVec4 = projector.column(k).into_owned();
        for b in &basis {
            let overlap = b.dotc(&candidate);
            candidate -= b * overlap;
        }
        let norm = candidate.norm();
        if norm > 1e-6 {
            basis.push(fix_phase(candidate.unscale(norm)));
        }
    }
    debug_assert_eq!(basis.len(), size);
    basis
}

fn fix_phase(v: ComplexVec4) -> ComplexVec4 {
    let largest = v.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
    if largest == 0.0 {
        return v;
    }
    let pivot = v.iter().position(|z| z.norm() >= largest * (1.0 - 1e-10)).unwrap_or(0);
    let phase = v[pivot].conj() / v[pivot].norm();
    let mut out = v * phase;
    out[pivot] = Complex64::new(out[pivot].norm(), 0.0);
    out
}

/// `exp(-i t h)` for Hermitian `h`, computed from the eigen-decomposition.
pub fn expm_hermitian(h: &ComplexMat4, t: f64) -> Result<ComplexMat4> {
    let eig = hermitian_eig(h)?;
    Ok(unitary_from_eig(&eig, t))
}

fn unitary_from_eig(eig: &EigenSystem, t: f64) -> ComplexMat4 {
    let phases = Vector4::from_iterator(eig.energies.iter().map(|&e| Complex64::from_polar(1.0, -t * e)));
    eig.vectors * ComplexMat4::from_diagonal(&phases) * eig.vectors.adjoint()
}

/// `U = exp(-i phi S_z) exp(-i theta S_y)`.
pub fn rotation_operator(theta: f64, phi: f64) -> ComplexMat4 {
    static SY_EIG: OnceLock<EigenSystem> = OnceLock::new();
    let ops = SpinOperators::get();
    let sy_eig = SY_EIG.get_or_init(|| hermitian_eig(&ops.sy).expect("S_y is Hermitian"));

    let z_phases = Vector4::from_iterator(ops.sz.diagonal().iter().map(|m| Complex64::from_polar(1.0, -phi * m.re)));
    ComplexMat4::from_diagonal(&z_phases) * unitary_from_eig(sy_eig, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn close(a: &ComplexMat4, b: &ComplexMat4, tol: f64) -> bool {
        max_abs(&(a - b)) <= tol
    }

    #[test]
    fn sz_is_diagonal_in_basis_order() {
        let ops = make_spin_operators();
        let expected = ComplexMat4::from_diagonal(&Vector4::new(c(1.5), c(0.5), c(-0.5), c(-1.5)));
        assert_eq!(ops.sz, expected);
    }

    #[test]
    fn sx_ladder_entry() {
        let ops = make_spin_operators();
        assert!((ops.sx[(0, 1)] - c(3f64.sqrt() / 2.0)).norm() < 1e-15);
        assert!((ops.sx[(1, 2)] - c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn angular_momentum_algebra() {
        let o = make_spin_operators();
        let i = Complex64::i();
        assert!(close(&commutator(&o.sx, &o.sy), &(o.sz * i), 1e-12));
        assert!(close(&commutator(&o.sy, &o.sz), &(o.sx * i), 1e-12));
        assert!(close(&commutator(&o.sz, &o.sx), &(o.sy * i), 1e-12));
        let casimir = o.sx * o.sx + o.sy * o.sy + o.sz * o.sz;
        assert!(close(&casimir, &ComplexMat4::identity().scale(3.75), 1e-12));
    }

    #[test]
    fn projectors_partition_identity() {
        let o = make_spin_operators();
        assert_eq!(o.p_half + o.p_three_half, ComplexMat4::identity());
        assert_eq!(o.p_half * o.p_half, o.p_half);
        assert_eq!(o.p_three_half * o.p_three_half, o.p_three_half);
        assert_eq!(o.p_half.adjoint(), o.p_half);
    }

    #[test]
    fn commutator_examples() {
        let o = make_spin_operators();
        assert_eq!(commutator(&o.sx, &o.sx), ComplexMat4::zeros());
        assert_eq!(commutator(&ComplexMat4::identity(), &o.sy), ComplexMat4::zeros());
    }

    #[test]
    fn sym_anticommutator_examples() {
        let o = make_spin_operators();
        assert_eq!(sym_anticommutator(&ComplexMat4::identity(), &o.sx), o.sx);
        assert_eq!(sym_anticommutator(&o.p_half, &o.p_half), o.p_half);
        assert_eq!(sym_anticommutator(&o.p_half, &o.p_three_half), ComplexMat4::zeros());
    }

    #[test]
    fn eig_of_diagonal_uses_canonical_vectors() {
        let m = ComplexMat4::from_diagonal(&Vector4::new(c(35.0), c(-35.0), c(-35.0), c(35.0)));
        let eig = hermitian_eig(&m).unwrap();
        assert_eq!(eig.energies, [35.0, 35.0, -35.0, -35.0]);
        // +D doublet: |+3/2>, |-3/2>; -D doublet: |+1/2>, |-1/2>.
        for (col, basis_index) in [(0, 0), (1, 3), (2, 1), (3, 2)] {
            assert!((eig.vectors[(basis_index, col)] - c(1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn eig_of_zero_is_canonical_basis() {
        let eig = hermitian_eig(&ComplexMat4::zeros()).unwrap();
        assert_eq!(eig.energies, [0.0; 4]);
        assert_eq!(eig.vectors, ComplexMat4::identity());
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut m = ComplexMat4::zeros();
        m[(0, 1)] = c(1.0);
        assert!(matches!(hermitian_eig(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn eig_is_deterministic_and_phase_fixed() {
        let o = make_spin_operators();
        let h = o.sx.scale(0.7) + o.sy.scale(-0.2) + o.sz * o.sz;
        let a = hermitian_eig(&h).unwrap();
        let b = hermitian_eig(&h).unwrap();
        assert_eq!(a, b);
        for k in 0..4 {
            let v = a.vector(k);
            let (idx, _) = v.iter().enumerate().fold((0, 0.0), |acc, (i, z)| if z.norm() > acc.1 + 1e-12 { (i, z.norm()) } else { acc });
            assert!(v[idx].im.abs() < 1e-14 && v[idx].re > 0.0);
        }
        assert!(close(&a.reconstruct(), &h, 1e-12));
    }

    #[test]
    fn rotation_identity_and_flip() {
        assert!(close(&rotation_operator(0.0, 0.0), &ComplexMat4::identity(), 1e-14));
        let u = rotation_operator(PI, 0.0);
        let up = ComplexVec4::new(c(1.0), c(0.0), c(0.0), c(0.0));
        let flipped = u * up;
        assert!((flipped[3].norm() - 1.0).abs() < 1e-12);
        for k in 0..3 {
            assert!(flipped[k].norm() < 1e-12);
        }
    }

    #[test]
    fn expm_of_zero_generator_is_identity() {
        let u = expm_hermitian(&ComplexMat4::zeros(), 3.0).unwrap();
        assert!(close(&u, &ComplexMat4::identity(), 0.0));
    }
}
