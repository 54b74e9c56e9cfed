//! Acceptance criteria 1-8. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured quantities, then asserts.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use spinquad_core::hamiltonian::{crossover_fields, transition_table};
use spinquad_core::kinetics::{build_generator, steady_state};
use spinquad_core::multipoles::{
    dipole_moment, dipole_x, extract_from_peak_areas, husimi, multipoles_from_populations, quadrupole, quadrupole_moment, Calibration,
    PeakAreaSet, TransitionKey, DEFAULT_HUSIMI_PHI, DEFAULT_HUSIMI_THETA,
};
use spinquad_core::nalgebra::Vector4;
use spinquad_core::odmr::{odmr_map, odmr_spectrum, resonance_features, ResponseSolver};
use spinquad_core::rate_model::{
    d0, large_field_signals, population_variations_at, rate_model_lines, small_field_x, small_field_x_inverse, transfer_matrices,
};
use spinquad_core::{CenterParams, Complex64, ComplexMat4, DriveAxis, DriveParams, Level, RateParams};

fn report(n: u32, ok: bool, detail: String) {
    println!("criterion {n}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + step * k as f64).collect()
}

/// Root of a sign-changing function on `[lo, hi]` by bisection.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) < 0.0, "no sign change on [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) * flo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_1_zero_field_lines() {
    let center = CenterParams::default();
    let rates = RateParams::default();
    // starts above the zero-frequency line inside each Kramers doublet
    let freqs = grid(10.0, 600.0, 0.02);
    let spec = odmr_spectrum(&center, &rates, 0.0, &DriveParams::default(), &freqs).unwrap();
    let feats = resonance_features(&freqs, &spec.dpl[0], 1e-3);
    let ok = feats.len() == 2
        && (feats[0].center - 70.0).abs() <= 0.5
        && (feats[1].center - 440.0).abs() <= 0.5
        && feats.iter().all(|f| f.extremum > 0.0)
        && spec.nonperturbative == 0;
    let detail = feats.iter().map(|f| format!("{:.3} MHz ({:+.3e})", f.center, f.extremum)).collect::<Vec<_>>().join(", ");
    report(1, ok, format!("{} features: {detail}", feats.len()));
    assert!(ok);
}

#[test]
fn criterion_2_crossover_fields() {
    let (bg, be) = crossover_fields(&CenterParams::default());
    let ok = ((bg - 1.25) / 1.25).abs() < 5e-3 && ((be - 7.86) / 7.86).abs() < 5e-3;
    report(2, ok, format!("GS {bg:.4} mT, ES {be:.4} mT"));
    assert!(ok);
}

/// Summed ES-window response of one map row.
fn es_window_signal(freqs: &[f64], row: &[f64]) -> f64 {
    freqs.windows(2).zip(row.windows(2)).map(|(f, d)| 0.5 * (d[0] + d[1]) * (f[1] - f[0])).sum()
}

#[test]
fn criterion_3_excited_sign_inversion() {
    let center = CenterParams::default();
    let rates = RateParams::default();
    let freqs = grid(380.0, 500.0, 0.1);
    let fields = grid(0.2, 2.0, 0.1);
    let map = odmr_map(&center, &rates, &DriveParams::default(), &freqs, &fields).unwrap();
    let signal: Vec<f64> = map.dpl.iter().map(|row| es_window_signal(&freqs, row)).collect();
    let flips: Vec<usize> = (1..fields.len()).filter(|&k| signal[k - 1] > 0.0 && signal[k] <= 0.0).collect();
    let crossing = flips.first().map(|&k| {
        let (b0, b1, s0, s1) = (fields[k - 1], fields[k], signal[k - 1], signal[k]);
        b0 + (b1 - b0) * s0 / (s0 - s1)
    });
    let positive_before = flips.len() == 1 && signal[0] > 0.0 && signal.last().copied().unwrap_or(0.0) < 0.0;

    let ratio = rates.eta_e / rates.eta_g;
    let b_root = bisect(|b| small_field_x(b) - ratio, 0.0, 5.0);
    let b_closed = small_field_x_inverse(ratio).unwrap();
    let b_mt = b_root * center.d_g / center.gyro(Level::Ground);

    let map_ok = crossing.is_some_and(|b| (b - 1.0).abs() <= 0.3) && positive_before;
    let root_ok = (b_root - 0.676).abs() <= 1e-3 && (b_closed - b_root).abs() < 1e-9 && (b_mt - 1.0).abs() <= 0.3;
    report(3, map_ok && root_ok, format!("map crossing {:?} mT, x-root b_g = {b_root:.5} ({b_mt:.3} mT), ratio {ratio}", crossing));
    assert!(map_ok && root_ok);
}

#[test]
fn criterion_4_ground_central_negative_line() {
    let center = CenterParams::default();
    let rates = RateParams::default();
    let freqs = grid(100.0, 280.0, 0.02);
    let spec = odmr_spectrum(&center, &rates, 7.0, &DriveParams::default(), &freqs).unwrap();
    let feats = resonance_features(&freqs, &spec.dpl[0], 0.02);
    let signs: Vec<i32> = feats.iter().map(|f| f.extremum.signum() as i32).collect();
    let ok = signs == [1, -1, 1];
    let detail = feats.iter().map(|f| format!("{:.2} MHz ({:+.2e})", f.center, f.extremum)).collect::<Vec<_>>().join(", ");
    report(4, ok, format!("GS features at 7 mT: {detail}"));
    assert!(ok);
}

#[test]
fn criterion_5_large_field_trichotomy() {
    let with_ratio = |ratio: f64| RateParams { eta_g: 0.5, eta_e: 0.5 * ratio, ..RateParams::default() };
    let bs: Vec<f64> = (1..=5000).map(|k| k as f64 * 1e-3).collect();

    let inner_neg = [0.7, 1.5, 2.5].iter().all(|&r| bs.iter().all(|&b| large_field_signals(&with_ratio(r), b).1 < 0.0));
    let pos = bs.iter().all(|&b| large_field_signals(&with_ratio(0.7), b).0 > 0.0);
    let neg = bs.iter().all(|&b| large_field_signals(&with_ratio(2.5), b).0 < 0.0);

    let mid = with_ratio(1.5);
    let outer = |b: f64| large_field_signals(&mid, b).0;
    let brackets: Vec<(f64, f64)> = bs.windows(2).filter(|w| outer(w[0]) * outer(w[1]) < 0.0).map(|w| (w[0], w[1])).collect();
    let roots: Vec<f64> = brackets.iter().map(|&(a, b)| bisect(outer, a, b)).collect();
    let product = if roots.len() == 2 { roots[0] * roots[1] } else { f64::NAN };
    let ok = inner_neg && pos && neg && roots.len() == 2 && (product - 1.0).abs() <= 1e-6;
    report(5, ok, format!("inner<0 {inner_neg}, ratio 0.7 >0 {pos}, ratio 2.5 <0 {neg}, ratio 1.5 roots {roots:?} product {product:.9}"));
    assert!(ok);
}

#[test]
fn criterion_6_multipole_curves() {
    let center = CenterParams::default();
    let rates = RateParams::default();
    let fields = grid(0.0, 15.0, 0.25);
    let mut qg = Vec::new();
    let mut qe = Vec::new();
    let mut dg = Vec::new();
    let mut de = Vec::new();
    for &bx in &fields {
        let s = steady_state(&build_generator(&center, &rates, bx).unwrap()).unwrap();
        qg.push(quadrupole(&s.rho_g).unwrap());
        qe.push(quadrupole(&s.rho_e).unwrap());
        dg.push(dipole_x(&s.rho_g).unwrap());
        de.push(dipole_x(&s.rho_e).unwrap());
    }
    let peak = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let last = fields.len() - 1;

    let qg_ok = qg.iter().all(|&q| q < 0.0);
    let qe_ok = qe[0] < 0.0 && fields.iter().zip(&qe).filter(|(b, _)| **b > 2.0).all(|(_, &q)| q > 0.0);
    let dip0_ok = dg[0].abs() < 1e-10 && de[0].abs() < 1e-10;
    let decay_g = dg[last].abs() / peak(&dg);
    let decay_e = de[last].abs() / peak(&de);
    let decay_ok = decay_g < 0.1 && decay_e < 0.1;

    let ok = qg_ok && qe_ok && dip0_ok && decay_ok;
    report(
        6,
        ok,
        format!(
            "quad_g<0 {qg_ok}; quad_e(0)={:+.4}, >0 above 2 mT {qe_ok}; dip(0)=({:.1e}, {:.1e}); \
             |dip(15 mT)|/peak = GS {decay_g:.3}, ES {decay_e:.3} (required < 0.1)",
            qe[0], dg[0], de[0]
        ),
    );
    assert!(qg_ok && qe_ok && dip0_ok, "shape and sign clauses");
    assert!(decay_ok, "dipole decay clause: GS {decay_g:.3}, ES {decay_e:.3} of peak at 15 mT");
}

/// Rates a thousand times slower than the defaults: every splitting above
/// ~1 MHz is then >= 10^3 times every rate.
fn secular_rates(eta_scale: f64) -> RateParams {
    let d = RateParams::default();
    RateParams {
        pump: d.pump * 1e-3,
        recomb: d.recomb * 1e-3,
        gamma_ms: d.gamma_ms * 1e-3,
        gamma_g: d.gamma_g * 1e-3,
        gamma_e: d.gamma_e * 1e-3,
        eta_g: d.eta_g * eta_scale,
        eta_e: d.eta_e * eta_scale,
    }
}

/// `int dpl df` over `[lo, hi]` by the substitution `f = f0 + w tan(u)`,
/// which makes a Lorentzian of half-width `w` flat in `u`.
fn line_area(solver: &ResponseSolver, b1: f64, f0: f64, w: f64, lo: f64, hi: f64, n: usize) -> f64 {
    let (ul, uh) = (((lo - f0) / w).atan(), ((hi - f0) / w).atan());
    let du = (uh - ul) / n as f64;
    (0..n)
        .map(|k| {
            let u = ul + (k as f64 + 0.5) * du;
            let f = f0 + w * u.tan();
            solver.response(Complex64::new(b1, 0.0), f).unwrap().dpl * w / u.cos().powi(2)
        })
        .sum::<f64>()
        * du
}

struct SecularCheck {
    lines: usize,
    sign_mismatches: Vec<String>,
    max_area_error: f64,
    max_position_error: f64,
}

fn secular_comparison(rates: &RateParams, fields: &[f64], with_areas: bool) -> SecularCheck {
    let center = CenterParams::default();
    let b1 = 1e-6;
    let mut out = SecularCheck { lines: 0, sign_mismatches: Vec::new(), max_area_error: 0.0, max_position_error: 0.0 };
    for &bx in fields {
        let model = rate_model_lines(&center, rates, bx, DriveAxis::Y).unwrap();
        let strongest = model.iter().fold(0.0_f64, |m, l| m.max(l.intensity.abs()));
        let visible: Vec<_> = model.iter().filter(|l| l.intensity.abs() > 0.01 * strongest && l.freq > 1.0).collect();
        let solver = ResponseSolver::new(&center, rates, bx, DriveAxis::Y).unwrap();
        let mut areas = Vec::new();
        for l in &visible {
            let nearest =
                model.iter().filter(|o| (o.freq - l.freq).abs() > 1e-6).map(|o| (o.freq - l.freq).abs()).fold(f64::INFINITY, f64::min);
            let width = match l.level {
                Level::Ground => (rates.pump + rates.gamma_g) / std::f64::consts::TAU,
                Level::Excited => rates.excited_loss() / std::f64::consts::TAU,
            };
            // peak position: extremum of |dpl| on a grid of width / 20 around the line
            let step = width / 20.0;
            let (mut best_f, mut best_v) = (l.freq, 0.0_f64);
            for k in -200..=200 {
                let f = l.freq + step * k as f64;
                let v = solver.response(Complex64::new(b1, 0.0), f).unwrap().dpl;
                if v.abs() > best_v.abs() {
                    best_f = f;
                    best_v = v;
                }
            }
            out.max_position_error = out.max_position_error.max((best_f - l.freq).abs() / step);
            if best_v.signum() != l.intensity.signum() {
                out.sign_mismatches.push(format!("{bx} mT {}{}-{} ({:.2} MHz)", l.level.short_name(), l.i + 1, l.j + 1, l.freq));
            }
            if with_areas {
                let half = 0.5 * nearest.min(50.0);
                areas.push((line_area(&solver, b1, l.freq, width, l.freq - half, l.freq + half, 400), l.intensity));
            }
            out.lines += 1;
        }
        if with_areas && !areas.is_empty() {
            let full_max = areas.iter().fold(0.0_f64, |m, a| m.max(a.0.abs()));
            let rate_max = areas.iter().fold(0.0_f64, |m, a| m.max(a.1.abs()));
            for (full, rate) in &areas {
                out.max_area_error = out.max_area_error.max((full / full_max - rate / rate_max).abs());
            }
        }
    }
    out
}

#[test]
fn criterion_7_oracle_equivalence() {
    let center = CenterParams::default();

    // (a) secular limit: signs and positions at the default selectivities,
    // relative areas at selectivities small enough for the first-order model
    let fields = grid(0.75, 15.0, 0.75);
    let signs = secular_comparison(&secular_rates(1.0), &fields, false);
    let areas = secular_comparison(&secular_rates(0.01), &[2.0, 7.0, 12.0], true);
    let a_ok = signs.sign_mismatches.is_empty() && signs.max_position_error <= 1.0 && areas.max_area_error <= 0.05;

    // (b) population formula vs trace form
    let mut rng = StdRng::seed_from_u64(7);
    let mut b_err: f64 = 0.0;
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = raw.iter().sum::<f64>() / 4.0;
        let df = Vector4::from_iterator(raw.iter().map(|v| v - mean));
        let b: f64 = rng.random_range(0.0..3.0);
        let bx = b * center.d_g / center.gyro(Level::Ground);
        let eig = spinquad_core::hamiltonian::eigensystem(Level::Ground, &center, bx).unwrap();
        let rho = eig.vectors * ComplexMat4::from_diagonal(&df.map(|v| Complex64::new(v, 0.0))) * eig.vectors.adjoint();
        let (q, d) = multipoles_from_populations(&df, center.reduced_field(Level::Ground, bx)).unwrap();
        b_err = b_err.max((q - quadrupole_moment(&rho)).abs()).max((d - dipole_moment(&rho)).abs());
    }
    let b_ok = b_err <= 1e-8;

    // (c) x(b) is the d0 eigenvalue of T_0g T_g0
    let mut c_err: f64 = 0.0;
    for b in [0.0, 0.3, 0.676, 1.0, 2.0, 5.0] {
        let tm = transfer_matrices(&center, b * center.d_g / center.gyro(Level::Ground)).unwrap();
        let v = tm.t_g0.transpose() * tm.t_g0 * d0();
        c_err = c_err.max((v - d0() * small_field_x(b)).amax());
    }
    let c_ok = c_err <= 1e-8;

    // (d) extraction round trip on model-generated areas
    let rates = RateParams::default();
    let mut d_err: f64 = 0.0;
    for bx in [3.0, 10.0, 14.0] {
        let (_, pv) = population_variations_at(&center, &rates, bx).unwrap();
        let mut gs = PeakAreaSet::new(Level::Ground, bx);
        let mut es = PeakAreaSet::new(Level::Excited, bx);
        for l in rate_model_lines(&center, &rates, bx, DriveAxis::Y).unwrap() {
            let key = TransitionKey { i: l.i, j: l.j };
            match l.level {
                Level::Ground if PeakAreaSet::ground_keys().contains(&key) => {
                    gs.areas.insert(key, l.intensity);
                }
                Level::Excited => {
                    es.areas.insert(key, l.intensity);
                }
                _ => {}
            }
        }
        let ex = extract_from_peak_areas(&gs, &es, &center, &rates, bx, DriveAxis::Y, Calibration::Uncalibrated).unwrap();
        d_err = d_err.max((ex.df_g - pv.df_g).amax() / pv.df_g.amax()).max((ex.df_e - pv.df_e).amax() / pv.df_e.amax());
    }
    let d_ok = d_err <= 1e-9;

    let ok = a_ok && b_ok && c_ok && d_ok;
    report(
        7,
        ok,
        format!(
            "(a) {} lines, sign mismatches {:?}, position error {:.2} grid steps, area error {:.4} over {} lines; \
             (b) {b_err:.2e}; (c) {c_err:.2e}; (d) {d_err:.2e}",
            signs.lines, signs.sign_mismatches, signs.max_position_error, areas.max_area_error, areas.lines
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_structural_invariants() {
    let center = CenterParams::default();
    let mut rng = StdRng::seed_from_u64(8);
    let mut worst_stochastic: f64 = 0.0;
    let mut worst_leak: f64 = 0.0;
    let mut worst_eig = f64::INFINITY;
    let mut worst_norm: f64 = 0.0;
    let mut worst_scaling: f64 = 0.0;
    let mut scaling_checks = 0;
    for draw in 0..100 {
        let rates = RateParams {
            pump: rng.random_range(0.1..10.0),
            recomb: rng.random_range(0.5..50.0),
            gamma_ms: rng.random_range(0.05..5.0),
            eta_g: rng.random_range(-1.0..=1.0),
            eta_e: rng.random_range(-1.0..=1.0),
            gamma_g: rng.random_range(0.0..0.5),
            gamma_e: rng.random_range(0.0..1.0),
        };
        let bx: f64 = rng.random_range(0.0..20.0);

        let tm = transfer_matrices(&center, bx).unwrap();
        for t in [tm.t_g0, tm.t_e0, tm.t_eg] {
            for k in 0..4 {
                worst_stochastic = worst_stochastic.max((t.row(k).sum() - 1.0).abs()).max((t.column(k).sum() - 1.0).abs());
            }
        }
        let gen = build_generator(&center, &rates, bx).unwrap();
        worst_leak = worst_leak.max(gen.trace_leak());
        let s = steady_state(&gen).unwrap();
        for rho in [&s.rho_g, &s.rho_e] {
            let herm = (rho + rho.adjoint()).scale(0.5);
            let min = spinquad_core::nalgebra::SymmetricEigen::new(herm).eigenvalues.min();
            worst_eig = worst_eig.min(min);
        }
        worst_eig = worst_eig.min(s.n_m);

        if draw % 10 == 0 {
            for rho in [&s.rho_g, &s.rho_e] {
                let h = husimi(rho, DEFAULT_HUSIMI_THETA, DEFAULT_HUSIMI_PHI).unwrap();
                worst_norm = worst_norm.max((h.normalization() - rho.trace().re).abs() / rho.trace().re);
            }
            let solver = ResponseSolver::new(&center, &rates, bx, DriveAxis::Y).unwrap();
            let line = transition_table(Level::Ground, &center, bx).unwrap();
            let target = line.transitions.iter().max_by(|a, b| a.m2.total_cmp(&b.m2)).unwrap();
            let b1 = 1e-4;
            let r1 = solver.response(Complex64::new(b1, 0.0), target.freq).unwrap();
            let r2 = solver.response(Complex64::new(2.0 * b1, 0.0), target.freq).unwrap();
            let r3 = solver.response(Complex64::new(3.0 * b1, 0.0), target.freq).unwrap();
            if r3.is_perturbative() && r1.dpl != 0.0 {
                worst_scaling = worst_scaling.max((r2.dpl / r1.dpl - 4.0).abs() / 4.0).max((r3.dpl / r1.dpl - 9.0).abs() / 9.0);
                scaling_checks += 1;
            }
        }
    }
    let ok = worst_stochastic <= 1e-10
        && worst_leak <= 1e-10
        && worst_eig >= -1e-9
        && worst_norm <= 1e-3
        && worst_scaling <= 0.01
        && scaling_checks >= 5;
    report(
        8,
        ok,
        format!(
            "stochastic {worst_stochastic:.1e}, trace leak {worst_leak:.1e}, min eigenvalue {worst_eig:.1e}, \
             Husimi norm {worst_norm:.1e}, quadratic scaling {worst_scaling:.1e} over {scaling_checks} points"
        ),
    );
    assert!(ok);
}
