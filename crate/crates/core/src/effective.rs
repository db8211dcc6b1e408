//! Single-resonance reduction around the upper limit cycle.
//!
//! In the co-moving phase `vartheta = theta - omega t` and `J = I - I+` the
//! dynamics near the upper resonance is that of a tilted pendulum,
//! `H = G J^2/2 - V cos(vartheta) + gamma I+ vartheta`. The local basin is
//! the well bounded by the separatrix through the lower saddle.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{derive_geometry, ModelParams};
use crate::quantum::{Frame, MomentumBasis};
use crate::superop::{build_liouvillian_in, spectrum, SpectrumKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveParams {
    pub g: f64,
    pub v_plus: f64,
    pub gamma: f64,
    pub i_plus: f64,
    pub hbar: f64,
}

impl EffectiveParams {
    pub fn from_model(params: &ModelParams) -> Self {
        Self {
            g: params.g,
            v_plus: params.v_plus,
            gamma: params.gamma,
            i_plus: derive_geometry(params).i_plus,
            hbar: params.hbar,
        }
    }

    pub fn tilt(&self) -> f64 {
        self.gamma * self.i_plus
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |key, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Validation {
                    key,
                    reason: format!("must be finite and > 0, got {v}"),
                })
            }
        };
        pos("G", self.g)?;
        pos("V_plus", self.v_plus)?;
        pos("hbar", self.hbar)?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Validation {
                key: "gamma",
                reason: format!("must be finite and >= 0, got {}", self.gamma),
            });
        }
        if !self.i_plus.is_finite() {
            return Err(Error::Validation {
                key: "I_plus",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }

    /// `-V cos(vartheta) + tilt vartheta`.
    pub fn potential(&self, vartheta: f64) -> f64 {
        -self.v_plus * vartheta.cos() + self.tilt() * vartheta
    }

    pub fn energy(&self, vartheta: f64, j: f64) -> f64 {
        0.5 * self.g * j * j + self.potential(vartheta)
    }

    /// Stable equilibrium phase, if the well exists.
    pub fn well_phase(&self) -> Option<f64> {
        let a = self.tilt() / self.v_plus;
        (a <= 1.0).then(|| -a.asin())
    }

    /// Saddle bounding the well from the low-potential side.
    pub fn saddle_phase(&self) -> Option<f64> {
        let a = self.tilt() / self.v_plus;
        (a <= 1.0).then(|| -PI + a.asin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparatrixResult {
    pub exists: bool,
    pub saddle_phase: Option<f64>,
    /// Far turning point of the separatrix loop.
    pub turning_phase: Option<f64>,
    pub saddle_energy: Option<f64>,
    pub area: f64,
    /// Difference between the two quadrature orders used.
    pub quadrature_residual: f64,
}

const QUAD_TOL: f64 = 1e-11;

/// Phase-space area of the separatrix loop, `S = 2 int sqrt(2(E_s - U)/G)`.
///
/// The substitution `vartheta = vt - (vt - vs) u^2` removes the square-root
/// endpoint singularity at the turning point; the orders 64, 128, ... are
/// doubled until two consecutive results agree.
pub fn separatrix_area(eff: &EffectiveParams) -> Result<SeparatrixResult> {
    eff.validate()?;
    let (Some(vs), Some(vw)) = (eff.saddle_phase(), eff.well_phase()) else {
        return Ok(SeparatrixResult {
            exists: false,
            saddle_phase: None,
            turning_phase: None,
            saddle_energy: None,
            area: 0.0,
            quadrature_residual: 0.0,
        });
    };
    let es = eff.potential(vs);
    // U rises monotonically from the well bottom to the far maximum at 2pi + vs
    let (mut lo, mut hi) = (vw, vs + 2.0 * PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eff.potential(mid) < es {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    let vt = 0.5 * (lo + hi);
    let width = vt - vs;
    let integrand = |u: f64| {
        let th = vt - width * u * u;
        let gap = (es - eff.potential(th)).max(0.0);
        2.0 * (2.0 * gap / eff.g).sqrt() * 2.0 * width * u
    };
    let rule = |deg: usize| GaussLegendre::new(NonZeroUsize::new(deg).expect("nonzero"));
    let mut prev = rule(32).integrate(0.0, 1.0, integrand);
    let mut residual = f64::INFINITY;
    let mut deg = 64;
    while deg <= 4096 {
        let next = rule(deg).integrate(0.0, 1.0, integrand);
        residual = (next - prev).abs();
        prev = next;
        if residual <= QUAD_TOL * next.abs().max(1e-300) || width == 0.0 {
            return Ok(SeparatrixResult {
                exists: true,
                saddle_phase: Some(vs),
                turning_phase: Some(vt),
                saddle_energy: Some(es),
                area: next,
                quadrature_residual: residual,
            });
        }
        deg *= 2;
    }
    Err(Error::Quadrature { residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlowMode {
    /// Isolated slow eigenvalue of the Liouvillian.
    pub eps1: C64,
    /// Next distinct decay rate after `eps1`.
    pub eps2: C64,
    /// `|Re eps2| / |Re eps1|`.
    pub gap_ratio: f64,
    /// `2 pi / |Re eps1|`.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowModeOptions {
    pub gap_threshold: f64,
    /// How many distinct decay rates are searched for the gap.
    pub search_levels: usize,
    /// Relative tolerance for grouping equal real parts.
    pub group_tol: f64,
}

impl Default for SlowModeOptions {
    fn default() -> Self {
        Self {
            gap_threshold: 3.0,
            search_levels: 10,
            group_tol: 1e-6,
        }
    }
}

/// Picks the slow mode from a Liouvillian spectrum: among the first
/// `search_levels` distinct nonzero decay rates, the one followed by the
/// largest jump in `|Re|`.
pub fn find_slow_mode(eigenvalues: &[C64], opts: &SlowModeOptions) -> Result<SlowMode> {
    let mut vals: Vec<C64> = eigenvalues.to_vec();
    vals.sort_by(|a, b| b.re.total_cmp(&a.re));
    let scale = vals.iter().map(|z| z.re.abs()).fold(0.0, f64::max).max(1e-300);
    // drop the stationary eigenvalue
    if vals.is_empty() {
        return Err(Error::NoSlowMode { best_ratio: 0.0, threshold: opts.gap_threshold });
    }
    vals.remove(0);
    let mut groups: Vec<C64> = Vec::new();
    for z in vals {
        match groups.last() {
            Some(g) if (g.re - z.re).abs() <= opts.group_tol * scale.max(g.re.abs()) => {}
            _ => groups.push(z),
        }
        if groups.len() > opts.search_levels + 1 {
            break;
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for k in 0..groups.len().saturating_sub(1).min(opts.search_levels) {
        let r1 = groups[k].re.abs();
        let r2 = groups[k + 1].re.abs();
        let ratio = if r1 > 0.0 { r2 / r1 } else { f64::INFINITY };
        if best.is_none_or(|(b, _)| ratio > b) {
            best = Some((ratio, k));
        }
    }
    let Some((ratio, k)) = best else {
        return Err(Error::NoSlowMode { best_ratio: 0.0, threshold: opts.gap_threshold });
    };
    if !(ratio >= opts.gap_threshold) || groups[k].re.abs() == 0.0 {
        return Err(Error::NoSlowMode { best_ratio: ratio, threshold: opts.gap_threshold });
    }
    Ok(SlowMode {
        eps1: groups[k],
        eps2: groups[k + 1],
        gap_ratio: ratio,
        tau: 2.0 * PI / groups[k].re.abs(),
    })
}

/// Default basis for a one-wave run: see [`MomentumBasis::for_params`].
pub fn lifetime_basis(params: &ModelParams, margin: f64) -> MomentumBasis {
    MomentumBasis::for_params(params, margin)
}

/// Lifetime of the upper-cycle basin from the spectrum of the
/// time-independent rotating-frame Liouvillian (`V- = 0`).
pub fn lifetime_from_liouvillian(
    eff: &EffectiveParams,
    omega: f64,
    basis: &MomentumBasis,
    opts: &SlowModeOptions,
) -> Result<SlowMode> {
    eff.validate()?;
    let params = ModelParams::new(eff.g, eff.v_plus, 0.0, omega, eff.gamma, eff.hbar)?;
    let l = build_liouvillian_in(Frame::Rotating, 0.0, basis, &params)?;
    let ev = spectrum(&l, SpectrumKind::Liouvillian)?;
    find_slow_mode(&ev, opts)
}

/// One point of an hbar sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LifetimeSample {
    pub hbar: f64,
    pub gamma: f64,
    pub n_min: i64,
    pub n_max: i64,
    /// Slowest nonzero decay level (the isolated one when `isolated`).
    pub eps1: C64,
    pub gap_ratio: f64,
    pub tau: f64,
    /// Gap ratio reached the threshold.
    pub isolated: bool,
}

/// Like [`lifetime_from_liouvillian`], but below the gap threshold it
/// reports the slowest nonzero level with `isolated = false` instead of
/// failing, so sweeps into the large-hbar regime still produce a number.
pub fn lifetime_sample(
    eff: &EffectiveParams,
    omega: f64,
    basis: &MomentumBasis,
    opts: &SlowModeOptions,
) -> Result<LifetimeSample> {
    eff.validate()?;
    let params = ModelParams::new(eff.g, eff.v_plus, 0.0, omega, eff.gamma, eff.hbar)?;
    let l = build_liouvillian_in(Frame::Rotating, 0.0, basis, &params)?;
    let ev = spectrum(&l, SpectrumKind::Liouvillian)?;
    let (mode, isolated) = match find_slow_mode(&ev, opts) {
        Ok(m) => (m, true),
        Err(Error::NoSlowMode { .. }) => {
            let lenient = SlowModeOptions { gap_threshold: 0.0, search_levels: 1, ..*opts };
            (find_slow_mode(&ev, &lenient)?, false)
        }
        Err(e) => return Err(e),
    };
    Ok(LifetimeSample {
        hbar: eff.hbar,
        gamma: eff.gamma,
        n_min: basis.n_min(),
        n_max: basis.n_max(),
        eps1: mode.eps1,
        gap_ratio: mode.gap_ratio,
        tau: mode.tau,
        isolated,
    })
}

/// Lifetime samples over `hbars` for a one-wave model (`V-` is ignored),
/// each in its default basis.
pub fn lifetime_scan(
    params: &ModelParams,
    hbars: &[f64],
    margin: f64,
    opts: &SlowModeOptions,
) -> Result<Vec<LifetimeSample>> {
    use rayon::prelude::*;
    hbars
        .par_iter()
        .map(|&h| {
            let p = params.with_v_minus(0.0).with_hbar(h);
            let basis = MomentumBasis::for_params(&p, margin);
            lifetime_sample(&EffectiveParams::from_model(&p), p.omega, &basis, opts)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifetimeFit {
    /// `(hbar, tau)` pairs.
    pub samples: Vec<(f64, f64)>,
    /// Slope `A` of `ln(gamma tau)` against `S/hbar`.
    pub slope_a: f64,
    /// `exp` of the intercept.
    pub prefactor: f64,
    /// Coefficient of determination.
    pub quality: f64,
}

/// Least-squares fit of `ln(gamma tau) = ln(c) + A S / hbar`.
pub fn fit_lifetime_scaling(samples: &[(f64, f64)], area: f64, gamma: f64) -> Result<LifetimeFit> {
    if samples.len() < 4 {
        return Err(Error::DegenerateFit(format!(
            "need at least 4 samples, got {}",
            samples.len()
        )));
    }
    if !(area > 0.0 && gamma > 0.0) {
        return Err(Error::DegenerateFit(format!(
            "area and gamma must be positive (S={area}, gamma={gamma})"
        )));
    }
    if let Some(&(h, t)) = samples.iter().find(|(h, t)| !(*h > 0.0 && *t > 0.0 && t.is_finite())) {
        return Err(Error::DegenerateFit(format!(
            "hbar and tau must be positive (hbar={h}, tau={t})"
        )));
    }
    let inv: Vec<f64> = samples.iter().map(|(h, _)| 1.0 / h).collect();
    let (lo, hi) = inv.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &x| (a.min(x), b.max(x)));
    if hi < 2.0 * lo {
        return Err(Error::DegenerateFit(format!(
            "1/hbar spans only {lo:.4}..{hi:.4}, need a factor of 2"
        )));
    }
    let x: Vec<f64> = inv.iter().map(|v| area * v).collect();
    let y: Vec<f64> = samples.iter().map(|(_, t)| (gamma * t).ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let quality = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(LifetimeFit {
        samples: samples.to_vec(),
        slope_a: slope,
        prefactor: intercept.exp(),
        quality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eff(gamma: f64) -> EffectiveParams {
        EffectiveParams { g: 1.0, v_plus: 1.0, gamma, i_plus: 4.0, hbar: 0.25 }
    }

    /// Counts grid cells with `H < E_s` connected to the well bottom.
    fn flood_fill_area(e: &EffectiveParams, cells: usize) -> f64 {
        let vs = e.saddle_phase().unwrap();
        let es = e.potential(vs);
        let jmax = 1.05 * (2.0 * (es - e.potential(e.well_phase().unwrap())) / e.g).sqrt();
        let (t0, t1) = (vs, vs + 2.0 * PI);
        let (dt, dj) = ((t1 - t0) / cells as f64, 2.0 * jmax / cells as f64);
        let inside = |i: usize, k: usize| {
            let th = t0 + (i as f64 + 0.5) * dt;
            let j = -jmax + (k as f64 + 0.5) * dj;
            e.energy(th, j) < es
        };
        let mut seen = vec![false; cells * cells];
        let start_i = ((e.well_phase().unwrap() - t0) / dt) as usize;
        let mut stack = vec![(start_i, cells / 2)];
        let mut count = 0usize;
        while let Some((i, k)) = stack.pop() {
            if seen[i * cells + k] || !inside(i, k) {
                continue;
            }
            seen[i * cells + k] = true;
            count += 1;
            if i > 0 { stack.push((i - 1, k)); }
            if i + 1 < cells { stack.push((i + 1, k)); }
            if k > 0 { stack.push((i, k - 1)); }
            if k + 1 < cells { stack.push((i, k + 1)); }
        }
        count as f64 * dt * dj
    }

    #[test]
    fn undamped_area_is_pendulum_eye() {
        let r = separatrix_area(&eff(0.0)).unwrap();
        assert!(r.exists);
        assert_relative_eq!(r.area, 16.0, epsilon = 1e-9);
        let r = separatrix_area(&EffectiveParams { g: 2.0, v_plus: 0.5, ..eff(0.0) }).unwrap();
        assert_relative_eq!(r.area, 16.0 * 0.5_f64.sqrt() / 2.0_f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn quadrature_matches_flood_fill() {
        for g in [0.0, 0.05, 0.1] {
            let e = eff(g);
            let s = separatrix_area(&e).unwrap().area;
            let grid = flood_fill_area(&e, 1500);
            assert!((s - grid).abs() / s < 0.01, "gamma {g}: {s} vs {grid}");
        }
    }

    #[test]
    fn area_shrinks_with_damping_and_vanishes_past_critical() {
        let s: Vec<f64> = [0.01, 0.1, 0.2, 0.249]
            .iter()
            .map(|g| separatrix_area(&eff(*g)).unwrap().area)
            .collect();
        assert!(s.windows(2).all(|w| w[0] > w[1]), "{s:?}");
        let crit = separatrix_area(&eff(0.25)).unwrap();
        assert!(crit.exists && crit.area < 1e-6);
        let gone = separatrix_area(&eff(0.2500001)).unwrap();
        assert!(!gone.exists && gone.area == 0.0);
    }

    #[test]
    fn saddle_energy_is_the_barrier_top() {
        let e = eff(0.1);
        let r = separatrix_area(&e).unwrap();
        let vs = r.saddle_phase.unwrap();
        // stationary point of U and a local maximum
        assert!((e.v_plus * vs.sin() + e.tilt()).abs() < 1e-12);
        assert!(e.potential(vs - 1e-3) < r.saddle_energy.unwrap());
        assert!(e.potential(vs + 1e-3) < r.saddle_energy.unwrap());
        assert_relative_eq!(e.potential(r.turning_phase.unwrap()), r.saddle_energy.unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn fit_recovers_exact_exponent() {
        let (s, g, a): (f64, f64, f64) = (3.7, 0.05, 1.3);
        let samples: Vec<(f64, f64)> = [0.5, 0.4, 1.0 / 3.0, 0.25, 0.2]
            .iter()
            .map(|h| (*h, (a * s / h).exp() / g * 2.5))
            .collect();
        let fit = fit_lifetime_scaling(&samples, s, g).unwrap();
        assert!((fit.slope_a - a).abs() < 1e-10);
        assert_relative_eq!(fit.prefactor, 2.5, epsilon = 1e-9);
        assert_relative_eq!(fit.quality, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        let two = [(0.5, 10.0), (0.25, 100.0)];
        assert!(matches!(fit_lifetime_scaling(&two, 1.0, 0.05), Err(Error::DegenerateFit(_))));
        let narrow = [(0.5, 1.0), (0.45, 2.0), (0.4, 3.0), (0.35, 4.0)];
        assert!(fit_lifetime_scaling(&narrow, 1.0, 0.05).is_err());
        let bad = [(0.5, 1.0), (0.4, -2.0), (0.3, 3.0), (0.2, 4.0)];
        assert!(fit_lifetime_scaling(&bad, 1.0, 0.05).is_err());
    }

    #[test]
    fn slow_mode_picks_largest_gap() {
        let c = |r: f64, i: f64| C64::new(r, i);
        let ev = [c(0.0, 0.0), c(-1e-4, 0.0), c(-0.05, 0.3), c(-0.05, -0.3), c(-0.051, 0.0), c(-0.1, 0.0)];
        let m = find_slow_mode(&ev, &SlowModeOptions::default()).unwrap();
        assert_eq!(m.eps1, c(-1e-4, 0.0));
        assert_relative_eq!(m.gap_ratio, 500.0, epsilon = 1e-9);
        assert_relative_eq!(m.tau, 2.0 * PI / 1e-4, epsilon = 1e-6);
        let flat = [c(0.0, 0.0), c(-0.05, 0.0), c(-0.06, 0.0), c(-0.07, 0.0)];
        assert!(matches!(find_slow_mode(&flat, &SlowModeOptions::default()), Err(Error::NoSlowMode { .. })));
    }

    #[test]
    fn hamiltonian_limit_has_no_decay() {
        let e = EffectiveParams { gamma: 0.0, hbar: 0.5, ..eff(0.0) };
        let p = ModelParams::new(1.0, 1.0, 0.0, 4.0, 0.0, 0.5).unwrap();
        let l = build_liouvillian_in(Frame::Rotating, 0.0, &lifetime_basis(&p, 1.0), &p).unwrap();
        let ev = spectrum(&l, SpectrumKind::Liouvillian).unwrap();
        assert!(ev.iter().all(|z| z.re.abs() < 1e-9));
        assert!(e.validate().is_ok());
    }
}
