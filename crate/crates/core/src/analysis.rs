//! Observables built from spectra and trajectories: metastable cycle states,
//! decay curves, and population comparisons against the classical ensemble.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::classical::Histogram;
use crate::error::{Error, Result};
use crate::model::{derive_geometry, ModelParams};
use crate::quantum::{DensityMatrix, Frame, MasterEquation, MomentumBasis, Propagator};
use crate::superop::{SpectralDecomposition, SpectrumKind, SuperOperator};

/// Diagonal of a density matrix at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSnapshot {
    pub time: f64,
    pub hbar: f64,
    pub levels: Vec<i64>,
    pub populations: Vec<f64>,
}

impl DistributionSnapshot {
    pub fn from_density(rho: &DensityMatrix, time: f64, hbar: f64) -> Self {
        Self {
            time,
            hbar,
            levels: rho.basis().levels().collect(),
            populations: rho.populations(),
        }
    }

    /// `I = hbar n` per level.
    pub fn actions(&self) -> Vec<f64> {
        self.levels.iter().map(|n| self.hbar * *n as f64).collect()
    }

    pub fn total(&self) -> f64 {
        self.populations.iter().sum()
    }

    /// Checks unit mass and (near) positivity.
    pub fn check(&self) -> Result<()> {
        let total = self.total();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Precondition(format!("populations sum to {total}")));
        }
        if let Some(p) = self.populations.iter().find(|p| **p < -1e-10) {
            return Err(Error::Precondition(format!("negative population {p}")));
        }
        Ok(())
    }

    /// Sums populations into action bins; levels outside go to `outside`.
    pub fn binned(&self, edges: &[f64]) -> Result<Histogram> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::BadBins);
        }
        let mut weights = vec![0.0; edges.len() - 1];
        let mut outside = 0.0;
        for (x, p) in self.actions().into_iter().zip(&self.populations) {
            let k = edges.partition_point(|e| *e <= x);
            if k == 0 || k == edges.len() {
                // right edge is inclusive
                if x == edges[edges.len() - 1] {
                    weights[edges.len() - 2] += p;
                } else {
                    outside += p;
                }
            } else {
                weights[k - 1] += p;
            }
        }
        Ok(Histogram {
            edges: edges.to_vec(),
            weights,
            outside,
        })
    }

    /// `sum_{n>0} p_n - sum_{n<0} p_n`.
    pub fn asymmetry(&self) -> f64 {
        asymmetry(&self.actions(), &self.populations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CycleTarget {
    UpperCycle,
    LowerCycle,
}

/// `rho0 +- rho1 + rho2` with `rho1` the inversion-odd and `rho2` the
/// inversion-even slow mode.
#[derive(Debug, Clone)]
pub struct MetastableCombination {
    pub target: CycleTarget,
    /// Coefficients on `(rho0, rho1, rho2)`.
    pub coefficients: [f64; 3],
    pub state: DensityMatrix,
    /// Diagonal mass fraction on the target half-lattice.
    pub concentration: f64,
    /// `(lambda1, lambda2)` matching `modes[1]`, `modes[2]`.
    pub eigenvalues: [C64; 2],
    /// `rho0`, scaled odd `rho1`, scaled even `rho2`.
    pub modes: [DensityMatrix; 3],
}

impl MetastableCombination {
    /// `rho0 + c1 lambda1^m rho1 + c2 lambda2^m rho2`.
    pub fn predict(&self, m: u32) -> DensityMatrix {
        let mut out = self.modes[0].clone();
        let c = [
            self.coefficients[1] * self.eigenvalues[0].powu(m),
            self.coefficients[2] * self.eigenvalues[1].powu(m),
        ];
        for (k, ck) in c.iter().enumerate() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(self.modes[k + 1].as_slice()) {
                *o += ck * v;
            }
        }
        out
    }
}

pub const CONCENTRATION_THRESHOLD: f64 = 0.7;

fn mirror(rho: &DensityMatrix) -> Result<DensityMatrix> {
    rho.inverted()
}

fn mass_fraction(rho: &DensityMatrix, upper: bool) -> f64 {
    let pops = rho.populations();
    let total: f64 = pops.iter().sum();
    let side: f64 = rho
        .basis()
        .levels()
        .zip(&pops)
        .filter(|(n, _)| if upper { *n > 0 } else { *n < 0 })
        .map(|(_, p)| p)
        .sum();
    side / total
}

/// Slow-mode combination localized on one limit cycle.
///
/// The eigenmatrices carry an arbitrary scale, so the combination is fixed by
/// projecting the ring state `|n+><n+|`, `n+ = round(I+/hbar)`, onto the
/// slow modes with the left eigenvectors and splitting the result by
/// inversion parity. The scaled modes then enter with unit coefficients:
/// `|n+><n+| -> rho0 + rho1 + rho2` and its mirror image
/// `-> rho0 - rho1 + rho2`.
pub fn build_cycle_state(
    dec: &SpectralDecomposition,
    sign: i32,
    params: &ModelParams,
) -> Result<MetastableCombination> {
    build_cycle_state_with(dec, sign, params, CONCENTRATION_THRESHOLD)
}

pub fn build_cycle_state_with(
    dec: &SpectralDecomposition,
    sign: i32,
    params: &ModelParams,
    threshold: f64,
) -> Result<MetastableCombination> {
    if sign != 1 && sign != -1 {
        return Err(Error::Precondition(format!("sign must be +1 or -1, got {sign}")));
    }
    if dec.modes.len() < 3 || dec.left_modes.len() < 3 {
        return Err(Error::Precondition(
            "need right and left eigenmatrices for the three leading modes".into(),
        ));
    }
    let basis = dec.basis;
    if !basis.is_symmetric() {
        return Err(Error::Precondition("cycle states need a symmetric basis".into()));
    }
    let n_plus = (derive_geometry(params).i_plus / params.hbar).round() as i64;
    let ring = DensityMatrix::pure_level(basis, n_plus)?;

    // slow part of the ring state inside span{rho1, rho2}
    let mut slow = DensityMatrix::zeros(basis);
    for j in 1..3 {
        let c = dec.coefficient(j, &ring).expect("left modes present");
        for (o, v) in slow.as_mut_slice().iter_mut().zip(dec.modes[j].as_slice()) {
            *o += c * v;
        }
    }
    // split by inversion parity; this is also well defined when
    // lambda1 = lambda2 and the solver returns mixed eigenmatrices
    let mirrored = mirror(&slow)?;
    let part = |s: f64| {
        let mut m = slow.clone();
        for (o, v) in m.as_mut_slice().iter_mut().zip(mirrored.as_slice()) {
            *o = 0.5 * (*o + s * v);
        }
        m
    };
    let (r_odd, r_even) = (part(-1.0), part(1.0));
    let odd_weight = |j: usize| {
        let m = &dec.modes[j];
        let mm = mirror(m).expect("symmetric basis");
        m.as_slice()
            .iter()
            .zip(mm.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
    };
    let (odd, even) = if odd_weight(1) >= odd_weight(2) { (1, 2) } else { (2, 1) };

    let rho0 = dec.modes[0].clone();
    let s = sign as f64;
    let mut state = rho0.clone();
    for ((o, a), b) in state
        .as_mut_slice()
        .iter_mut()
        .zip(r_odd.as_slice())
        .zip(r_even.as_slice())
    {
        *o += s * a + b;
    }
    let tr = state.trace();
    for z in state.as_mut_slice() {
        *z /= tr;
    }
    let upper = sign > 0;
    let concentration = mass_fraction(&state, upper);
    if !(concentration >= threshold) {
        return Err(Error::Concentration {
            achieved: concentration,
            required: threshold,
        });
    }
    Ok(MetastableCombination {
        target: if upper { CycleTarget::UpperCycle } else { CycleTarget::LowerCycle },
        coefficients: [1.0, s, 1.0],
        state,
        concentration,
        eigenvalues: [dec.eigenvalues[odd], dec.eigenvalues[even]],
        modes: [rho0, r_odd, r_even],
    })
}

/// How to advance a density matrix by one period.
pub enum Dynamics<'a> {
    /// Apply a Floquet super-operator.
    Floquet(&'a SuperOperator),
    /// Integrate the master equation; `Frame::Rotating` for one-wave runs.
    Master {
        params: &'a ModelParams,
        frame: Frame,
        steps_per_period: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// `(t, |c1(t)|)` at stroboscopic times.
    pub series: Vec<(f64, f64)>,
    /// `2 pi / rate` from the eigenvalue.
    pub tau_spectral: f64,
    /// `2 pi / rate` from a log-linear fit of the series.
    pub tau_fit: Option<f64>,
    pub fit_quality: f64,
    /// Fit quality below 0.95 or no signal.
    pub flagged: bool,
}

pub const DECAY_FIT_QUALITY: f64 = 0.95;

/// Decay rate per unit time of mode `j`.
pub fn spectral_rate(dec: &SpectralDecomposition, j: usize, period: f64) -> f64 {
    let z = dec.eigenvalues[j];
    match dec.kind {
        SpectrumKind::Floquet => -z.norm().ln() / period,
        SpectrumKind::Liouvillian => -z.re,
    }
}

/// Projection of the evolution of `rho0` onto slow mode `mode`.
pub fn decay_curve(
    dec: &SpectralDecomposition,
    mode: usize,
    dynamics: &Dynamics,
    rho0: &DensityMatrix,
    period: f64,
    horizon_periods: usize,
) -> Result<DecayReport> {
    if dec.left_modes.len() <= mode {
        return Err(Error::Precondition(format!("left eigenmatrix {mode} not available")));
    }
    if rho0.basis() != &dec.basis {
        return Err(Error::SizeMismatch {
            expected: dec.basis.dim(),
            actual: rho0.dim(),
        });
    }
    let mut series = Vec::with_capacity(horizon_periods + 1);
    let mut rho = rho0.clone();
    let overlap = |r: &DensityMatrix| dec.coefficient(mode, r).expect("checked").norm();
    series.push((0.0, overlap(&rho)));
    let mut prop = match dynamics {
        Dynamics::Master { params, frame, steps_per_period } => {
            let eq = MasterEquation::new(params, &dec.basis, *frame)?;
            Some(Propagator::new(eq, *steps_per_period))
        }
        Dynamics::Floquet(_) => None,
    };
    for m in 1..=horizon_periods {
        rho = match (dynamics, prop.as_mut()) {
            (Dynamics::Floquet(u), _) => u.apply_to(&rho),
            (_, Some(p)) => {
                let mut v = rho.into_vec();
                p.propagate_periods(&mut v, 1);
                DensityMatrix::from_column_major(dec.basis, v)?
            }
            _ => unreachable!(),
        };
        series.push((m as f64 * period, overlap(&rho)));
    }
    let tau_spectral = 2.0 * PI / spectral_rate(dec, mode, period);
    let (tau_fit, fit_quality) = match exponential_fit(&series) {
        Some((rate, q)) if rate > 0.0 => (Some(2.0 * PI / rate), q),
        Some((_, q)) => (None, q),
        None => (None, 0.0),
    };
    Ok(DecayReport {
        series,
        tau_spectral,
        tau_fit,
        fit_quality,
        flagged: tau_fit.is_none() || fit_quality < DECAY_FIT_QUALITY,
    })
}

/// Slope of `-ln y` against `t` and its coefficient of determination.
/// `None` when the signal vanishes.
pub fn exponential_fit(series: &[(f64, f64)]) -> Option<(f64, f64)> {
    let peak = series.iter().map(|p| p.1).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, y)| *y > 1e-12 * peak && *y > 1e-300)
        .map(|(t, y)| (*t, y.ln()))
        .collect();
    if peak == 0.0 || pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let q = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((-sxy / sxx, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub position: f64,
    pub height: f64,
    /// Full width at half maximum, from linear interpolation.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakOptions {
    /// Peak must exceed this multiple of the median bin.
    pub background_factor: f64,
    /// ... and this fraction of the tallest bin.
    pub min_relative_height: f64,
    /// A peak is the maximum of a window of this many bins on each side.
    pub window: usize,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            background_factor: 3.0,
            min_relative_height: 0.05,
            window: 2,
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Local maxima standing out of the background.
pub fn detect_peaks(x: &[f64], w: &[f64], opts: &PeakOptions) -> Vec<Peak> {
    let n = w.len().min(x.len());
    let bg = median(&w[..n]);
    let top = w[..n].iter().copied().fold(0.0, f64::max);
    let floor = (opts.background_factor * bg).max(opts.min_relative_height * top);
    let mut peaks = Vec::new();
    for k in 0..n {
        let lo = k.saturating_sub(opts.window);
        let hi = (k + opts.window + 1).min(n);
        let h = w[k];
        if !(h > floor) {
            continue;
        }
        // strictly above the left window, at least equal to the right one
        let left_ok = w[lo..k].iter().all(|v| *v < h);
        let right_ok = w[k + 1..hi].iter().all(|v| *v <= h);
        if !(left_ok && right_ok) {
            continue;
        }
        let half = 0.5 * h;
        let cross = |range: &mut dyn Iterator<Item = usize>, toward: isize| -> f64 {
            for j in range {
                if w[j] < half {
                    let inner = (j as isize - toward) as usize;
                    let f = (w[inner] - half) / (w[inner] - w[j]);
                    return x[inner] + f * (x[j] - x[inner]);
                }
            }
            if toward > 0 { x[0] } else { x[n - 1] }
        };
        let left = cross(&mut (0..k).rev(), -1);
        let right = cross(&mut (k + 1..n), 1);
        peaks.push(Peak {
            position: x[k],
            height: h,
            width: right - left,
        });
    }
    peaks
}

/// Masses in `x < -edge`, `|x| <= edge`, `x > edge`.
pub fn region_masses(x: &[f64], w: &[f64], edge: f64) -> [f64; 3] {
    let mut m = [0.0; 3];
    for (xi, wi) in x.iter().zip(w) {
        let k = if *xi < -edge {
            0
        } else if *xi > edge {
            2
        } else {
            1
        };
        m[k] += wi;
    }
    m
}

/// Each side is summed in order of increasing `|x|`, so mirror-symmetric
/// input gives exactly zero.
pub fn asymmetry(x: &[f64], w: &[f64]) -> f64 {
    let side = |positive: bool| {
        let mut v: Vec<(f64, f64)> = x
            .iter()
            .zip(w)
            .filter(|(xi, _)| if positive { **xi > 0.0 } else { **xi < 0.0 })
            .map(|(xi, wi)| (xi.abs(), *wi))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v.iter().map(|p| p.1).sum::<f64>()
    };
    side(true) - side(false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub peaks: Vec<Peak>,
    /// Lower cycle, middle, upper cycle.
    pub region_masses: [f64; 3],
    /// Mass outside every detected peak's half-maximum window.
    pub background_mass: f64,
    pub asymmetry: f64,
}

pub fn summarize(x: &[f64], w: &[f64], edge: f64, opts: &PeakOptions) -> DistributionSummary {
    let peaks = detect_peaks(x, w, opts);
    let in_peak = |xi: f64| peaks.iter().any(|p| (xi - p.position).abs() <= 0.5 * p.width);
    let total: f64 = w.iter().sum();
    let background_mass = x
        .iter()
        .zip(w)
        .filter(|(xi, _)| !in_peak(**xi))
        .map(|(_, wi)| wi)
        .sum::<f64>()
        / if total != 0.0 { total } else { 1.0 };
    DistributionSummary {
        region_masses: region_masses(x, w, edge),
        asymmetry: asymmetry(x, w),
        background_mass,
        peaks,
    }
}

/// Detected peaks within `deltaI/4` of `I-` and `I+`, the tallest of each.
pub fn cycle_peaks(peaks: &[Peak], params: &ModelParams) -> (Option<Peak>, Option<Peak>) {
    let g = derive_geometry(params);
    let window = 0.25 * g.delta_i();
    let near = |target: f64| {
        peaks
            .iter()
            .filter(|p| (p.position - target).abs() <= window)
            .copied()
            .max_by(|a, b| a.height.total_cmp(&b.height))
    };
    (near(g.i_minus), near(g.i_plus))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// Quantum populations at level resolution.
    pub quantum: DistributionSummary,
    /// Quantum populations on the classical bins.
    pub quantum_binned: Vec<f64>,
    pub classical: DistributionSummary,
    pub region_edge: f64,
    /// Largest bin-wise difference of the normalized distributions.
    pub max_bin_difference: f64,
}

/// Cycle regions start at `min(deltaI/2, I+/2)`: the resonance half-width
/// when the cycles sit outside it, otherwise halfway to the cycle.
pub fn default_region_edge(params: &ModelParams) -> f64 {
    let g = derive_geometry(params);
    (0.5 * g.delta_i()).min(0.5 * g.i_plus)
}

pub fn compare_distributions(
    q: &DistributionSnapshot,
    c: &Histogram,
    region_edge: f64,
    opts: &PeakOptions,
) -> Result<ComparisonReport> {
    let quantum = summarize(&q.actions(), &q.populations, region_edge, opts);
    let qb = q.binned(&c.edges)?;
    let centers = c.centers();
    let ctotal = c.total();
    let cw: Vec<f64> = c.weights.iter().map(|w| w / ctotal).collect();
    let classical = summarize(&centers, &cw, region_edge, opts);
    let qtotal: f64 = qb.weights.iter().sum::<f64>() + qb.outside;
    let max_bin_difference = qb
        .weights
        .iter()
        .zip(&cw)
        .map(|(a, b)| (a / qtotal - b).abs())
        .fold(0.0, f64::max);
    Ok(ComparisonReport {
        quantum,
        quantum_binned: qb.weights,
        classical,
        region_edge,
        max_bin_difference,
    })
}

/// `(1 - |lambda1|_a) / (1 - |lambda1|_b)`.
pub fn relaxation_rate_comparison(a: &SpectralDecomposition, b: &SpectralDecomposition) -> Result<f64> {
    let (ga, gb) = (a.gap(), b.gap());
    if !(gb > 0.0) {
        return Err(Error::Precondition(format!("reference gap must be positive, got {gb}")));
    }
    Ok(ga / gb)
}

/// Populations of a symmetric basis folded as `n -> -n`.
pub fn mirrored_populations(snapshot: &DistributionSnapshot) -> Vec<f64> {
    snapshot.populations.iter().rev().copied().collect()
}

/// Basis check shared by callers that compare two states.
pub fn same_basis(a: &MomentumBasis, b: &MomentumBasis) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::SizeMismatch {
            expected: a.dim(),
            actual: b.dim(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::uniform_edges;
    use approx::assert_relative_eq;

    fn gaussian(x: &[f64], mu: f64, s: f64, a: f64) -> Vec<f64> {
        x.iter().map(|v| a * (-(v - mu).powi(2) / (2.0 * s * s)).exp()).collect()
    }

    #[test]
    fn symmetric_input_has_zero_asymmetry() {
        let x: Vec<f64> = (-10..=10).map(|n| 0.25 * n as f64).collect();
        let w: Vec<f64> = x.iter().map(|v| (-v * v).exp() + (v.abs() - 2.0).powi(2)).collect();
        assert_eq!(asymmetry(&x, &w), 0.0);
    }

    #[test]
    fn finds_two_peaks_with_widths() {
        let x: Vec<f64> = (-200..=200).map(|n| 0.025 * n as f64).collect();
        let a = gaussian(&x, -2.0, 0.2, 1.0);
        let b = gaussian(&x, 2.0, 0.2, 0.5);
        let w: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let peaks = detect_peaks(&x, &w, &PeakOptions::default());
        assert_eq!(peaks.len(), 2);
        assert_relative_eq!(peaks[0].position, -2.0, epsilon = 1e-12);
        assert_relative_eq!(peaks[1].position, 2.0, epsilon = 1e-12);
        let fwhm = 2.0 * (2.0 * 2f64.ln()).sqrt() * 0.2;
        assert!((peaks[0].width - fwhm).abs() < 0.01);
        let m = region_masses(&x, &w, 1.0);
        assert_relative_eq!(m[0], 2.0 * m[2], epsilon = 1e-6);
    }

    #[test]
    fn flat_distribution_has_no_peaks() {
        let x: Vec<f64> = (0..50).map(|n| n as f64).collect();
        assert!(detect_peaks(&x, &vec![0.02; 50], &PeakOptions::default()).is_empty());
    }

    #[test]
    fn binning_conserves_mass() {
        let b = MomentumBasis::symmetric(8).unwrap();
        let pops: Vec<f64> = (0..17).map(|k| (k as f64 + 1.0) / 153.0).collect();
        let snap = DistributionSnapshot::from_density(&DensityMatrix::diagonal_state(b, &pops).unwrap(), 0.0, 0.25);
        snap.check().unwrap();
        let h = snap.binned(&uniform_edges(-1.0, 1.0, 4)).unwrap();
        assert_relative_eq!(h.weights.iter().sum::<f64>() + h.outside, 1.0, epsilon = 1e-14);
        assert!(h.outside > 0.0);
        assert!(snap.binned(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn exponential_fit_of_synthetic_two_mode_signal() {
        // slow mode plus a fast transient; fit from the tail
        let rate = 2e-3;
        let series: Vec<(f64, f64)> = (0..200).map(|m| {
            let t = m as f64 * 10.0;
            (t, (-rate * t).exp())
        }).collect();
        let (r, q) = exponential_fit(&series).unwrap();
        assert!((r - rate).abs() / rate < 1e-3);
        assert!(q > 0.999);
        assert!(exponential_fit(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]).is_none());
    }

    #[test]
    fn identical_gaps_have_unit_ratio() {
        let b = MomentumBasis::symmetric(1).unwrap();
        let dec = SpectralDecomposition {
            kind: SpectrumKind::Floquet,
            basis: b,
            eigenvalues: vec![C64::new(1.0, 0.0), C64::new(0.9, 0.0)],
            modes: vec![],
            left_modes: vec![],
            residuals: vec![],
        };
        assert_relative_eq!(relaxation_rate_comparison(&dec, &dec).unwrap(), 1.0);
        assert!(dec.gap() >= 0.0);
    }
}
