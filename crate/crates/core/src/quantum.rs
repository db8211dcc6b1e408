//! Truncated momentum-basis master equation.
//!
//! Levels `|n>` with `I|n> = hbar n`. The Hamiltonian is tridiagonal with
//! diagonal `G hbar^2 n^2 / 2` and coupling `<n+1|H|n> = -(V+ e^{-i omega t} + V- e^{i omega t}) / 2`.
//!
//! Dissipation uses two half-lattice lowering operators,
//! `a+|n> = sqrt(hbar n)|n-1>` for `n >= 1` and `a-|n> = sqrt(hbar |n|)|n+1>`
//! for `n <= -1`, each entering as
//! `-(gamma / 2 hbar)(a'a rho - 2 a rho a' + rho a'a)`. With `a'a = |I|` on each
//! half-lattice this gives `d<I>/dt = -gamma <I>` for the free rotor and makes
//! `|0>` the only dark state.

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{derive_geometry, ModelParams};

pub const DEFAULT_STEPS_PER_PERIOD: usize = 512;
pub const BOUNDARY_POPULATION_LIMIT: f64 = 1e-6;

/// Contiguous block of momentum levels `n_min..=n_max` (containing 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MomentumBasis {
    n_min: i64,
    n_max: i64,
}

impl MomentumBasis {
    pub fn symmetric(n_max: i64) -> Result<Self> {
        Self::range(-n_max, n_max)
    }

    pub fn range(n_min: i64, n_max: i64) -> Result<Self> {
        if n_min > 0 || n_max < 0 || n_min == n_max {
            return Err(Error::Validation {
                key: "n_max",
                reason: format!("level range [{n_min}, {n_max}] must contain 0 and at least two levels"),
            });
        }
        Ok(Self { n_min, n_max })
    }

    /// Default truncation: the upper cutoff sits `margin` action units above
    /// the outer edge of the upper resonance, `ceil((omega/G + deltaI+/2 + margin)/hbar)`,
    /// and likewise below. On a side with no resonance (`V = 0`) the cutoff is
    /// `ceil((deltaI/2 + margin)/hbar)` around `I = 0`.
    pub fn for_params(params: &ModelParams, margin: f64) -> Self {
        let geo = derive_geometry(params);
        let half_width = 0.5 * geo.delta_i();
        let side = |v: f64, delta: f64| {
            let reach = if v > 0.0 {
                geo.i_plus + 0.5 * delta + margin
            } else {
                half_width + margin
            };
            (reach / params.hbar).ceil().max(1.0) as i64
        };
        Self {
            n_min: -side(params.v_minus, geo.delta_i_minus),
            n_max: side(params.v_plus, geo.delta_i_plus),
        }
    }

    pub fn n_min(&self) -> i64 {
        self.n_min
    }

    pub fn n_max(&self) -> i64 {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    pub fn level(&self, index: usize) -> i64 {
        self.n_min + index as i64
    }

    pub fn index(&self, level: i64) -> Option<usize> {
        (self.n_min..=self.n_max)
            .contains(&level)
            .then(|| (level - self.n_min) as usize)
    }

    pub fn levels(&self) -> impl Iterator<Item = i64> {
        self.n_min..=self.n_max
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_min == -self.n_max
    }
}

/// `N x N` density matrix, column-major (`data[i + j N] = rho[i][j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    basis: MomentumBasis,
    data: Vec<C64>,
}

impl DensityMatrix {
    pub fn zeros(basis: MomentumBasis) -> Self {
        let n = basis.dim();
        Self {
            basis,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_column_major(basis: MomentumBasis, data: Vec<C64>) -> Result<Self> {
        let n = basis.dim();
        if data.len() != n * n {
            return Err(Error::SizeMismatch {
                expected: n * n,
                actual: data.len(),
            });
        }
        Ok(Self { basis, data })
    }

    /// `|n><n|`.
    pub fn pure_level(basis: MomentumBasis, level: i64) -> Result<Self> {
        let i = basis.index(level).ok_or_else(|| Error::Validation {
            key: "n0",
            reason: format!("level {level} outside [{}, {}]", basis.n_min, basis.n_max),
        })?;
        let mut rho = Self::zeros(basis);
        rho.set(i, i, C64::new(1.0, 0.0));
        Ok(rho)
    }

    /// Diagonal state with the given populations (indexed by basis index).
    pub fn diagonal_state(basis: MomentumBasis, populations: &[f64]) -> Result<Self> {
        if populations.len() != basis.dim() {
            return Err(Error::SizeMismatch {
                expected: basis.dim(),
                actual: populations.len(),
            });
        }
        let mut rho = Self::zeros(basis);
        for (i, p) in populations.iter().enumerate() {
            rho.set(i, i, C64::new(*p, 0.0));
        }
        Ok(rho)
    }

    /// Random full-rank state `A A' / tr(A A')` with Gaussian `A`.
    pub fn random<R: Rng>(basis: MomentumBasis, rng: &mut R) -> Self {
        let n = basis.dim();
        let a: Vec<C64> = (0..n * n).map(|_| gaussian_c64(rng)).collect();
        let mut rho = Self::zeros(basis);
        for j in 0..n {
            for i in 0..=j {
                let mut s = C64::new(0.0, 0.0);
                for k in 0..n {
                    s += a[i + k * n] * a[j + k * n].conj();
                }
                rho.data[i + j * n] = s;
                rho.data[j + i * n] = s.conj();
            }
        }
        let tr = rho.trace().re;
        rho.scale(1.0 / tr);
        rho
    }

    pub fn basis(&self) -> &MomentumBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i + j * self.dim()]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        let n = self.dim();
        self.data[i + j * n] = value;
    }

    /// Element `<n|rho|m>` by level.
    pub fn element(&self, n: i64, m: i64) -> Option<C64> {
        Some(self.get(self.basis.index(n)?, self.basis.index(m)?))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    /// Real parts of the diagonal, indexed by basis index.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i).re).collect()
    }

    pub fn dagger(&self) -> Self {
        let n = self.dim();
        let mut out = Self::zeros(self.basis);
        for j in 0..n {
            for i in 0..n {
                out.data[j + i * n] = self.data[i + j * n].conj();
            }
        }
        out
    }

    /// `max |rho - rho'|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for j in 0..n {
            for i in 0..=j {
                let d = (self.data[i + j * n] - self.data[j + i * n].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// `rho <- (rho + rho') / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.dim();
        for j in 0..n {
            let d = self.data[j + j * n];
            self.data[j + j * n] = C64::new(d.re, 0.0);
            for i in 0..j {
                let a = self.data[i + j * n];
                let b = self.data[j + i * n];
                let s = 0.5 * (a + b.conj());
                self.data[i + j * n] = s;
                self.data[j + i * n] = s.conj();
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for z in &mut self.data {
            *z *= factor;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let n = self.dim();
        let herm = faer::Mat::<C64>::from_fn(n, n, |i, j| {
            0.5 * (self.data[i + j * n] + self.data[j + i * n].conj())
        });
        let ev = herm
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::Eigen {
                dim: n,
                message: format!("{e:?}"),
            })?;
        Ok(ev.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// Image under `n -> -n` (requires a symmetric basis).
    pub fn inverted(&self) -> Result<Self> {
        if !self.basis.is_symmetric() {
            return Err(Error::Precondition("inversion needs a symmetric basis".into()));
        }
        let n = self.dim();
        let mut out = Self::zeros(self.basis);
        for j in 0..n {
            for i in 0..n {
                out.data[(n - 1 - i) + (n - 1 - j) * n] = self.data[i + j * n];
            }
        }
        Ok(out)
    }

    /// Largest population among the outermost levels.
    pub fn boundary_population(&self) -> f64 {
        let n = self.dim();
        self.get(0, 0).re.abs().max(self.get(n - 1, n - 1).re.abs())
    }
}

fn gaussian_c64<R: Rng>(rng: &mut R) -> C64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let phi = std::f64::consts::TAU * u2;
    C64::new(r * phi.cos(), r * phi.sin())
}

/// Reference frame of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Frame {
    /// Time-periodic Hamiltonian as written.
    Lab,
    /// Co-moving with the single nonzero wave; the generator becomes
    /// time-independent. Requires `V- = 0` or `V+ = 0`.
    Rotating,
}

/// Tridiagonal Hermitian Hamiltonian at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianMatrix {
    pub diagonal: Vec<f64>,
    /// `<n+1|H|n>`, the same for every `n`.
    pub coupling: C64,
}

impl HamiltonianMatrix {
    pub fn to_dense(&self) -> Vec<C64> {
        let n = self.diagonal.len();
        let mut m = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            m[i + i * n] = C64::new(self.diagonal[i], 0.0);
            if i + 1 < n {
                m[(i + 1) + i * n] = self.coupling;
                m[i + (i + 1) * n] = self.coupling.conj();
            }
        }
        m
    }
}

pub fn build_hamiltonian(t: f64, basis: &MomentumBasis, params: &ModelParams) -> HamiltonianMatrix {
    let diagonal = basis
        .levels()
        .map(|n| {
            let i = params.hbar * n as f64;
            0.5 * params.g * i * i
        })
        .collect();
    let (s, c) = (params.omega * t).sin_cos();
    let coupling = -0.5
        * (params.v_plus * C64::new(c, -s) + params.v_minus * C64::new(c, s));
    HamiltonianMatrix { diagonal, coupling }
}

/// Master equation generator in a chosen frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterEquation {
    params: ModelParams,
    basis: MomentumBasis,
    frame: Frame,
    /// `sqrt(n + 1)` for `n >= 0` (jump feed from `n + 1`), else 0.
    feed_up: Vec<f64>,
    /// `sqrt(1 - n)` for `n <= 0` (jump feed from `n - 1`), else 0.
    feed_down: Vec<f64>,
}

impl MasterEquation {
    pub fn new(params: &ModelParams, basis: &MomentumBasis, frame: Frame) -> Result<Self> {
        params.validate()?;
        if frame == Frame::Rotating && params.v_plus != 0.0 && params.v_minus != 0.0 {
            return Err(Error::Precondition(
                "rotating frame needs V_plus = 0 or V_minus = 0".into(),
            ));
        }
        let n = basis.dim();
        let feed_up = (0..n)
            .map(|i| {
                let lv = basis.level(i);
                if lv >= 0 && i + 1 < n {
                    ((lv + 1) as f64).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let feed_down = (0..n)
            .map(|i| {
                let lv = basis.level(i);
                if lv <= 0 && i >= 1 {
                    ((1 - lv) as f64).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            params: *params,
            basis: *basis,
            frame,
            feed_up,
            feed_down,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn basis(&self) -> &MomentumBasis {
        &self.basis
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn hamiltonian(&self, t: f64) -> HamiltonianMatrix {
        match self.frame {
            Frame::Lab => build_hamiltonian(t, &self.basis, &self.params),
            Frame::Rotating => {
                let p = &self.params;
                // V+ wave: frame exp(i omega t n) shifts energies by -hbar omega n
                let (sign, v) = if p.v_minus == 0.0 {
                    (-1.0, p.v_plus)
                } else {
                    (1.0, p.v_minus)
                };
                let diagonal = self
                    .basis
                    .levels()
                    .map(|n| {
                        let i = p.hbar * n as f64;
                        0.5 * p.g * i * i + sign * p.hbar * p.omega * n as f64
                    })
                    .collect();
                HamiltonianMatrix {
                    diagonal,
                    coupling: C64::new(-0.5 * v, 0.0),
                }
            }
        }
    }

    /// Time-independent part of the generator, acting elementwise:
    /// `-i (E_n - E_m)/hbar - (gamma/2)(|n| + |m|)`, column-major.
    pub(crate) fn diagonal_generator(&self) -> Vec<C64> {
        let n = self.basis.dim();
        let energies = self.hamiltonian(0.0).diagonal;
        let p = &self.params;
        let mut d = Vec::with_capacity(n * n);
        for j in 0..n {
            let mj = self.basis.level(j).unsigned_abs() as f64;
            for i in 0..n {
                let ni = self.basis.level(i).unsigned_abs() as f64;
                d.push(C64::new(
                    -0.5 * p.gamma * (ni + mj),
                    -(energies[i] - energies[j]) / p.hbar,
                ));
            }
        }
        d
    }

    /// Off-diagonal (hopping and jump) part of the generator; `out` is overwritten.
    pub(crate) fn apply_coupling(&self, t: f64, rho: &[C64], out: &mut [C64]) {
        let n = self.basis.dim();
        let c = self.hamiltonian(t).coupling;
        let minus_i_over_hbar = C64::new(0.0, -1.0 / self.params.hbar);
        // N_ij = a rho_{i-1,j} + b rho_{i+1,j} - a rho_{i,j+1} - b rho_{i,j-1}
        let a = minus_i_over_hbar * c;
        let b = minus_i_over_hbar * c.conj();
        let gamma = self.params.gamma;
        for j in 0..n {
            let col = &rho[j * n..(j + 1) * n];
            let dst = &mut out[j * n..(j + 1) * n];
            dst[0] = b * col[1];
            for i in 1..n - 1 {
                dst[i] = a * col[i - 1] + b * col[i + 1];
            }
            dst[n - 1] = a * col[n - 2];
            if j + 1 < n {
                let next = &rho[(j + 1) * n..(j + 2) * n];
                for i in 0..n {
                    dst[i] -= a * next[i];
                }
            }
            if j >= 1 {
                let prev = &rho[(j - 1) * n..j * n];
                for i in 0..n {
                    dst[i] -= b * prev[i];
                }
            }
            if gamma > 0.0 {
                let fu = gamma * self.feed_up[j];
                if fu != 0.0 {
                    let next = &rho[(j + 1) * n..(j + 2) * n];
                    for i in 0..n - 1 {
                        dst[i] += (fu * self.feed_up[i]) * next[i + 1];
                    }
                }
                let fd = gamma * self.feed_down[j];
                if fd != 0.0 {
                    let prev = &rho[(j - 1) * n..j * n];
                    for i in 1..n {
                        dst[i] += (fd * self.feed_down[i]) * prev[i - 1];
                    }
                }
            }
        }
    }

    /// Full right-hand side `-(i/hbar)[H(t), rho] + G+(rho) + G-(rho)`.
    pub fn rhs(&self, rho: &DensityMatrix, t: f64) -> DensityMatrix {
        let mut out = DensityMatrix::zeros(self.basis);
        self.apply_coupling(t, &rho.data, &mut out.data);
        for ((o, r), d) in out.data.iter_mut().zip(&rho.data).zip(self.diagonal_generator()) {
            *o += d * r;
        }
        out
    }
}

/// `G+(rho) + G-(rho)` on its own.
pub fn apply_dissipators(rho: &DensityMatrix, params: &ModelParams) -> DensityMatrix {
    let basis = *rho.basis();
    let n = basis.dim();
    let gamma = params.gamma;
    let mut out = DensityMatrix::zeros(basis);
    for j in 0..n {
        let m = basis.level(j);
        for i in 0..n {
            let k = basis.level(i);
            let mut v = -0.5 * gamma * (k.unsigned_abs() + m.unsigned_abs()) as f64 * rho.get(i, j);
            if k >= 0 && m >= 0 && i + 1 < n && j + 1 < n {
                v += gamma * (((k + 1) * (m + 1)) as f64).sqrt() * rho.get(i + 1, j + 1);
            }
            if k <= 0 && m <= 0 && i >= 1 && j >= 1 {
                v += gamma * (((1 - k) * (1 - m)) as f64).sqrt() * rho.get(i - 1, j - 1);
            }
            out.set(i, j, v);
        }
    }
    out
}

/// Lab-frame master equation right-hand side.
pub fn master_rhs(rho: &DensityMatrix, t: f64, params: &ModelParams) -> DensityMatrix {
    let h = build_hamiltonian(t, rho.basis(), params);
    let hd = h.to_dense();
    let n = rho.dim();
    let r = rho.as_slice();
    let mut out = apply_dissipators(rho, params);
    let scale = C64::new(0.0, -1.0 / params.hbar);
    for j in 0..n {
        for i in 0..n {
            let lo = i.saturating_sub(1).min(j.saturating_sub(1));
            let hi = (i + 1).max(j + 1).min(n - 1);
            let mut comm = C64::new(0.0, 0.0);
            for k in lo..=hi {
                comm += hd[i + k * n] * r[k + j * n] - r[i + k * n] * hd[k + j * n];
            }
            let v = out.get(i, j) + scale * comm;
            out.set(i, j, v);
        }
    }
    out
}

/// Fixed-step integrating-factor (Lawson) RK4: the elementwise part of the
/// generator is exponentiated exactly, the hopping and jump part goes
/// through classical RK4.
#[derive(Debug, Clone)]
pub struct Propagator {
    eq: MasterEquation,
    dt: f64,
    steps_per_period: usize,
    exp_half: Vec<C64>,
    exp_full: Vec<C64>,
    diag: Vec<C64>,
    scratch: [Vec<C64>; 5],
}

impl Propagator {
    pub fn new(eq: MasterEquation, steps_per_period: usize) -> Self {
        let steps_per_period = steps_per_period.max(1);
        let dt = eq.params().period() / steps_per_period as f64;
        let diag = eq.diagonal_generator();
        let exp_half: Vec<C64> = diag.iter().map(|d| (d * (0.5 * dt)).exp()).collect();
        let exp_full = exp_half.iter().map(|e| e * e).collect();
        let len = diag.len();
        let zero = || vec![C64::new(0.0, 0.0); len];
        Self {
            eq,
            dt,
            steps_per_period,
            exp_half,
            exp_full,
            diag,
            scratch: [zero(), zero(), zero(), zero(), zero()],
        }
    }

    pub fn equation(&self) -> &MasterEquation {
        &self.eq
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    /// One step of the default size from time `t`.
    pub fn step(&mut self, t: f64, u: &mut [C64]) {
        let (eh, ef) = (std::mem::take(&mut self.exp_half), std::mem::take(&mut self.exp_full));
        self.step_with(t, self.dt, &eh, &ef, u);
        self.exp_half = eh;
        self.exp_full = ef;
    }

    /// One step of arbitrary size `h`.
    pub fn step_sized(&mut self, t: f64, h: f64, u: &mut [C64]) {
        let eh: Vec<C64> = self.diag.iter().map(|d| (d * (0.5 * h)).exp()).collect();
        let ef: Vec<C64> = eh.iter().map(|e| e * e).collect();
        self.step_with(t, h, &eh, &ef, u);
    }

    fn step_with(&mut self, t: f64, h: f64, eh: &[C64], ef: &[C64], u: &mut [C64]) {
        let [k1, k2, k3, k4, y] = &mut self.scratch;
        let eq = &self.eq;
        let half = 0.5 * h;
        eq.apply_coupling(t, u, k1);
        for i in 0..u.len() {
            y[i] = eh[i] * (u[i] + half * k1[i]);
        }
        eq.apply_coupling(t + half, y, k2);
        for i in 0..u.len() {
            y[i] = eh[i] * u[i] + half * k2[i];
        }
        eq.apply_coupling(t + half, y, k3);
        for i in 0..u.len() {
            y[i] = ef[i] * u[i] + h * eh[i] * k3[i];
        }
        eq.apply_coupling(t + h, y, k4);
        let sixth = h / 6.0;
        for i in 0..u.len() {
            u[i] = ef[i] * u[i]
                + sixth * (ef[i] * k1[i] + 2.0 * eh[i] * (k2[i] + k3[i]) + k4[i]);
        }
    }

    /// Integrates over whole periods starting at `t = 0` (no re-symmetrization;
    /// usable on non-Hermitian operands).
    pub fn propagate_periods(&mut self, u: &mut [C64], periods: usize) {
        let total = periods * self.steps_per_period;
        for k in 0..total {
            let t = (k % self.steps_per_period) as f64 * self.dt;
            self.step(t, u);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub steps_per_period: usize,
    pub frame: Frame,
    /// Apply `rho <- (rho + rho')/2` after every step.
    pub symmetrize: bool,
    pub boundary_limit: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            steps_per_period: DEFAULT_STEPS_PER_PERIOD,
            frame: Frame::Lab,
            symmetrize: true,
            boundary_limit: BOUNDARY_POPULATION_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EvolveWarning {
    /// Outermost-level population exceeded the limit; truncation no longer faithful.
    BasisOverflow { time: f64, population: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub warnings: Vec<EvolveWarning>,
}

/// Evolves `rho0` from `t0` and records the state at each of `sample_times`
/// (ascending, each `>= t0`).
pub fn evolve(
    rho0: &DensityMatrix,
    t0: f64,
    sample_times: &[f64],
    params: &ModelParams,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    if sample_times.windows(2).any(|w| w[1] < w[0]) || sample_times.first().is_some_and(|t| *t < t0) {
        return Err(Error::Precondition("sample times must ascend from t0".into()));
    }
    let eq = MasterEquation::new(params, rho0.basis(), opts.frame)?;
    let mut prop = Propagator::new(eq, opts.steps_per_period);
    let dt = prop.dt();
    let mut u = rho0.clone();
    let mut t = t0;
    let mut out = Trajectory {
        times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        warnings: Vec::new(),
    };
    let mut overflow_reported = false;
    for &target in sample_times {
        // whole steps, then one short step to land on the sample time
        let remaining = target - t;
        let whole = ((remaining / dt) * (1.0 + 1e-12)).floor().max(0.0) as usize;
        for _ in 0..whole {
            prop.step(t, &mut u.data);
            t += dt;
            if opts.symmetrize {
                u.symmetrize();
            }
        }
        let rest = target - t;
        if rest > 1e-12 * dt.max(1.0) {
            prop.step_sized(t, rest, &mut u.data);
            if opts.symmetrize {
                u.symmetrize();
            }
        }
        t = target;
        let boundary = u.boundary_population();
        if boundary > opts.boundary_limit && !overflow_reported {
            out.warnings.push(EvolveWarning::BasisOverflow {
                time: t,
                population: boundary,
            });
            overflow_reported = true;
        }
        out.times.push(t);
        out.states.push(u.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sym(omega: f64, gamma: f64, hbar: f64) -> ModelParams {
        ModelParams::symmetric(1.0, 1.0, omega, gamma, hbar).unwrap()
    }

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn free_rotor_hamiltonian_is_diagonal() {
        let p = ModelParams::symmetric(1.0, 0.0, 4.0, 0.0, 0.25).unwrap();
        let b = MomentumBasis::symmetric(5).unwrap();
        let h = build_hamiltonian(0.7, &b, &p);
        assert_eq!(h.coupling, c(0.0));
        for (i, n) in b.levels().enumerate() {
            assert_relative_eq!(h.diagonal[i], 0.5 * 0.0625 * (n * n) as f64);
        }
    }

    #[test]
    fn coupling_matches_quadrature_of_cosine() {
        let p = sym(4.0, 0.0, 0.25);
        let b = MomentumBasis::symmetric(3).unwrap();
        let h = build_hamiltonian(0.0, &b, &p);
        assert_relative_eq!(h.coupling.re, -1.0, epsilon = 1e-15);
        // <n+1| -V cos(theta - wt) - V cos(theta + wt) |n> by midpoint quadrature in theta
        let t = 0.37;
        let h = build_hamiltonian(t, &b, &p);
        let m = 4096;
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..m {
            let th = std::f64::consts::TAU * (k as f64 + 0.5) / m as f64;
            let v = -(th - 4.0 * t).cos() - (th + 4.0 * t).cos();
            // <n+1|theta> <theta|n> = e^{-i theta} / 2 pi
            acc += C64::from_polar(1.0, -th) * v / m as f64;
        }
        assert_relative_eq!(h.coupling.re, acc.re, epsilon = 1e-12);
        assert_relative_eq!(h.coupling.im, acc.im, epsilon = 1e-12);
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let p = ModelParams::new(1.0, 0.7, 1.2, 2.1, 0.0, 0.25).unwrap();
        let b = MomentumBasis::symmetric(4).unwrap();
        let d = build_hamiltonian(1.234, &b, &p).to_dense();
        let n = b.dim();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(d[i + j * n], d[j + i * n].conj());
            }
        }
    }

    #[test]
    fn ground_state_is_dark() {
        let p = sym(4.0, 0.05, 0.25);
        let b = MomentumBasis::symmetric(4).unwrap();
        let rate = apply_dissipators(&DensityMatrix::pure_level(b, 0).unwrap(), &p);
        assert_eq!(rate.max_abs(), 0.0);
    }

    #[test]
    fn first_level_decays_to_ground() {
        let p = sym(4.0, 0.05, 0.25);
        let b = MomentumBasis::symmetric(4).unwrap();
        for lv in [1, -1] {
            let rate = apply_dissipators(&DensityMatrix::pure_level(b, lv).unwrap(), &p);
            assert_relative_eq!(rate.element(lv, lv).unwrap().re, -0.05, epsilon = 1e-15);
            assert_relative_eq!(rate.element(0, 0).unwrap().re, 0.05, epsilon = 1e-15);
            let rest: f64 = rate.as_slice().iter().map(|z| z.norm()).sum();
            assert_relative_eq!(rest, 0.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn mean_action_follows_classical_damping() {
        // d<I>/dt = -gamma <I> on any diagonal state
        let p = ModelParams::symmetric(1.0, 0.0, 4.0, 0.05, 0.25).unwrap();
        let b = MomentumBasis::symmetric(6).unwrap();
        let pops: Vec<f64> = (0..b.dim()).map(|i| 1.0 + i as f64).collect();
        let total: f64 = pops.iter().sum();
        let rho = DensityMatrix::diagonal_state(b, &pops.iter().map(|x| x / total).collect::<Vec<_>>()).unwrap();
        let rate = apply_dissipators(&rho, &p);
        let mean = |r: &DensityMatrix| -> f64 {
            b.levels().enumerate().map(|(i, n)| p.hbar * n as f64 * r.get(i, i).re).sum()
        };
        assert_relative_eq!(mean(&rate), -p.gamma * mean(&rho), epsilon = 1e-15);
    }

    #[test]
    fn rhs_is_hermitian_and_traceless() {
        let p = ModelParams::new(1.0, 1.0, 0.6, 2.1, 0.05, 0.25).unwrap();
        let b = MomentumBasis::symmetric(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let rho = DensityMatrix::random(b, &mut rng);
            let r = master_rhs(&rho, rng.gen::<f64>() * 3.0, &p);
            assert!(r.hermiticity_error() < 1e-14);
            assert!(r.trace().norm() < 1e-12);
        }
    }

    #[test]
    fn split_generator_matches_direct_rhs() {
        let p = ModelParams::new(1.0, 1.0, 0.6, 2.1, 0.05, 0.25).unwrap();
        let b = MomentumBasis::range(-5, 7).unwrap();
        let eq = MasterEquation::new(&p, &b, Frame::Lab).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = DensityMatrix::random(b, &mut rng);
        let t = 0.81;
        let direct = master_rhs(&rho, t, &p);
        let split = eq.rhs(&rho, t);
        assert!(direct.max_abs_diff(&split) < 1e-13);
    }

    #[test]
    fn eigenstate_of_frozen_hamiltonian_has_no_commutator() {
        let p = ModelParams::symmetric(1.0, 0.0, 4.0, 0.0, 0.25).unwrap();
        let b = MomentumBasis::symmetric(3).unwrap();
        let rho = DensityMatrix::pure_level(b, 2).unwrap();
        assert_eq!(master_rhs(&rho, 0.4, &p).max_abs(), 0.0);
    }

    #[test]
    fn free_rotor_populations_constant() {
        let p = ModelParams::symmetric(1.0, 0.0, 4.0, 0.0, 0.25).unwrap();
        let b = MomentumBasis::symmetric(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = DensityMatrix::random(b, &mut rng);
        let tr = evolve(&rho, 0.0, &[p.period() * 3.0, p.period() * 7.5], &p, &EvolveOptions::default()).unwrap();
        for s in &tr.states {
            for (a, b) in s.populations().iter().zip(rho.populations()) {
                assert_relative_eq!(*a, b, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn free_damped_mean_action_is_exponential() {
        let p = ModelParams::symmetric(1.0, 0.0, 4.0, 0.05, 0.25).unwrap();
        let b = MomentumBasis::symmetric(10).unwrap();
        let pops: Vec<f64> = b.levels().map(|n| if n == 8 || n == -3 { 0.5 } else { 0.0 }).collect();
        let rho = DensityMatrix::diagonal_state(b, &pops).unwrap();
        let mean0: f64 = 0.25 * (8.0 * 0.5 - 3.0 * 0.5);
        let times: Vec<f64> = (1..=5).map(|k| k as f64 * 2.0 * p.period()).collect();
        let tr = evolve(&rho, 0.0, &times, &p, &EvolveOptions::default()).unwrap();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let mean: f64 = b.levels().zip(s.populations()).map(|(n, q)| 0.25 * n as f64 * q).sum();
            assert!((mean - mean0 * (-0.05 * t).exp()).abs() < 1e-6, "{mean}");
        }
    }

    #[test]
    fn off_grid_sample_times_are_hit() {
        let p = sym(2.1, 0.05, 0.5);
        let b = MomentumBasis::symmetric(6).unwrap();
        let rho = DensityMatrix::pure_level(b, 2).unwrap();
        let opts = EvolveOptions::default();
        let a = evolve(&rho, 0.0, &[0.3], &p, &opts).unwrap();
        let fine = EvolveOptions { steps_per_period: 4096, ..opts };
        let b2 = evolve(&rho, 0.0, &[0.3], &p, &fine).unwrap();
        assert!(a.states[0].max_abs_diff(&b2.states[0]) < 1e-7);
        assert_eq!(a.times, vec![0.3]);
    }

    #[test]
    fn boundary_overflow_is_reported() {
        let p = sym(2.1, 0.0, 0.5);
        let b = MomentumBasis::symmetric(3).unwrap();
        let rho = DensityMatrix::pure_level(b, 3).unwrap();
        let tr = evolve(&rho, 0.0, &[p.period()], &p, &EvolveOptions::default()).unwrap();
        assert!(matches!(tr.warnings[0], EvolveWarning::BasisOverflow { .. }));
    }

    #[test]
    fn inversion_commutes_with_symmetric_evolution() {
        let p = sym(2.1, 0.05, 0.5);
        let b = MomentumBasis::for_params(&p, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = DensityMatrix::random(b, &mut rng);
        let opts = EvolveOptions::default();
        let t = [p.period()];
        let a = evolve(&rho, 0.0, &t, &p, &opts).unwrap().states.remove(0).inverted().unwrap();
        let b2 = evolve(&rho.inverted().unwrap(), 0.0, &t, &p, &opts).unwrap().states.remove(0);
        assert!(a.max_abs_diff(&b2) < 1e-8);
    }

    #[test]
    fn rotating_frame_needs_single_wave() {
        let p = sym(4.0, 0.05, 0.25);
        let b = MomentumBasis::symmetric(4).unwrap();
        assert!(MasterEquation::new(&p, &b, Frame::Rotating).is_err());
        assert!(MasterEquation::new(&p.with_v_minus(0.0), &b, Frame::Rotating).is_ok());
    }

    #[test]
    fn default_truncation() {
        let p = sym(4.0, 0.05, 0.25);
        let b = MomentumBasis::for_params(&p, 1.0);
        assert_eq!((b.n_min(), b.n_max()), (-28, 28));
        let b = MomentumBasis::for_params(&p.with_v_minus(0.0), 1.0);
        assert_eq!((b.n_min(), b.n_max()), (-12, 28));
        assert!(MomentumBasis::range(1, 4).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn symmetrize_is_idempotent_and_hermitian(seed in 0u64..1000) {
            let b = MomentumBasis::symmetric(3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = DensityMatrix::zeros(b);
            for z in m.as_mut_slice() {
                *z = C64::new(rng.gen(), rng.gen());
            }
            m.symmetrize();
            proptest::prop_assert_eq!(m.hermiticity_error(), 0.0);
            let before = m.clone();
            m.symmetrize();
            proptest::prop_assert_eq!(m, before);
        }
    }
}
