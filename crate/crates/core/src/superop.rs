//! Super-operators on column-wise vectorized density matrices.
//!
//! `vec(rho)[i + j N] = rho[i][j]`, so `vec(A X B) = (B^T kron A) vec(X)`.

use faer::linalg::solvers::{PartialPivLu, SolveCore};
use faer::{Conj, Mat};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quantum::{
    DensityMatrix, EvolveOptions, Frame, MasterEquation, MomentumBasis, Propagator,
    DEFAULT_STEPS_PER_PERIOD,
};

/// Column vector of length `N^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedState(pub Vec<C64>);

impl VectorizedState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

pub fn vectorize(rho: &DensityMatrix) -> VectorizedState {
    VectorizedState(rho.as_slice().to_vec())
}

pub fn devectorize(v: &VectorizedState, basis: MomentumBasis) -> Result<DensityMatrix> {
    DensityMatrix::from_column_major(basis, v.0.clone())
}

/// `vec(I)`; as a row it is the trace functional.
pub fn vec_identity(dim: usize) -> VectorizedState {
    let mut v = vec![C64::new(0.0, 0.0); dim * dim];
    for i in 0..dim {
        v[i + i * dim] = C64::new(1.0, 0.0);
    }
    VectorizedState(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OperatorKind {
    /// Generator `L(t)` frozen at time `t`.
    Liouvillian { t: f64, frame: Frame },
    /// One-period propagator.
    Floquet { period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpectrumKind {
    Floquet,
    Liouvillian,
}

/// Dense `N^2 x N^2` super-operator.
#[derive(Debug, Clone)]
pub struct SuperOperator {
    pub matrix: Mat<C64>,
    pub basis: MomentumBasis,
    pub kind: OperatorKind,
}

impl SuperOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &VectorizedState) -> VectorizedState {
        let n = self.dim();
        let m = &self.matrix;
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (k, x) in v.0.iter().enumerate() {
            if *x == C64::new(0.0, 0.0) {
                continue;
            }
            let col = m.col(k);
            for (i, o) in out.iter_mut().enumerate() {
                *o += col[i] * x;
            }
        }
        VectorizedState(out)
    }

    pub fn apply_to(&self, rho: &DensityMatrix) -> DensityMatrix {
        let v = self.apply(&vectorize(rho));
        DensityMatrix::from_column_major(self.basis, v.0).expect("dimension preserved")
    }

    /// Row vector `vec(I)^T M`.
    pub fn trace_row(&self) -> Vec<C64> {
        let n = self.basis.dim();
        let dim = self.dim();
        (0..dim)
            .map(|k| (0..n).map(|i| self.matrix[(i + i * n, k)]).sum())
            .collect()
    }
}

/// Sparse `N x N` operator as `(row, col, value)` triplets.
struct Sparse(Vec<(usize, usize, C64)>);

impl Sparse {
    fn adjoint(&self) -> Sparse {
        Sparse(self.0.iter().map(|&(i, j, v)| (j, i, v.conj())).collect())
    }

    fn mul(&self, other: &Sparse, n: usize) -> Sparse {
        let mut dense = vec![C64::new(0.0, 0.0); n * n];
        for &(i, k, a) in &self.0 {
            for &(k2, j, b) in &other.0 {
                if k == k2 {
                    dense[i + j * n] += a * b;
                }
            }
        }
        Sparse(
            (0..n * n)
                .filter(|&idx| dense[idx] != C64::new(0.0, 0.0))
                .map(|idx| (idx % n, idx / n, dense[idx]))
                .collect(),
        )
    }

    fn identity(n: usize) -> Sparse {
        Sparse((0..n).map(|i| (i, i, C64::new(1.0, 0.0))).collect())
    }
}

/// `M += coeff * (B^T kron A)`, i.e. the map `X -> coeff A X B`.
fn add_sandwich(m: &mut Mat<C64>, coeff: C64, a: &Sparse, b: &Sparse, n: usize) {
    for &(i, k, av) in &a.0 {
        for &(l, j, bv) in &b.0 {
            // (A X B)_{ij} += A_ik X_kl B_lj
            m[(i + j * n, k + l * n)] += coeff * av * bv;
        }
    }
}

fn lowering_operators(basis: &MomentumBasis, hbar: f64) -> [Sparse; 2] {
    let n = basis.dim();
    let mut up = Vec::new();
    let mut down = Vec::new();
    for k in 0..n {
        let lv = basis.level(k);
        if lv >= 1 {
            up.push((k - 1, k, C64::new((hbar * lv as f64).sqrt(), 0.0)));
        }
        if lv <= -1 && k + 1 < n {
            down.push((k + 1, k, C64::new((hbar * (-lv) as f64).sqrt(), 0.0)));
        }
    }
    [Sparse(up), Sparse(down)]
}

/// Dense Liouvillian in the given frame, assembled from the Kronecker
/// identities for left and right multiplication.
pub fn build_liouvillian_in(
    frame: Frame,
    t: f64,
    basis: &MomentumBasis,
    params: &ModelParams,
) -> Result<SuperOperator> {
    let eq = MasterEquation::new(params, basis, frame)?;
    let n = basis.dim();
    let h = eq.hamiltonian(t);
    let mut hs = Vec::new();
    for i in 0..n {
        hs.push((i, i, C64::new(h.diagonal[i], 0.0)));
        if i + 1 < n {
            hs.push((i + 1, i, h.coupling));
            hs.push((i, i + 1, h.coupling.conj()));
        }
    }
    let hs = Sparse(hs);
    let id = Sparse::identity(n);
    let mut m = Mat::<C64>::zeros(n * n, n * n);
    let mi = C64::new(0.0, -1.0 / params.hbar);
    add_sandwich(&mut m, mi, &hs, &id, n);
    add_sandwich(&mut m, -mi, &id, &hs, n);
    if params.gamma > 0.0 {
        let rate = params.gamma / params.hbar;
        for a in lowering_operators(basis, params.hbar) {
            let ad = a.adjoint();
            let ada = ad.mul(&a, n);
            add_sandwich(&mut m, C64::new(rate, 0.0), &a, &ad, n);
            add_sandwich(&mut m, C64::new(-0.5 * rate, 0.0), &ada, &id, n);
            add_sandwich(&mut m, C64::new(-0.5 * rate, 0.0), &id, &ada, n);
        }
    }
    Ok(SuperOperator {
        matrix: m,
        basis: *basis,
        kind: OperatorKind::Liouvillian { t, frame },
    })
}

/// Lab-frame `L(t)`.
pub fn build_liouvillian(t: f64, basis: &MomentumBasis, params: &ModelParams) -> Result<SuperOperator> {
    build_liouvillian_in(Frame::Lab, t, basis, params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetOptions {
    pub steps_per_period: usize,
    /// Step-halving gate on the sup-norm of probe states after one period.
    pub gate_tolerance: f64,
    pub probes: usize,
    pub seed: u64,
    /// Times `steps_per_period` may be doubled when the gate fails.
    pub max_doublings: u32,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self {
            steps_per_period: DEFAULT_STEPS_PER_PERIOD,
            gate_tolerance: 1e-8,
            probes: 2,
            seed: 0,
            max_doublings: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FloquetOperator {
    pub op: SuperOperator,
    /// Largest step-halving difference seen on the probe states.
    pub gate_residual: f64,
    /// Steps per period actually used (after any doubling).
    pub steps_per_period: usize,
}

/// One-period propagator `U`, built column by column by propagating the
/// matrix units `|i><j|` through the lab-frame master equation.
///
/// Only `i <= j` is integrated; `U(|j><i|) = U(|i><j|)'` because the
/// generator commutes with Hermitian conjugation.
pub fn floquet_operator(
    basis: &MomentumBasis,
    params: &ModelParams,
    opts: &FloquetOptions,
) -> Result<FloquetOperator> {
    let mut opts = *opts;
    let mut gate_residual = step_halving_residual(basis, params, &opts)?;
    let mut doublings = 0;
    while !(gate_residual <= opts.gate_tolerance) && doublings < opts.max_doublings {
        opts.steps_per_period *= 2;
        doublings += 1;
        gate_residual = step_halving_residual(basis, params, &opts)?;
    }
    if !(gate_residual <= opts.gate_tolerance) {
        return Err(Error::NotConverged {
            residual: gate_residual,
            tolerance: opts.gate_tolerance,
        });
    }

    let eq = MasterEquation::new(params, basis, Frame::Lab)?;
    let n = basis.dim();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..=j).map(move |i| (i, j))).collect();
    let columns: Vec<((usize, usize), Vec<C64>)> = pairs
        .into_par_iter()
        .map_init(
            || Propagator::new(eq.clone(), opts.steps_per_period),
            |prop, (i, j)| {
                let mut u = vec![C64::new(0.0, 0.0); n * n];
                u[i + j * n] = C64::new(1.0, 0.0);
                prop.propagate_periods(&mut u, 1);
                ((i, j), u)
            },
        )
        .collect();

    let mut m = Mat::<C64>::zeros(n * n, n * n);
    for ((i, j), col) in columns {
        let c = i + j * n;
        let ct = j + i * n;
        for q in 0..n {
            for p in 0..n {
                let v = col[p + q * n];
                m[(p + q * n, c)] = v;
                if c != ct {
                    m[(q + p * n, ct)] = v.conj();
                }
            }
        }
    }
    Ok(FloquetOperator {
        op: SuperOperator {
            matrix: m,
            basis: *basis,
            kind: OperatorKind::Floquet {
                period: params.period(),
            },
        },
        gate_residual,
        steps_per_period: opts.steps_per_period,
    })
}

/// Sup-norm difference between `K` and `2K` steps per period on random
/// probe states.
pub fn step_halving_residual(
    basis: &MomentumBasis,
    params: &ModelParams,
    opts: &FloquetOptions,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eq = MasterEquation::new(params, basis, Frame::Lab)?;
    let mut coarse = Propagator::new(eq.clone(), opts.steps_per_period);
    let mut fine = Propagator::new(eq, 2 * opts.steps_per_period);
    let mut worst = 0.0_f64;
    for _ in 0..opts.probes.max(1) {
        let rho = DensityMatrix::random(*basis, &mut rng);
        let mut a = rho.clone().into_vec();
        let mut b = rho.into_vec();
        coarse.propagate_periods(&mut a, 1);
        fine.propagate_periods(&mut b, 1);
        let d = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Evolve options matching a Floquet build (same stepper, same step).
pub fn matching_evolve_options(u: &FloquetOperator) -> EvolveOptions {
    EvolveOptions {
        steps_per_period: u.steps_per_period,
        ..EvolveOptions::default()
    }
}

/// Eigenvalues and (some) eigenmatrices of a super-operator.
///
/// Floquet spectra are sorted by descending `|lambda|`, Liouvillian spectra by
/// descending `Re`. Equal keys (to 1e-10) fall back to descending `Re`, then
/// `Im >= 0` first. `modes[0]` has unit trace; higher modes have unit
/// Frobenius norm with the phase fixed by [`fix_phase`].
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub kind: SpectrumKind,
    pub basis: MomentumBasis,
    pub eigenvalues: Vec<C64>,
    /// Right eigenmatrices for the leading `modes.len()` eigenvalues.
    pub modes: Vec<DensityMatrix>,
    /// Left eigenvectors (as matrices `Y` with `tr(Y' rho)` the mode
    /// coefficient), when computed. Scaled so that `tr(Y_j' rho_j) = 1`.
    pub left_modes: Vec<DensityMatrix>,
    /// `max |M v_j - lambda_j v_j|` per computed mode.
    pub residuals: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `1 - |lambda_1|` for Floquet spectra, `|Re eps_1|` for Liouvillians.
    pub fn gap(&self) -> f64 {
        let l1 = self.eigenvalues.get(1).copied().unwrap_or(C64::new(0.0, 0.0));
        match self.kind {
            SpectrumKind::Floquet => 1.0 - l1.norm(),
            SpectrumKind::Liouvillian => l1.re.abs(),
        }
    }

    /// Coefficient of mode `j` in `rho`, from the left eigenvector.
    pub fn coefficient(&self, j: usize, rho: &DensityMatrix) -> Option<C64> {
        let y = self.left_modes.get(j)?;
        Some(
            y.as_slice()
                .iter()
                .zip(rho.as_slice())
                .map(|(a, b)| a.conj() * b)
                .sum(),
        )
    }
}

fn spectrum_order(kind: SpectrumKind, values: &[C64]) -> Vec<usize> {
    let quant = |x: f64| (x * 1e10).round() as i64;
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by_key(|&k| {
        let z = values[k];
        let primary = match kind {
            SpectrumKind::Floquet => -quant(z.norm()),
            SpectrumKind::Liouvillian => -quant(z.re),
        };
        (primary, -quant(z.re), z.im < 0.0, quant(z.im.abs()))
    });
    idx
}

fn eig_error(dim: usize, m: &Mat<C64>, e: impl std::fmt::Debug) -> Error {
    let frob = m.norm_l2();
    Error::Eigen {
        dim,
        message: format!("{e:?} (Frobenius norm {frob:.3e})"),
    }
}

/// Sorted eigenvalues only.
pub fn spectrum(op: &SuperOperator, kind: SpectrumKind) -> Result<Vec<C64>> {
    let ev = op
        .matrix
        .eigenvalues()
        .map_err(|e| eig_error(op.dim(), &op.matrix, e))?;
    Ok(spectrum_order(kind, &ev).into_iter().map(|k| ev[k]).collect())
}

/// Phase convention for decaying modes: the largest-magnitude diagonal
/// entry is made real positive (keeps Hermitian modes Hermitian); if the
/// diagonal is negligible, the largest-magnitude entry overall is used.
pub fn fix_phase(v: &mut [C64], n: usize) {
    let max_all = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let (mut best, mut best_abs) = (0usize, -1.0);
    for i in 0..n {
        let a = v[i + i * n].norm();
        if a > best_abs {
            best_abs = a;
            best = i + i * n;
        }
    }
    if best_abs < 1e-3 * max_all {
        for (k, z) in v.iter().enumerate() {
            if z.norm() > best_abs {
                best_abs = z.norm();
                best = k;
            }
        }
    }
    if best_abs > 0.0 {
        let phase = v[best].conj() / best_abs;
        for z in v.iter_mut() {
            *z *= phase;
        }
    }
}

fn normalize_mode(v: &mut [C64], n: usize, j: usize) {
    if j == 0 {
        let tr: C64 = (0..n).map(|i| v[i + i * n]).sum();
        if tr.norm() > 0.0 {
            for z in v.iter_mut() {
                *z /= tr;
            }
        }
    } else {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for z in v.iter_mut() {
                *z /= norm;
            }
        }
        fix_phase(v, n);
    }
}

fn residual(m: &Mat<C64>, v: &[C64], lambda: C64) -> f64 {
    let dim = v.len();
    let mut out = vec![C64::new(0.0, 0.0); dim];
    for (k, x) in v.iter().enumerate() {
        if *x == C64::new(0.0, 0.0) {
            continue;
        }
        let col = m.col(k);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * x;
        }
    }
    out.iter()
        .zip(v)
        .map(|(a, b)| (a - lambda * b).norm())
        .fold(0.0, f64::max)
}

/// Full dense eigendecomposition with every eigenmatrix.
pub fn diagonalize(op: &SuperOperator, kind: SpectrumKind) -> Result<SpectralDecomposition> {
    let dim = op.dim();
    let n = op.basis.dim();
    let evd = op
        .matrix
        .eigen()
        .map_err(|e| eig_error(dim, &op.matrix, e))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<C64> = (0..dim).map(|k| s[k]).collect();
    let order = spectrum_order(kind, &values);

    // batched residuals: M V - V diag(lambda)
    let mv = &op.matrix * u;
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut modes = Vec::with_capacity(dim);
    let mut residuals = Vec::with_capacity(dim);
    for (j, &k) in order.iter().enumerate() {
        let lambda = values[k];
        let mut res = 0.0_f64;
        let col_norm = (0..dim).map(|i| u[(i, k)].norm()).fold(0.0, f64::max);
        for i in 0..dim {
            res = res.max((mv[(i, k)] - lambda * u[(i, k)]).norm());
        }
        let mut v: Vec<C64> = (0..dim).map(|i| u[(i, k)]).collect();
        normalize_mode(&mut v, n, j);
        let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max) / col_norm.max(f64::MIN_POSITIVE);
        residuals.push(res * scale);
        eigenvalues.push(lambda);
        modes.push(DensityMatrix::from_column_major(op.basis, v)?);
    }
    Ok(SpectralDecomposition {
        kind,
        basis: op.basis,
        eigenvalues,
        modes,
        left_modes: Vec::new(),
        residuals,
    })
}

/// All eigenvalues plus right and left eigenmatrices of the leading `count`
/// modes, by shifted inverse iteration. Much cheaper than [`diagonalize`]
/// when only the slowest modes matter.
pub fn diagonalize_leading(
    op: &SuperOperator,
    kind: SpectrumKind,
    count: usize,
) -> Result<SpectralDecomposition> {
    let dim = op.dim();
    let n = op.basis.dim();
    let eigenvalues = spectrum(op, kind)?;
    let count = count.min(dim);
    let mut modes = Vec::with_capacity(count);
    let mut left_modes = Vec::with_capacity(count);
    let mut residuals = Vec::with_capacity(count);
    for (j, &lambda) in eigenvalues.iter().take(count).enumerate() {
        // offset keeps the shifted matrix invertible
        let scale = lambda.norm().max(1.0);
        let sigma = lambda + C64::new(1e-12 * scale, 1e-12 * scale);
        let mut shifted = op.matrix.clone();
        for i in 0..dim {
            shifted[(i, i)] -= sigma;
        }
        let lu = PartialPivLu::new(shifted.as_ref());
        let mut right = inverse_iteration(&lu, dim, j as u64, Conj::No, false);
        let left = inverse_iteration(&lu, dim, 1000 + j as u64, Conj::Yes, true);
        normalize_mode(&mut right, n, j);
        residuals.push(residual(&op.matrix, &right, lambda));
        modes.push(right);
        left_modes.push(left);
    }
    biorthogonalize(&modes, &mut left_modes)?;
    let modes = modes
        .into_iter()
        .map(|v| DensityMatrix::from_column_major(op.basis, v))
        .collect::<Result<Vec<_>>>()?;
    let left_modes = left_modes
        .into_iter()
        .map(|v| DensityMatrix::from_column_major(op.basis, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectralDecomposition {
        kind,
        basis: op.basis,
        eigenvalues,
        modes,
        left_modes,
        residuals,
    })
}

/// Replaces the left vectors `Y` by `Y (Y' X)^{-T*}` so that `Y' X = 1`.
/// Distinct eigenvalues are biorthogonal anyway; this matters inside
/// (near-)degenerate clusters, where inverse iteration returns an arbitrary
/// basis of the eigenspace on each side.
fn biorthogonalize(right: &[Vec<C64>], left: &mut [Vec<C64>]) -> Result<()> {
    let k = right.len();
    if k == 0 {
        return Ok(());
    }
    let dim = right[0].len();
    let gram = Mat::<C64>::from_fn(k, k, |a, b| {
        left[a].iter().zip(&right[b]).map(|(y, x)| y.conj() * x).sum()
    });
    // Y_new = Y G^{-H}; solve G^H Z = I for Z = G^{-H}
    let lu = PartialPivLu::new(gram.as_ref());
    let mut z = Mat::<C64>::identity(k, k);
    lu.solve_transpose_in_place_with_conj(Conj::Yes, z.as_mut());
    if (0..k).any(|a| (0..k).any(|b| !z[(a, b)].re.is_finite() || !z[(a, b)].im.is_finite())) {
        return Err(Error::Eigen {
            dim,
            message: "left and right slow modes are not biorthogonal (singular overlap)".into(),
        });
    }
    let old: Vec<Vec<C64>> = left.to_vec();
    for (b, out) in left.iter_mut().enumerate() {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..k).map(|a| old[a][i] * z[(a, b)]).sum();
        }
    }
    Ok(())
}

fn inverse_iteration(
    lu: &PartialPivLu<C64>,
    dim: usize,
    seed: u64,
    conj: Conj,
    transpose: bool,
) -> Vec<C64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::<C64>::from_fn(dim, 1, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    for _ in 0..3 {
        if transpose {
            lu.solve_transpose_in_place_with_conj(conj, x.as_mut());
        } else {
            lu.solve_in_place_with_conj(conj, x.as_mut());
        }
        let norm = (0..dim).map(|i| x[(i, 0)].norm()).fold(0.0, f64::max);
        for i in 0..dim {
            x[(i, 0)] /= norm;
        }
    }
    (0..dim).map(|i| x[(i, 0)]).collect()
}
