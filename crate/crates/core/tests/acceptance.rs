//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Release-profile numerics dominate the runtime (about 20 minutes on one core).
//! The process exits 0 after printing every line; set
//! `DRM_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::time::Instant;

use drm::analysis::{
    build_cycle_state, cycle_peaks, default_region_edge, detect_peaks, region_masses, DistributionSnapshot, PeakOptions,
};
use drm::classical::{
    action_histogram, basin_census, period_map_jacobian_det, propagate_ensemble, uniform_edges,
    AttractorKind, BasinGrid, BasinOptions, Ensemble, PhasePoint,
};
use drm::effective::{
    fit_lifetime_scaling, lifetime_scan, separatrix_area, EffectiveParams, SlowModeOptions,
};
use drm::model::{derive_geometry, ModelParams};
use drm::quantum::{evolve, DensityMatrix, EvolveOptions, MomentumBasis};
use drm::superop::{
    diagonalize_leading, floquet_operator, matching_evolve_options, spectrum, FloquetOperator,
    FloquetOptions, SpectralDecomposition, SpectrumKind,
};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn drm(omega: f64, gamma: f64, hbar: f64) -> ModelParams {
    ModelParams::symmetric(1.0, 1.0, omega, gamma, hbar).unwrap()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Floquet operators and leading decompositions shared between criteria.
#[derive(Default)]
struct Cache {
    ops: HashMap<(u64, u64), FloquetOperator>,
    decs: HashMap<(u64, u64), SpectralDecomposition>,
}

impl Cache {
    fn key(p: &ModelParams) -> (u64, u64) {
        (p.omega.to_bits(), p.hbar.to_bits())
    }

    fn op(&mut self, p: &ModelParams) -> &FloquetOperator {
        self.ops.entry(Self::key(p)).or_insert_with(|| {
            let basis = MomentumBasis::for_params(p, 1.0);
            let opts = FloquetOptions { max_doublings: 3, ..FloquetOptions::default() };
            floquet_operator(&basis, p, &opts).unwrap()
        })
    }

    fn leading(&mut self, p: &ModelParams) -> &SpectralDecomposition {
        let key = Self::key(p);
        if !self.decs.contains_key(&key) {
            let dec = diagonalize_leading(&self.op(p).op, SpectrumKind::Floquet, 4).unwrap();
            self.decs.insert(key, dec);
        }
        &self.decs[&key]
    }
}

fn conservation() -> Verdict {
    let p = drm(2.1, 0.05, 0.25);
    let basis = MomentumBasis::for_params(&p, 1.0);
    let n0 = (derive_geometry(&p).i_plus / p.hbar).round() as i64;
    let rho0 = DensityMatrix::pure_level(basis, n0).unwrap();
    let times: Vec<f64> = (1..=10).map(|k| 30.0 * k as f64 * p.period()).collect();
    // no symmetrization, so hermiticity is a genuine check
    let opts = EvolveOptions { symmetrize: false, ..EvolveOptions::default() };
    let traj = evolve(&rho0, 0.0, &times, &p, &opts).unwrap();
    let (mut tr, mut herm, mut mineig) = (0.0_f64, 0.0_f64, f64::INFINITY);
    for rho in &traj.states {
        tr = tr.max((rho.trace() - C64::new(1.0, 0.0)).norm());
        herm = herm.max(rho.hermiticity_error());
        mineig = mineig.min(rho.min_eigenvalue().unwrap());
    }
    verdict(
        traj.states.len() == 10 && tr < 1e-8 && herm < 1e-10 && mineig > -1e-7,
        format!("max|Tr-1| {tr:.2e}, max herm {herm:.2e}, min eig {mineig:.2e} over 10 samples"),
    )
}

fn floquet_oracle(cache: &mut Cache) -> Verdict {
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for (omega, hbar, seed) in [(4.0, 0.5, 11), (2.1, 0.25, 12)] {
        let p = drm(omega, 0.05, hbar);
        let u = cache.op(&p);
        let opts = matching_evolve_options(u);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut err = 0.0_f64;
        for _ in 0..10 {
            let rho = DensityMatrix::random(u.op.basis, &mut rng);
            let direct = evolve(&rho, 0.0, &[p.period()], &p, &opts).unwrap().states.remove(0);
            err = err.max(u.op.apply_to(&rho).max_abs_diff(&direct));
        }
        worst = worst.max(err);
        parts.push(format!("omega={omega} hbar={hbar}: {err:.2e}"));
    }
    verdict(worst < 1e-8, parts.join(", "))
}

fn spectral_structure(cache: &mut Cache) -> Verdict {
    let mut ok = true;
    let (mut lam0_err, mut over) = (0.0_f64, f64::NEG_INFINITY);
    let mut bad = Vec::new();
    for k in 0..=24 {
        let omega = 1.6 + 0.1 * k as f64;
        let omega = (omega * 10.0).round() / 10.0;
        let p = drm(omega, 0.05, 0.5);
        let ev = spectrum(&cache.op(&p).op, SpectrumKind::Floquet).unwrap();
        lam0_err = lam0_err.max((ev[0] - C64::new(1.0, 0.0)).norm());
        over = over.max(ev.iter().map(|z| z.norm()).fold(0.0, f64::max) - 1.0);
        if omega > 2.5 {
            let (a1, a2, a3) = (ev[1].norm(), ev[2].norm(), ev[3].norm());
            if !((a1 - a2).abs() < (a1 - a3).abs() && (a1 - a2).abs() < (a2 - a3).abs()) {
                bad.push(omega);
            }
        }
    }
    ok &= lam0_err < 1e-8 && over <= 1e-8 && bad.is_empty();
    verdict(
        ok,
        format!(
            "25 omegas at hbar=0.5: |lambda0-1| {lam0_err:.1e}, max|lambda|-1 {over:.1e}, non-degenerate pairs above 2.5: {bad:?}"
        ),
    )
}

fn diag_abs(rho: &DensityMatrix) -> Vec<f64> {
    rho.populations().iter().map(|v| v.abs()).collect()
}

fn morphology(cache: &mut Cache) -> Verdict {
    let opts = PeakOptions::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for omega in [1.6, 2.1, 2.5, 3.0] {
        let p = drm(omega, 0.05, 0.25);
        let dec = cache.leading(&p).clone();
        let x: Vec<f64> = dec.basis.levels().map(|n| p.hbar * n as f64).collect();
        let (lo, hi) = cycle_peaks(&detect_peaks(&x, &dec.modes[0].populations(), &opts), &p);
        if omega < 3.0 {
            ok &= lo.is_some() && hi.is_some();
            parts.push(format!("omega={omega} rho0 cycle peaks {}", lo.is_some() && hi.is_some()));
        } else {
            ok &= lo.is_none() && hi.is_none();
            let plus = build_cycle_state(&dec, 1, &p).unwrap();
            let has = |rho: &DensityMatrix| {
                let (a, b) = cycle_peaks(&detect_peaks(&x, &diag_abs(rho), &opts), &p);
                a.is_some() && b.is_some()
            };
            let (r1, r2) = (has(&plus.modes[1]), has(&plus.modes[2]));
            ok &= r1 && r2 && plus.concentration >= 0.7;
            parts.push(format!(
                "omega=3 rho0 cycle peaks {}, rho1 {r1}, rho2 {r2}, plus-state mass at n>0 {:.3}",
                lo.is_some() || hi.is_some(),
                plus.concentration
            ));
        }
    }
    verdict(ok, parts.join("; "))
}

fn classical() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;

    let pts = [PhasePoint::new(0.3, 0.5), PhasePoint::new(2.0, 4.0), PhasePoint::new(-1.0, -3.0)];
    let mut det_err = 0.0_f64;
    for gamma in [0.0, 0.05] {
        let p = drm(4.0, gamma, 0.25);
        let expected = (-gamma * p.period()).exp();
        for pt in pts {
            det_err = det_err.max((period_map_jacobian_det(pt, &p, 512, 1e-5) - expected).abs());
        }
    }
    ok &= det_err < 1e-6;
    parts.push(format!("Jacobian det error {det_err:.1e}"));

    let p = drm(4.0, 0.05, 0.25);
    let cells = basin_census(&BasinGrid::for_params(&p), &p, &BasinOptions::for_params(&p)).unwrap();
    let count = |k: AttractorKind| cells.iter().filter(|c| c.label.kind == k).count();
    let four = [
        AttractorKind::UpperCycle,
        AttractorKind::LowerCycle,
        AttractorKind::FixedPoint0,
        AttractorKind::FixedPointPi,
    ];
    let kinds_ok = four.iter().all(|k| count(*k) > 0) && count(AttractorKind::Unresolved) == 0;
    ok &= kinds_ok;
    parts.push(format!(
        "census {:?}",
        AttractorKind::ALL.iter().map(|k| (k.as_str(), count(*k))).collect::<Vec<_>>()
    ));

    // peak weights at I-, 0, I+ as masses of the three action regions
    let p = drm(2.1, 0.05, 0.25);
    let g = derive_geometry(&p);
    let ring = Ensemble::ring(g.i_plus, 10_000).unwrap();
    let out = propagate_ensemble(&ring, 300.0 * p.period(), &p, 512);
    let span = 2.0 * p.omega / p.g;
    let h = action_histogram(&out, &uniform_edges(-span, span, 160)).unwrap();
    let total = h.total() + h.outside;
    let w: Vec<f64> = h.weights.iter().map(|v| v / total).collect();
    let m = region_masses(&h.centers(), &w, default_region_edge(&p));
    let target = [0.01, 0.02, 0.97];
    let weights_ok = m.iter().zip(target).all(|(a, b)| (a - b).abs() <= 0.05);
    ok &= weights_ok;
    parts.push(format!("omega=2.1 weights ({:.3}, {:.3}, {:.3})", m[0], m[1], m[2]));
    verdict(ok, parts.join("; "))
}

fn lifetime() -> Verdict {
    let p = ModelParams::new(1.0, 1.0, 0.0, 4.0, 0.05, 0.25).unwrap();
    let hbars = [0.5, 0.4, 1.0 / 3.0, 0.25, 0.2];
    let samples = lifetime_scan(&p, &hbars, 1.0, &SlowModeOptions::default()).unwrap();
    let area = separatrix_area(&EffectiveParams::from_model(&p)).unwrap().area;
    let pairs: Vec<(f64, f64)> = samples.iter().map(|s| (s.hbar, s.tau)).collect();
    let fit = fit_lifetime_scaling(&pairs, area, p.gamma).unwrap();
    let monotone = samples.windows(2).all(|w| w[1].tau > w[0].tau);
    let isolated = samples.iter().all(|s| s.isolated);
    let ratios: Vec<String> = samples
        .iter()
        .map(|s| format!("{:.3}:{:.1}", s.hbar, s.gap_ratio))
        .collect();
    verdict(
        isolated && fit.quality > 0.9 && fit.slope_a > 0.0 && monotone,
        format!(
            "gap ratio per hbar [{}] (isolated needs >= 3), fit A {:.4} R^2 {:.4}, tau monotone {monotone}",
            ratios.join(" "),
            fit.slope_a,
            fit.quality
        ),
    )
}

fn chaos_assisted(cache: &mut Cache) -> Verdict {
    let p = drm(2.1, 0.05, 0.25);
    let basis = MomentumBasis::for_params(&p, 1.0);
    let n0 = (derive_geometry(&p).i_plus / p.hbar).round() as i64;
    let rho0 = DensityMatrix::pure_level(basis, n0).unwrap();
    let t = 300.0 * p.period();
    let traj = evolve(&rho0, 0.0, &[t], &p, &EvolveOptions::default()).unwrap();
    let snap = DistributionSnapshot::from_density(&traj.states[0], t, p.hbar);
    let (lo, hi) = cycle_peaks(&detect_peaks(&snap.actions(), &snap.populations, &PeakOptions::default()), &p);
    let two = lo.is_some() && hi.is_some();

    let dec = cache.leading(&p);
    let stat = DistributionSnapshot::from_density(&dec.modes[0], 0.0, p.hbar).asymmetry();
    let gap_21 = dec.gap();
    let dec4 = cache.leading(&drm(4.0, 0.05, 0.25));
    let gap_4 = dec4.gap();
    // exchange between the two cycles, for the record
    let split_4 = (dec4.eigenvalues[1] - dec4.eigenvalues[2]).norm();
    let ratio = gap_21 / gap_4;
    verdict(
        two && stat.abs() < 0.05 && ratio >= 10.0,
        format!(
            "300T peaks near +-I+ {two}, stationary asymmetry {stat:.1e}, gap(2.1) {gap_21:.3e} / gap(4) {gap_4:.3e} = {ratio:.2} (needs >= 10), |lambda1-lambda2| at omega=4 {split_4:.1e}"
        ),
    )
}

/// Grid cells with `H < E_s` connected to the well bottom.
fn flood_fill_area(e: &EffectiveParams, cells: usize) -> f64 {
    let vs = e.saddle_phase().unwrap();
    let es = e.potential(vs);
    let jmax = 1.05 * (2.0 * (es - e.potential(e.well_phase().unwrap())) / e.g).sqrt();
    let (dt, dj) = (2.0 * PI / cells as f64, 2.0 * jmax / cells as f64);
    let inside = |i: usize, k: usize| {
        let th = vs + (i as f64 + 0.5) * dt;
        e.energy(th, -jmax + (k as f64 + 0.5) * dj) < es
    };
    let mut seen = vec![false; cells * cells];
    let mut stack = vec![(((e.well_phase().unwrap() - vs) / dt) as usize, cells / 2)];
    let mut count = 0usize;
    while let Some((i, k)) = stack.pop() {
        if seen[i * cells + k] || !inside(i, k) {
            continue;
        }
        seen[i * cells + k] = true;
        count += 1;
        if i > 0 {
            stack.push((i - 1, k));
        }
        if i + 1 < cells {
            stack.push((i + 1, k));
        }
        if k > 0 {
            stack.push((i, k - 1));
        }
        if k + 1 < cells {
            stack.push((i, k + 1));
        }
    }
    count as f64 * dt * dj
}

fn effective_consistency() -> Verdict {
    let base = ModelParams::new(1.0, 1.0, 0.0, 4.0, 0.0, 0.25).unwrap();
    let mut worst = 0.0_f64;
    for gamma in [0.0, 0.05, 0.1] {
        let e = EffectiveParams::from_model(&base.with_gamma(gamma));
        let s = separatrix_area(&e).unwrap().area;
        worst = worst.max((s - flood_fill_area(&e, 2000)).abs() / s);
    }
    let gc = derive_geometry(&base).gamma_critical;
    let mut flips_ok = gc == 0.25;
    for f in [0.5, 0.9, 0.999, 1.0, 1.001, 1.1, 2.0] {
        let p = base.with_gamma(gc * f);
        let solvable = p.gamma * derive_geometry(&p).i_plus / p.v_plus <= 1.0;
        let exists = separatrix_area(&EffectiveParams::from_model(&p)).unwrap().exists;
        flips_ok &= exists == solvable && derive_geometry(&p).theta0.is_some() == solvable;
    }
    verdict(
        worst < 0.01 && flips_ok,
        format!("max relative area error vs flood fill {:.2e}, gamma_c {gc}, exists flag consistent {flips_ok}", worst),
    )
}

fn main() {
    let mut cache = Cache::default();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Cache) -> Verdict>)> = vec![
        ("conservation", Box::new(|_| conservation())),
        ("floquet-oracle", Box::new(floquet_oracle)),
        ("spectral-structure", Box::new(spectral_structure)),
        ("stationary-morphology", Box::new(morphology)),
        ("classical-suite", Box::new(|_| classical())),
        ("lifetime-scaling", Box::new(|_| lifetime())),
        ("chaos-assisted-equilibration", Box::new(chaos_assisted)),
        ("effective-consistency", Box::new(|_| effective_consistency())),
    ];
    let total = criteria.len();
    let mut passed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let v = run(&mut cache);
        passed += v.pass as usize;
        println!(
            "{} {name}: {} [{:.0} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed}/{total} criteria pass");
    if passed < total && std::env::var_os("DRM_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
