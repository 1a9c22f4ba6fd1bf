//! Dense primal-dual interior-point method on the homogeneous self-dual
//! embedding, with Nesterov-Todd scaling and Mehrotra predictor-corrector
//! steps.
//!
//! Internally problems are brought to the standard pair
//!
//! ```text
//! min c'x  s.t.  A x = b,  G x + s = h,  s in K
//! max -b'y - h'z  s.t.  A'y + G'z + c = 0,  z in K
//! ```
//!
//! where `K` is a nonnegative orthant (the box rows) times Lorentz cones.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::cone::{ConeLayout, NtScaling};
use super::problem::{ConicProblem, DualSolution};
use crate::error::Result;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    Stalled,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmSettings {
    /// Feasibility and duality-gap tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the boundary taken per step.
    pub step_fraction: f64,
    pub refine_steps: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            step_fraction: 0.99,
            refine_steps: 4,
        }
    }
}

/// Objective values and residuals of one iterate, in the caller's scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub primal_value: f64,
    pub dual_value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub tau: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub z: DVector<f64>,
    /// Optimal multipliers when `status` is optimal; for a primal infeasible
    /// problem this holds the normalized infeasibility certificate.
    pub dual: DualSolution,
    pub primal_value: f64,
    pub dual_value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub history: Vec<IterateRecord>,
}

impl ConicSolution {
    pub fn gap(&self) -> f64 {
        (self.primal_value - self.dual_value).abs()
    }
}

/// Something that solves [`ConicProblem`]s and reports multipliers.
pub trait ConicSolver: Send + Sync {
    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution>;
}

/// The in-repo reference solver.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InteriorPoint {
    pub settings: IpmSettings,
}

impl InteriorPoint {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        InteriorPoint {
            settings: IpmSettings {
                tol,
                max_iter,
                ..IpmSettings::default()
            },
        }
    }
}

impl InteriorPoint {
    /// Starts from a caller-supplied primal/dual pair. When both are strictly
    /// feasible every iterate stays feasible, so each reported pair satisfies
    /// weak duality. A start outside the cone interiors is ignored.
    pub fn solve_from(
        &self,
        problem: &ConicProblem,
        primal: &DVector<f64>,
        dual: &DualSolution,
    ) -> Result<ConicSolution> {
        solve_with(problem, &self.settings, Some((primal, dual)))
    }
}

impl ConicSolver for InteriorPoint {
    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution> {
        solve_with(problem, &self.settings, None)
    }
}

pub fn ipm_solve(problem: &ConicProblem, tol: f64, max_iter: usize) -> Result<ConicSolution> {
    InteriorPoint::new(tol, max_iter).solve(problem)
}

/// Where each orthant row of the standard form came from.
#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    Upper(usize),
    Lower(usize),
}

struct StandardForm {
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    layout: ConeLayout,
    n_eq: usize,
    /// Box rows turned into equalities, in order after the user equalities.
    pinned: Vec<usize>,
    orthant: Vec<RowOrigin>,
    cost_scale: f64,
}

fn assemble(problem: &ConicProblem) -> StandardForm {
    let m = problem.num_vars();
    let n_eq = problem.num_eq();
    let mut a_rows: Vec<(Vec<f64>, f64)> = (0..n_eq)
        .map(|i| (problem.eq_matrix.row(i).iter().copied().collect(), problem.eq_rhs[i]))
        .collect();
    let mut pinned = Vec::new();
    let mut g_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut orthant = Vec::new();
    for i in 0..problem.num_box() {
        let row: Vec<f64> = problem.box_matrix.row(i).iter().copied().collect();
        let (lo, hi, off) = (problem.box_lo[i], problem.box_hi[i], problem.box_offset[i]);
        if lo.is_finite() && hi.is_finite() && hi - lo <= 1e-12 * (1.0 + lo.abs()) {
            a_rows.push((row, 0.5 * (lo + hi) - off));
            pinned.push(i);
            continue;
        }
        if hi.is_finite() {
            g_rows.push((row.clone(), hi - off));
            orthant.push(RowOrigin::Upper(i));
        }
        if lo.is_finite() {
            g_rows.push((row.iter().map(|v| -v).collect(), off - lo));
            orthant.push(RowOrigin::Lower(i));
        }
    }
    let nonneg = g_rows.len();
    let mut soc = Vec::with_capacity(problem.cones.len());
    for cone in &problem.cones {
        soc.push(cone.f_vec.len() + 1);
        g_rows.push((cone.h.iter().map(|v| -v).collect(), cone.s));
        for r in 0..cone.f_mat.nrows() {
            g_rows.push((cone.f_mat.row(r).iter().map(|v| -v).collect(), cone.f_vec[r]));
        }
    }
    let k = a_rows.len();
    let p = g_rows.len();
    let a = DMatrix::from_fn(k, m, |i, j| a_rows[i].0[j]);
    let b = DVector::from_fn(k, |i, _| a_rows[i].1);
    let g = DMatrix::from_fn(p, m, |i, j| g_rows[i].0[j]);
    let h = DVector::from_fn(p, |i, _| g_rows[i].1);
    let cmax = problem.cost.amax();
    let cost_scale = if cmax > 0.0 { cmax } else { 1.0 };
    StandardForm {
        c: &problem.cost / cost_scale,
        a,
        b,
        g,
        h,
        layout: ConeLayout { nonneg, soc },
        n_eq,
        pinned,
        orthant,
        cost_scale,
    }
}

/// Factored KKT system for
/// `[0 A' G'; A 0 0; G 0 -W^2] [dx; dy; dz] = [rx; ry; rz]`, held in the
/// symmetric scaled form with unknown `W dz`, which stays well conditioned
/// as the iterates approach the cone boundary.
struct Kkt<'a> {
    sf: &'a StandardForm,
    scaling: &'a NtScaling,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    refine_steps: usize,
}

impl<'a> Kkt<'a> {
    fn factor(sf: &'a StandardForm, scaling: &'a NtScaling, refine_steps: usize) -> Option<Self> {
        let m = sf.c.len();
        let k = sf.a.nrows();
        let p = sf.g.nrows();
        // W^{-1} G
        let mut wg = sf.g.clone();
        for i in 0..sf.layout.nonneg {
            wg.row_mut(i).scale_mut(1.0 / scaling.diag[i]);
        }
        for ((off, d), (_, winv)) in sf.layout.soc_blocks().zip(&scaling.blocks) {
            let block = winv * sf.g.rows(off, d);
            wg.rows_mut(off, d).copy_from(&block);
        }
        let mut kkt = DMatrix::zeros(m + k + p, m + k + p);
        for i in 0..m {
            kkt[(i, i)] = 1e-13;
        }
        if k > 0 {
            kkt.view_mut((0, m), (m, k)).copy_from(&sf.a.transpose());
            kkt.view_mut((m, 0), (k, m)).copy_from(&sf.a);
            for i in 0..k {
                kkt[(m + i, m + i)] = -1e-13;
            }
        }
        kkt.view_mut((0, m + k), (m, p)).copy_from(&wg.transpose());
        kkt.view_mut((m + k, 0), (p, m)).copy_from(&wg);
        for i in 0..p {
            kkt[(m + k + i, m + k + i)] = -1.0;
        }
        if kkt.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Kkt {
            sf,
            scaling,
            lu: kkt.lu(),
            refine_steps,
        })
    }

    fn w2(&self, v: &DVector<f64>) -> DVector<f64> {
        let l = &self.sf.layout;
        self.scaling.apply_w(l, &self.scaling.apply_w(l, v))
    }

    fn solve_once(
        &self,
        rx: &DVector<f64>,
        ry: &DVector<f64>,
        rz: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let l = &self.sf.layout;
        let (m, k, p) = (rx.len(), ry.len(), rz.len());
        let mut rhs = DVector::zeros(m + k + p);
        rhs.rows_mut(0, m).copy_from(rx);
        rhs.rows_mut(m, k).copy_from(ry);
        rhs.rows_mut(m + k, p).copy_from(&self.scaling.apply_winv(l, rz));
        let sol = self.lu.solve(&rhs)?;
        let dx = sol.rows(0, m).into_owned();
        let dy = sol.rows(m, k).into_owned();
        let dz = self.scaling.apply_winv(l, &sol.rows(m + k, p).into_owned());
        Some((dx, dy, dz))
    }

    fn solve(
        &self,
        rx: &DVector<f64>,
        ry: &DVector<f64>,
        rz: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (mut dx, mut dy, mut dz) = self.solve_once(rx, ry, rz)?;
        let scale = 1.0 + rx.amax().max(ry.amax()).max(rz.amax());
        for _ in 0..self.refine_steps {
            let ex = rx - self.sf.a.transpose() * &dy - self.sf.g.transpose() * &dz;
            let ey = ry - &self.sf.a * &dx;
            let ez = rz - (&self.sf.g * &dx - self.w2(&dz));
            let err = ex.amax().max(ey.amax()).max(ez.amax());
            if !err.is_finite() {
                return None;
            }
            if err <= 1e-15 * scale {
                break;
            }
            let (cx, cy, cz) = self.solve_once(&ex, &ey, &ez)?;
            dx += cx;
            dy += cy;
            dz += cz;
        }
        if dx.iter().chain(dy.iter()).chain(dz.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dx, dy, dz))
    }
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

/// Standard-form image of a user-supplied start, if it is strictly interior.
fn warm_start(sf: &StandardForm, primal: &DVector<f64>, dual: &DualSolution) -> Option<Iterate> {
    let m = sf.c.len();
    let layout = &sf.layout;
    if primal.len() != m
        || dual.lambda.len() != sf.n_eq
        || dual.mu.len() != layout.soc.len()
        || dual.u.len() != layout.soc.len()
    {
        return None;
    }
    let cs = sf.cost_scale;
    let mut y = DVector::zeros(sf.a.nrows());
    for (i, l) in dual.lambda.iter().enumerate() {
        y[i] = l / cs;
    }
    for (j, &row) in sf.pinned.iter().enumerate() {
        y[sf.n_eq + j] = (*dual.nu_hi.get(row)? - *dual.nu_lo.get(row)?) / cs;
    }
    let mut z = DVector::zeros(layout.dim());
    for (j, origin) in sf.orthant.iter().enumerate() {
        z[j] = match *origin {
            RowOrigin::Upper(row) => *dual.nu_hi.get(row)?,
            RowOrigin::Lower(row) => *dual.nu_lo.get(row)?,
        } / cs;
    }
    for (i, (off, d)) in layout.soc_blocks().enumerate() {
        if dual.u[i].len() + 1 != d {
            return None;
        }
        z[off] = dual.mu[i] / cs;
        for j in 1..d {
            z[off + j] = -dual.u[i][j - 1] / cs;
        }
    }
    let s = &sf.h - &sf.g * primal;
    if !layout.is_interior(&s) || !layout.is_interior(&z) {
        return None;
    }
    Some(Iterate {
        x: primal.clone(),
        y,
        z,
        s,
        tau: 1.0,
        kappa: 1.0,
    })
}

fn solve_with(
    problem: &ConicProblem,
    settings: &IpmSettings,
    start: Option<(&DVector<f64>, &DualSolution)>,
) -> Result<ConicSolution> {
    problem.validate()?;
    let sf = assemble(problem);
    let layout = &sf.layout;
    let m = sf.c.len();
    let k = sf.a.nrows();
    let degree = layout.degree() as f64;
    let tol = settings.tol;

    let norm_c = sf.c.norm().max(1.0);
    let norm_b = sf.b.norm().max(1.0);
    let norm_h = sf.h.norm().max(1.0);

    let failed = |status: SolveStatus, history: Vec<IterateRecord>, iters: usize| ConicSolution {
        status,
        z: DVector::zeros(m),
        dual: DualSolution::zeros(problem),
        primal_value: f64::NAN,
        dual_value: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        iterations: iters,
        history,
    };

    let warm = start.and_then(|(x, d)| warm_start(&sf, x, d));
    // Default start: least-squares primal and minimum-norm dual, shifted into
    // the cone interior.
    let ident = NtScaling::identity(layout);
    let Some(kkt0) = Kkt::factor(&sf, &ident, settings.refine_steps) else {
        return Ok(failed(SolveStatus::NumericalFailure, Vec::new(), 0));
    };
    let zero_m = DVector::zeros(m);
    let zero_k = DVector::zeros(k);
    let zero_p = DVector::zeros(layout.dim());
    let Some((x0, _, zs)) = kkt0.solve(&zero_m, &sf.b, &sf.h) else {
        return Ok(failed(SolveStatus::NumericalFailure, Vec::new(), 0));
    };
    let Some((_, y0, zd)) = kkt0.solve(&(-&sf.c), &zero_k, &zero_p) else {
        return Ok(failed(SolveStatus::NumericalFailure, Vec::new(), 0));
    };
    let shift = |v: DVector<f64>| -> DVector<f64> {
        let a = layout.interior_shift(&v);
        if a < -1e-8 {
            v
        } else {
            v + layout.identity() * (1.0 + a)
        }
    };
    let mut it = warm.unwrap_or_else(|| Iterate {
        x: x0,
        y: y0,
        z: shift(zd),
        s: shift(-zs),
        tau: 1.0,
        kappa: 1.0,
    });

    let mut history = Vec::new();
    let cs = sf.cost_scale;
    for iter in 0..=settings.max_iter {
        let rx = sf.a.transpose() * &it.y + sf.g.transpose() * &it.z + &sf.c * it.tau;
        let ry = &sf.b * it.tau - &sf.a * &it.x;
        let rz = &it.s + &sf.g * &it.x - &sf.h * it.tau;
        let cx = sf.c.dot(&it.x);
        let by = sf.b.dot(&it.y);
        let hz = sf.h.dot(&it.z);
        let rt = it.kappa + cx + by + hz;

        let pcost = cx / it.tau;
        let dcost = -(by + hz) / it.tau;
        let pres = (ry.norm() / norm_b).max(rz.norm() / norm_h) / it.tau;
        let dres = rx.norm() / norm_c / it.tau;
        let sz = it.s.dot(&it.z);
        let gap = (sz / (it.tau * it.tau)).max((pcost - dcost).abs());
        history.push(IterateRecord {
            iter,
            primal_value: pcost * cs,
            dual_value: dcost * cs,
            primal_residual: pres,
            dual_residual: dres,
            gap: gap * cs,
            tau: it.tau,
            kappa: it.kappa,
        });
        if ![pcost, dcost, pres, dres, gap].iter().all(|v| v.is_finite()) {
            return Ok(failed(SolveStatus::NumericalFailure, history, iter));
        }
        debug!(
            "ipm iter {iter}: pcost {:.6e} dcost {:.6e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} tau {:.2e} kappa {:.2e}",
            pcost * cs,
            dcost * cs,
            it.tau,
            it.kappa
        );

        if pres <= tol && dres <= tol && gap <= tol * pcost.abs().max(1.0) {
            return Ok(finish(problem, &sf, &it, SolveStatus::Optimal, history, iter));
        }
        if by + hz < 0.0 {
            let pinf = (sf.a.transpose() * &it.y + sf.g.transpose() * &it.z).norm() / (-(by + hz)) / norm_c;
            if pinf <= tol {
                return Ok(finish(problem, &sf, &it, SolveStatus::PrimalInfeasible, history, iter));
            }
        }
        if cx < 0.0 {
            let dinf = ((&sf.a * &it.x).norm() / norm_b).max((&sf.g * &it.x + &it.s).norm() / norm_h) / (-cx);
            if dinf <= tol {
                return Ok(finish(problem, &sf, &it, SolveStatus::DualInfeasible, history, iter));
            }
        }
        if iter == settings.max_iter {
            break;
        }

        let Some(scaling) = NtScaling::compute(layout, &it.s, &it.z) else {
            return Ok(failed(SolveStatus::NumericalFailure, history, iter));
        };
        let Some(kkt) = Kkt::factor(&sf, &scaling, settings.refine_steps) else {
            return Ok(failed(SolveStatus::NumericalFailure, history, iter));
        };
        let Some((x2, y2, z2)) = kkt.solve(&(-&sf.c), &sf.b, &sf.h) else {
            return Ok(failed(SolveStatus::NumericalFailure, history, iter));
        };
        let wz2 = scaling.apply_w(layout, &z2).norm_squared();
        let lambda = &scaling.lambda;
        let mu = (sz + it.tau * it.kappa) / (degree + 1.0);

        let direction = |eta: f64, ds_rhs: &DVector<f64>, dk_rhs: f64| -> Option<Direction> {
            let u = layout.jordan_div(lambda, ds_rhs);
            let wu = scaling.apply_w(layout, &u);
            let (x1, y1, z1) = kkt.solve(&(&rx * -eta), &(&ry * eta), &(&rz * -eta - &wu))?;
            let num = eta * rt + dk_rhs / it.tau + sf.c.dot(&x1) + sf.b.dot(&y1) + sf.h.dot(&z1);
            let dtau = num / (it.kappa / it.tau + wz2);
            let dx = x1 + &x2 * dtau;
            let dy = y1 + &y2 * dtau;
            let dz = z1 + &z2 * dtau;
            let ds = &rz * -eta - &sf.g * &dx + &sf.h * dtau;
            let dkappa = (dk_rhs - it.kappa * dtau) / it.tau;
            Some(Direction {
                dx,
                dy,
                dz,
                ds,
                dtau,
                dkappa,
            })
        };
        let max_step = |d: &Direction| -> f64 {
            let mut a = layout.max_step(&it.s, &d.ds).min(layout.max_step(&it.z, &d.dz));
            if d.dtau < 0.0 {
                a = a.min(-it.tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-it.kappa / d.dkappa);
            }
            a
        };

        let lam_sq = layout.jordan(lambda, lambda);
        let Some(aff) = direction(1.0, &(-&lam_sq), -it.tau * it.kappa) else {
            return Ok(failed(SolveStatus::NumericalFailure, history, iter));
        };
        let alpha_aff = max_step(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        let ws_aff = scaling.apply_winv(layout, &aff.ds);
        let wz_aff = scaling.apply_w(layout, &aff.dz);
        let ds_rhs = -&lam_sq - layout.jordan(&ws_aff, &wz_aff) + layout.identity() * (sigma * mu);
        let dk_rhs = -it.tau * it.kappa - aff.dtau * aff.dkappa + sigma * mu;
        let Some(dir) = direction(1.0 - sigma, &ds_rhs, dk_rhs) else {
            return Ok(failed(SolveStatus::NumericalFailure, history, iter));
        };
        let alpha = (settings.step_fraction * max_step(&dir)).min(1.0);
        if !(alpha > 1e-14) {
            debug!("ipm iter {iter}: step collapsed");
            return Ok(finish(problem, &sf, &it, SolveStatus::Stalled, history, iter));
        }
        it.x += &dir.dx * alpha;
        it.y += &dir.dy * alpha;
        it.z += &dir.dz * alpha;
        it.s += &dir.ds * alpha;
        it.tau += dir.dtau * alpha;
        it.kappa += dir.dkappa * alpha;
    }
    Ok(finish(problem, &sf, &it, SolveStatus::Stalled, history, settings.max_iter))
}

/// Maps the (scaled, embedded) iterate back to the caller's problem.
fn finish(
    problem: &ConicProblem,
    sf: &StandardForm,
    it: &Iterate,
    status: SolveStatus,
    history: Vec<IterateRecord>,
    iterations: usize,
) -> ConicSolution {
    let cs = sf.cost_scale;
    // Certificates are normalized rays; everything else is divided by tau.
    let (xs, ys) = match status {
        SolveStatus::PrimalInfeasible => {
            let denom = -(sf.b.dot(&it.y) + sf.h.dot(&it.z));
            (1.0, 1.0 / denom)
        }
        SolveStatus::DualInfeasible => (-1.0 / sf.c.dot(&it.x), 0.0),
        _ => (1.0 / it.tau, cs / it.tau),
    };
    let x = &it.x * xs;
    let y = &it.y * ys;
    let z = &it.z * ys;

    let mut dual = DualSolution::zeros(problem);
    dual.lambda = y.rows(0, sf.n_eq).iter().copied().collect();
    for (j, &row) in sf.pinned.iter().enumerate() {
        let w = y[sf.n_eq + j];
        dual.nu_hi[row] = w.max(0.0);
        dual.nu_lo[row] = (-w).max(0.0);
    }
    for (j, origin) in sf.orthant.iter().enumerate() {
        match *origin {
            RowOrigin::Upper(row) => dual.nu_hi[row] = z[j],
            RowOrigin::Lower(row) => dual.nu_lo[row] = z[j],
        }
    }
    for (i, (off, d)) in sf.layout.soc_blocks().enumerate() {
        dual.mu[i] = z[off];
        dual.u[i] = (1..d).map(|j| -z[off + j]).collect();
    }
    dual.dual_value = dual.objective(problem);

    let rec = history.last().copied();
    let primal_value = problem.cost.dot(&x);
    ConicSolution {
        status,
        z: x,
        primal_value,
        dual_value: dual.dual_value,
        dual,
        primal_residual: rec.map_or(f64::NAN, |r| r.primal_residual),
        dual_residual: rec.map_or(f64::NAN, |r| r.dual_residual),
        iterations,
        history,
    }
}
