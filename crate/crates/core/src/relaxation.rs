//! Second-order cone relaxation of the branch flow model in the reduced
//! variable `z = [Q; ell]`, with every other quantity an affine map of `z`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::branchflow::OperatingPoint;
use crate::conic::{ConicProblem, ConicSolution, ConicSolver, DualSolution, SocConstraint, SolveStatus};
use crate::error::{check_len, Error, Result};
use crate::network::RadialNetwork;

pub const DEFAULT_TOL_CONE: f64 = 1e-6;
pub const DEFAULT_TOL_MU: f64 = 1e-7;

/// Cone `||A z + b||_2 <= c'z + d` for one line; `b` and `d` depend on the
/// active injections.
#[derive(Debug, Clone, PartialEq)]
pub struct SocParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

/// Linear maps from `z = [Q; ell]` (length `2N`) and the active injections
/// `p` to line flows, voltages and reactive injections:
///
/// ```text
/// P = A_p z + b_p(p),   v = A_v z + b_v(p),   q = A_q z
/// ```
///
/// Entry `n - 1` of `Q` and `N + n - 1` of `ell` belong to line `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMaps {
    n: usize,
    v0: f64,
    r: Vec<f64>,
    parent: Vec<usize>,
    /// Buses in the subtree rooted at each non-root bus (itself included).
    subtree: Vec<Vec<usize>>,
    pub a_p: DMatrix<f64>,
    pub a_v: DMatrix<f64>,
    pub a_q: DMatrix<f64>,
    /// Loss cost `[0; r]`.
    pub r_z: DVector<f64>,
}

pub fn build_maps(network: &RadialNetwork) -> AffineMaps {
    let n = network.n();
    let m = 2 * n;
    let r = network.resistances();
    let parent: Vec<usize> = (1..=n).map(|b| network.parent(b).unwrap()).collect();

    let mut subtree: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for &bus in network.leaf_to_root() {
        let mut own = vec![bus];
        for &k in network.children(bus) {
            own.extend_from_slice(&subtree[k]);
        }
        subtree[bus] = own;
    }
    subtree.remove(0);

    let mut a_p = DMatrix::zeros(n, m);
    let mut a_q = DMatrix::zeros(n, m);
    for bus in 1..=n {
        for &k in &subtree[bus - 1] {
            a_p[(bus - 1, n + k - 1)] = r[k - 1];
        }
        for &k in network.children(bus) {
            a_q[(bus - 1, k - 1)] += 1.0;
        }
        a_q[(bus - 1, bus - 1)] -= 1.0;
        a_q[(bus - 1, n + bus - 1)] += network.line(bus).x;
    }

    let mut a_v = DMatrix::zeros(n, m);
    for bus in network.root_to_leaf().skip(1) {
        let i = bus - 1;
        let line = network.line(bus);
        let mut row = if parent[i] == 0 {
            DVector::zeros(m).transpose()
        } else {
            a_v.row(parent[i] - 1).into_owned()
        };
        row -= a_p.row(i) * (2.0 * line.r);
        row[n + i] += line.r * line.r + line.x * line.x;
        row[i] -= 2.0 * line.x;
        a_v.set_row(i, &row);
    }

    let mut r_z = DVector::zeros(m);
    for (i, &ri) in r.iter().enumerate() {
        r_z[n + i] = ri;
    }
    AffineMaps {
        n,
        v0: network.v0(),
        r,
        parent,
        subtree,
        a_p,
        a_v,
        a_q,
        r_z,
    }
}

impl AffineMaps {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q_index(&self, bus: usize) -> usize {
        bus - 1
    }

    pub fn ell_index(&self, bus: usize) -> usize {
        self.n + bus - 1
    }

    /// `b_p(p)[n] = -sum_{k in subtree(n)} p_k`.
    pub fn b_p(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| -self.subtree[i].iter().map(|&k| p[k - 1]).sum::<f64>())
    }

    /// `b_v(p)[n] = v0 - 2 sum_{k on path(n)} r_k b_p(p)[k]`.
    pub fn b_v(&self, p: &[f64]) -> DVector<f64> {
        let bp = self.b_p(p);
        let mut bv = DVector::zeros(self.n);
        // Parents precede children in id order only by accident, so walk up.
        for i in 0..self.n {
            let mut acc = self.v0;
            let mut bus = i + 1;
            while bus != 0 {
                acc -= 2.0 * self.r[bus - 1] * bp[bus - 1];
                bus = self.parent[bus - 1];
            }
            bv[i] = acc;
        }
        bv
    }

    /// Row of `A_v` for `bus` and the matching constant, with the root
    /// mapping to the zero row and `v0`.
    fn voltage_row(&self, bus: usize, bv: &DVector<f64>) -> (DVector<f64>, f64) {
        if bus == 0 {
            (DVector::zeros(2 * self.n), self.v0)
        } else {
            (self.a_v.row(bus - 1).transpose(), bv[bus - 1])
        }
    }

    /// One cone per line encoding `ell_n v_parent >= P_n^2 + Q_n^2` as
    /// `||[2 P_n, 2 Q_n, v_parent - ell_n]|| <= v_parent + ell_n`.
    pub fn soc_params(&self, p: &[f64]) -> Vec<SocParams> {
        let bp = self.b_p(p);
        let bv = self.b_v(p);
        let m = 2 * self.n;
        (0..self.n)
            .map(|i| {
                let (vrow, vconst) = self.voltage_row(self.parent[i], &bv);
                let mut a = DMatrix::zeros(3, m);
                a.set_row(0, &(self.a_p.row(i) * 2.0));
                a[(1, i)] = 2.0;
                let mut third = vrow.clone();
                third[self.n + i] -= 1.0;
                a.set_row(2, &third.transpose());
                let mut c = vrow;
                c[self.n + i] += 1.0;
                SocParams {
                    a,
                    b: DVector::from_vec(vec![2.0 * bp[i], 0.0, vconst]),
                    c,
                    d: vconst,
                }
            })
            .collect()
    }

    /// `(P, v, q)` for a given `z` and active injections.
    pub fn reconstruct(&self, z: &DVector<f64>, p: &[f64]) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        (
            &self.a_p * z + self.b_p(p),
            &self.a_v * z + self.b_v(p),
            &self.a_q * z,
        )
    }

    /// Full operating point implied by `z`; root injections are the sums of
    /// the root's outgoing flows.
    pub fn operating_point(&self, network: &RadialNetwork, z: &DVector<f64>, p: &[f64]) -> OperatingPoint {
        let (pf, v, _) = self.reconstruct(z, p);
        let qf: Vec<f64> = z.rows(0, self.n).iter().copied().collect();
        let p0 = network.children(0).iter().map(|&k| pf[k - 1]).sum();
        let q0 = network.children(0).iter().map(|&k| qf[k - 1]).sum();
        OperatingPoint {
            p0,
            q0,
            p_flow: pf.iter().copied().collect(),
            q_flow: qf,
            ell: z.rows(self.n, self.n).iter().copied().collect(),
            v: v.iter().copied().collect(),
        }
    }
}

/// Relaxed loss minimization at injections `(p, q)` as a [`ConicProblem`]
/// over `z`: equalities `A_q z = q`, the voltage box, and one cone per line.
pub fn primal_problem(maps: &AffineMaps, network: &RadialNetwork, p: &[f64], q: &[f64]) -> Result<ConicProblem> {
    let n = maps.n();
    check_len("active injections", n, p.len())?;
    check_len("reactive injections", n, q.len())?;
    check_len("network size", n, network.n())?;
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("injections must be finite".into()));
    }
    let mut prob = ConicProblem::new(maps.r_z.clone())
        .with_equalities(maps.a_q.clone(), DVector::from_column_slice(q))
        .with_box(
            maps.a_v.clone(),
            maps.b_v(p),
            DVector::from_vec(network.v_min()),
            DVector::from_vec(network.v_max()),
        );
    for sp in maps.soc_params(p) {
        prob = prob.with_cone(SocConstraint {
            f_mat: sp.a,
            f_vec: sp.b,
            h: sp.c,
            s: sp.d,
        });
    }
    Ok(prob)
}

/// Optimal relaxed point with its multipliers. `dual.lambda` are the
/// multipliers of `A_q z = q`; `-lambda` is a subgradient of the optimal
/// loss with respect to `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub z: DVector<f64>,
    pub value: f64,
    pub point: OperatingPoint,
    pub dual: DualSolution,
    pub iterations: usize,
}

/// Maps a finished solve to a result, separating infeasibility from solver
/// trouble.
pub(crate) fn check_status(sol: &ConicSolution) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::PrimalInfeasible => Err(Error::Infeasible),
        other => Err(Error::Solver(other)),
    }
}

pub fn solve_primal(
    maps: &AffineMaps,
    network: &RadialNetwork,
    p: &[f64],
    q: &[f64],
    solver: &dyn ConicSolver,
) -> Result<PrimalSolution> {
    let prob = primal_problem(maps, network, p, q)?;
    let sol = solver.solve(&prob)?;
    check_status(&sol)?;
    let point = maps.operating_point(network, &sol.z, p);
    Ok(PrimalSolution {
        value: sol.primal_value,
        point,
        z: sol.z,
        dual: sol.dual,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactnessReport {
    /// `ell_n - (P_n^2 + Q_n^2) / v_parent` per line.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    /// Every gap within `tol_cone`.
    pub exact: bool,
    pub min_mu: f64,
    /// Every cone multiplier at least `tol_mu`.
    pub dual_condition: bool,
}

pub fn exactness_certificate(
    maps: &AffineMaps,
    z: &DVector<f64>,
    p: &[f64],
    dual: &DualSolution,
    tol_cone: f64,
    tol_mu: f64,
) -> Result<ExactnessReport> {
    let n = maps.n();
    check_len("reduced variable", 2 * n, z.len())?;
    check_len("active injections", n, p.len())?;
    check_len("cone multipliers", n, dual.mu.len())?;
    let (pf, v, _) = maps.reconstruct(z, p);
    let gaps: Vec<f64> = (0..n)
        .map(|i| {
            let vp = match maps.parent[i] {
                0 => maps.v0,
                k => v[k - 1],
            };
            z[n + i] - (pf[i] * pf[i] + z[i] * z[i]) / vp
        })
        .collect();
    let max_gap = gaps.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let min_mu = dual.mu.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ExactnessReport {
        exact: max_gap <= tol_cone,
        max_gap,
        gaps,
        dual_condition: min_mu >= tol_mu,
        min_mu,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Maximize the relaxed loss, pushing every cone away from its boundary.
    #[default]
    MaxLoss,
    /// Maximize the smallest cone slack directly.
    MaxMinSlack,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub mode: ProbeMode,
    /// Smallest cone slack `c_n'z + d_n - ||A_n z + b_n||` at the probe point.
    pub margin: f64,
    pub slacks: Vec<f64>,
}

/// Looks for a point of the relaxed feasible set that is strictly inside
/// every line cone; a positive margin certifies strict feasibility.
pub fn strict_feasibility_probe(
    maps: &AffineMaps,
    network: &RadialNetwork,
    p: &[f64],
    q: &[f64],
    solver: &dyn ConicSolver,
    mode: ProbeMode,
) -> Result<ProbeReport> {
    let base = primal_problem(maps, network, p, q)?;
    let m = base.num_vars();
    let z = match mode {
        ProbeMode::MaxLoss => {
            let mut prob = base.clone();
            prob.cost = -&maps.r_z;
            let sol = solver.solve(&prob)?;
            check_status(&sol)?;
            sol.z
        }
        ProbeMode::MaxMinSlack => {
            // Variables [z; t]: max t s.t. ||A z + b|| <= c'z + d - t.
            let mut cost = DVector::zeros(m + 1);
            cost[m] = -1.0;
            let pad = |mat: &DMatrix<f64>| mat.clone().insert_column(m, 0.0);
            let mut prob = ConicProblem::new(cost)
                .with_equalities(pad(&base.eq_matrix), base.eq_rhs.clone())
                .with_box(
                    pad(&base.box_matrix),
                    base.box_offset.clone(),
                    base.box_lo.clone(),
                    base.box_hi.clone(),
                );
            for cone in &base.cones {
                let mut h = cone.h.clone().insert_row(m, 0.0);
                h[m] = -1.0;
                prob = prob.with_cone(SocConstraint {
                    f_mat: pad(&cone.f_mat),
                    f_vec: cone.f_vec.clone(),
                    h,
                    s: cone.s,
                });
            }
            let sol = solver.solve(&prob)?;
            check_status(&sol)?;
            sol.z.rows(0, m).into_owned()
        }
    };
    let slacks: Vec<f64> = base.cones.iter().map(|c| c.slack(&z)).collect();
    let margin = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ProbeReport { mode, margin, slacks })
}

/// Solves the dual of the relaxed problem as its own conic program, over
/// `w = [lambda; (u_n, mu_n) per line; nu_lo; nu_hi]`. Used to cross-check
/// the multipliers extracted from the primal solve.
pub fn solve_dual_explicit(
    maps: &AffineMaps,
    network: &RadialNetwork,
    p: &[f64],
    q: &[f64],
    solver: &dyn ConicSolver,
) -> Result<DualSolution> {
    let primal = primal_problem(maps, network, p, q)?;
    let n = maps.n();
    let m = 2 * n;
    let lam0 = 0;
    let cone0 = n;
    let nu_lo0 = cone0 + 4 * n;
    let nu_hi0 = nu_lo0 + n;
    let dim = nu_hi0 + n;

    // Stationarity: A_q'lambda + A_v'(nu_hi - nu_lo) + sum(A_n'u_n - mu_n c_n) = -r_z.
    let mut stat = DMatrix::zeros(m, dim);
    stat.view_mut((0, lam0), (m, n)).copy_from(&maps.a_q.transpose());
    stat.view_mut((0, nu_hi0), (m, n)).copy_from(&maps.a_v.transpose());
    stat.view_mut((0, nu_lo0), (m, n)).copy_from(&(-maps.a_v.transpose()));
    for (i, cone) in primal.cones.iter().enumerate() {
        let off = cone0 + 4 * i;
        stat.view_mut((0, off), (m, 3)).copy_from(&cone.f_mat.transpose());
        stat.column_mut(off + 3).copy_from(&(-&cone.h));
    }

    // Minimize the negated dual objective.
    let mut cost = DVector::zeros(dim);
    for i in 0..n {
        cost[lam0 + i] = q[i];
        let off = cone0 + 4 * i;
        let cone = &primal.cones[i];
        for j in 0..3 {
            cost[off + j] = -cone.f_vec[j];
        }
        cost[off + 3] = cone.s;
        cost[nu_hi0 + i] = -(primal.box_offset[i] - primal.box_hi[i]);
        cost[nu_lo0 + i] = -(primal.box_lo[i] - primal.box_offset[i]);
    }

    let mut nonneg = DMatrix::zeros(2 * n, dim);
    for i in 0..2 * n {
        nonneg[(i, nu_lo0 + i)] = 1.0;
    }
    let mut prob = ConicProblem::new(cost)
        .with_equalities(stat, -&maps.r_z)
        .with_box(
            nonneg,
            DVector::zeros(2 * n),
            DVector::zeros(2 * n),
            DVector::from_element(2 * n, f64::INFINITY),
        );
    for i in 0..n {
        let off = cone0 + 4 * i;
        let mut f = DMatrix::zeros(3, dim);
        for j in 0..3 {
            f[(j, off + j)] = 1.0;
        }
        let mut h = DVector::zeros(dim);
        h[off + 3] = 1.0;
        prob = prob.with_cone(SocConstraint {
            f_mat: f,
            f_vec: DVector::zeros(3),
            h,
            s: 0.0,
        });
    }
    let sol = solver.solve(&prob)?;
    match sol.status {
        SolveStatus::Optimal => {}
        // An unbounded dual means the primal is infeasible.
        SolveStatus::DualInfeasible => return Err(Error::Infeasible),
        other => return Err(Error::Solver(other)),
    }
    let w = &sol.z;
    let mut dual = DualSolution::zeros(&primal);
    dual.lambda = w.rows(lam0, n).iter().copied().collect();
    for i in 0..n {
        let off = cone0 + 4 * i;
        dual.u[i] = w.rows(off, 3).iter().copied().collect();
        dual.mu[i] = w[off + 3];
    }
    dual.nu_lo = w.rows(nu_lo0, n).iter().copied().collect();
    dual.nu_hi = w.rows(nu_hi0, n).iter().copied().collect();
    dual.dual_value = dual.objective(&primal);
    Ok(dual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, Bus, BusKind, Line};

    #[test]
    fn two_bus_maps_by_hand() {
        let net = build_network(
            vec![
                Bus::new(0, None, BusKind::Substation),
                Bus::new(1, Some(0), BusKind::Load),
            ],
            vec![Line { child: 1, r: 0.01, x: 0.02 }],
            1.0,
            1000.0,
        )
        .unwrap();
        let maps = build_maps(&net);
        assert_eq!(maps.a_q.as_slice(), &[-1.0, 0.02]);
        assert_eq!(maps.b_p(&[0.3]).as_slice(), &[-0.3]);
        assert_eq!(maps.a_p.as_slice(), &[0.0, 0.01]);
        let z = DVector::from_vec(vec![0.0, 0.0]);
        let (pf, v, q) = maps.reconstruct(&z, &[0.0]);
        assert_eq!((pf[0], v[0], q[0]), (0.0, 1.0, 0.0));
    }
}
