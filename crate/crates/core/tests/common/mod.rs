#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use voltvar::conic::{ConicProblem, DualSolution, SocConstraint};

/// Random problem with a known strictly feasible primal point and a strictly
/// feasible dual point, so strong duality holds.
pub fn random_problem(
    seed: &[f64],
    m: usize,
    k: usize,
    nbox: usize,
    ncone: usize,
) -> (ConicProblem, DVector<f64>, DualSolution) {
    let mut it = seed.iter().copied().cycle();
    let mut next = move || it.next().unwrap();
    let z0 = DVector::from_fn(m, |_, _| next());
    let e = DMatrix::from_fn(k, m, |_, _| next());
    let b = DMatrix::from_fn(nbox, m, |_, _| next());
    let off = DVector::from_fn(nbox, |_, _| 0.1 * next());
    let bz = &b * &z0 + &off;
    let lo = DVector::from_fn(nbox, |i, _| bz[i] - 0.5 - next().abs());
    let hi = DVector::from_fn(nbox, |i, _| bz[i] + 0.5 + next().abs());
    let mut cones = Vec::new();
    for _ in 0..ncone {
        let f = DMatrix::from_fn(3, m, |_, _| next());
        let fv = DVector::from_fn(3, |_, _| next());
        let h = DVector::from_fn(m, |_, _| next());
        let norm = (&f * &z0 + &fv).norm();
        let s = norm - h.dot(&z0) + 0.5 + next().abs();
        cones.push(SocConstraint { f_mat: f, f_vec: fv, h, s });
    }
    // Dual interior point determines the cost.
    let lam = DVector::from_fn(k, |_, _| next());
    let nu_hi = DVector::from_fn(nbox, |_, _| 0.2 + next().abs());
    let nu_lo = DVector::from_fn(nbox, |_, _| 0.2 + next().abs());
    let mut cost = -(e.transpose() * &lam) - b.transpose() * (&nu_hi - &nu_lo);
    let mut us = Vec::new();
    let mut mus = Vec::new();
    for c in &cones {
        let u = DVector::from_fn(3, |_, _| next());
        let mu = u.norm() + 0.2 + next().abs();
        cost -= c.f_mat.transpose() * &u - &c.h * mu;
        us.push(u.iter().copied().collect());
        mus.push(mu);
    }
    let e_rhs = &e * &z0;
    let mut prob = ConicProblem::new(cost)
        .with_equalities(e, e_rhs)
        .with_box(b, off, lo, hi);
    for c in cones {
        prob = prob.with_cone(c);
    }
    let dual = DualSolution {
        lambda: lam.iter().copied().collect(),
        u: us,
        mu: mus,
        nu_lo: nu_lo.iter().copied().collect(),
        nu_hi: nu_hi.iter().copied().collect(),
        dual_value: 0.0,
    };
    (prob, z0, dual)
}


/// Tree with `parents[i]` the parent of bus `i + 1` (must be `<= i`); every
/// non-root bus is a plain load with zero static demand.
pub fn random_tree(parents: &[usize], r: &[f64], x: &[f64]) -> voltvar::network::RadialNetwork {
    use voltvar::network::{build_network, Bus, BusKind, Line};
    let mut buses = vec![Bus::new(0, None, BusKind::Substation)];
    let mut lines = Vec::new();
    for (i, &par) in parents.iter().enumerate() {
        buses.push(Bus::new(i + 1, Some(par.min(i)), BusKind::Load));
        lines.push(Line {
            child: i + 1,
            r: r[i],
            x: x[i],
        });
    }
    build_network(buses, lines, 1.0, 1000.0).unwrap()
}

pub fn two_bus(v_min: f64, v_max: f64) -> voltvar::network::RadialNetwork {
    use voltvar::network::{build_network, Bus, BusKind, Line};
    build_network(
        vec![
            Bus::new(0, None, BusKind::Substation),
            Bus::new(1, Some(0), BusKind::Load).with_voltage_limits(v_min, v_max),
        ],
        vec![Line { child: 1, r: 0.01, x: 0.02 }],
        1.0,
        1000.0,
    )
    .unwrap()
}

/// Smaller root of the two-bus current quadratic.
pub fn two_bus_ell(r: f64, x: f64, p: f64, q: f64, v0: f64) -> f64 {
    let a = r * r + x * x;
    let b = -(2.0 * (r * p + x * q) + v0);
    let c = p * p + q * q;
    (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
}
