//! Algebra of the product cone `R_+^l x Q^{q_1} x ... x Q^{q_k}` and its
//! Nesterov-Todd scaling.

use nalgebra::{DMatrix, DVector};

/// Layout of the product cone: `nonneg` orthant coordinates first, then one
/// block per second-order cone (dimension includes the scalar head).
#[derive(Debug, Clone, PartialEq)]
pub struct ConeLayout {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl ConeLayout {
    pub fn dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree: one per orthant coordinate and per Lorentz cone.
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    /// `(offset, dim)` of each second-order block.
    pub fn soc_blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut off = self.nonneg;
        self.soc.iter().map(move |&d| {
            let start = off;
            off += d;
            (start, d)
        })
    }

    pub fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim());
        for i in 0..self.nonneg {
            e[i] = 1.0;
        }
        for (off, _) in self.soc_blocks() {
            e[off] = 1.0;
        }
        e
    }

    /// Jordan product `u o v`.
    pub fn jordan(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for i in 0..self.nonneg {
            out[i] = u[i] * v[i];
        }
        for (off, d) in self.soc_blocks() {
            let u0 = u[off];
            let v0 = v[off];
            out[off] = (0..d).map(|j| u[off + j] * v[off + j]).sum();
            for j in 1..d {
                out[off + j] = u0 * v[off + j] + v0 * u[off + j];
            }
        }
        out
    }

    /// Solves `lambda o x = d` for `x`; `lambda` must be interior.
    pub fn jordan_div(&self, lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for i in 0..self.nonneg {
            out[i] = d[i] / lambda[i];
        }
        for (off, dim) in self.soc_blocks() {
            let l0 = lambda[off];
            let tail_dot: f64 = (1..dim).map(|j| lambda[off + j] * d[off + j]).sum();
            let tail_sq: f64 = (1..dim).map(|j| lambda[off + j].powi(2)).sum();
            let det = l0 * l0 - tail_sq;
            let x0 = (l0 * d[off] - tail_dot) / det;
            out[off] = x0;
            for j in 1..dim {
                out[off + j] = (d[off + j] - x0 * lambda[off + j]) / l0;
            }
        }
        out
    }

    /// Smallest `a` such that `x + a e` lies in the closed cone; negative when
    /// `x` is interior.
    pub fn interior_shift(&self, x: &DVector<f64>) -> f64 {
        let mut a = f64::NEG_INFINITY;
        for i in 0..self.nonneg {
            a = a.max(-x[i]);
        }
        for (off, d) in self.soc_blocks() {
            let tail = (1..d).map(|j| x[off + j].powi(2)).sum::<f64>().sqrt();
            a = a.max(tail - x[off]);
        }
        a
    }

    pub fn is_interior(&self, x: &DVector<f64>) -> bool {
        self.interior_shift(x) < 0.0
    }

    /// Largest step `a` with `x + a dx` in the cone (`x` interior); infinite
    /// when the ray never leaves.
    pub fn max_step(&self, x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.nonneg {
            if dx[i] < 0.0 {
                alpha = alpha.min(-x[i] / dx[i]);
            }
        }
        for (off, d) in self.soc_blocks() {
            alpha = alpha.min(soc_max_step(&x.as_slice()[off..off + d], &dx.as_slice()[off..off + d]));
        }
        alpha
    }
}

fn jdot(u: &[f64], v: &[f64]) -> f64 {
    u[0] * v[0] - u[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>()
}

/// First positive root of `(x + a d)' J (x + a d) = 0`.
fn soc_max_step(x: &[f64], d: &[f64]) -> f64 {
    let a = jdot(d, d);
    let b = jdot(x, d);
    let c = jdot(x, x);
    let scale = a.abs().max(b.abs()).max(c.abs());
    if a.abs() <= 1e-14 * scale {
        // Linear: 2 b t + c = 0.
        return if b < 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let q = -(b + b.signum() * disc.sqrt());
    let roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
    let mut best = f64::INFINITY;
    for r in roots {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    // A ray heading into the cone can only leave through the far sheet when
    // the head turns negative; the first positive root covers both cases.
    best
}

/// Nesterov-Todd scaling `W` with `W z = W^{-1} s = lambda`. `W` is symmetric.
#[derive(Debug, Clone)]
pub struct NtScaling {
    /// Diagonal of `W` on the orthant.
    pub diag: Vec<f64>,
    /// `(W, W^{-1})` for each Lorentz block.
    pub blocks: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    pub lambda: DVector<f64>,
}

impl NtScaling {
    pub fn identity(layout: &ConeLayout) -> Self {
        NtScaling {
            diag: vec![1.0; layout.nonneg],
            blocks: layout
                .soc
                .iter()
                .map(|&d| (DMatrix::identity(d, d), DMatrix::identity(d, d)))
                .collect(),
            lambda: layout.identity(),
        }
    }

    /// Returns `None` when `s` or `z` is not strictly interior.
    pub fn compute(layout: &ConeLayout, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut diag = Vec::with_capacity(layout.nonneg);
        for i in 0..layout.nonneg {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return None;
            }
            diag.push((s[i] / z[i]).sqrt());
        }
        let mut blocks = Vec::with_capacity(layout.soc.len());
        for (off, d) in layout.soc_blocks() {
            let sb = &s.as_slice()[off..off + d];
            let zb = &z.as_slice()[off..off + d];
            let sj = jdot(sb, sb);
            let zj = jdot(zb, zb);
            if !(sj > 0.0 && zj > 0.0 && sb[0] > 0.0 && zb[0] > 0.0) {
                return None;
            }
            let sn = sj.sqrt();
            let zn = zj.sqrt();
            let beta = (sn / zn).sqrt();
            let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
            let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
            let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
            let gamma2 = 2.0 * (1.0 + dot);
            if !(gamma2 > 0.0) {
                return None;
            }
            let g = gamma2.sqrt();
            // wbar = (sbar + J zbar) / sqrt(2 (1 + sbar'zbar)) has wbar'J wbar = 1;
            // W = beta (2 v v' - J) with v = (wbar + e) / sqrt(2 (wbar_0 + 1)).
            let mut w = DVector::zeros(d);
            w[0] = (sbar[0] + zbar[0]) / g;
            for j in 1..d {
                w[j] = (sbar[j] - zbar[j]) / g;
            }
            let mut v = w.clone();
            v[0] += 1.0;
            v /= (2.0 * (w[0] + 1.0)).sqrt();
            let mut jv = v.clone();
            for j in 1..d {
                jv[j] = -jv[j];
            }
            let mut jmat = DMatrix::identity(d, d);
            for j in 1..d {
                jmat[(j, j)] = -1.0;
            }
            let wm = (&v * v.transpose() * 2.0 - &jmat) * beta;
            let winv = (&jv * jv.transpose() * 2.0 - &jmat) / beta;
            blocks.push((wm, winv));
        }
        let mut scaling = NtScaling {
            diag,
            blocks,
            lambda: DVector::zeros(layout.dim()),
        };
        scaling.lambda = scaling.apply_w(layout, z);
        Some(scaling)
    }

    pub fn apply_w(&self, layout: &ConeLayout, v: &DVector<f64>) -> DVector<f64> {
        self.apply(layout, v, false)
    }

    pub fn apply_winv(&self, layout: &ConeLayout, v: &DVector<f64>) -> DVector<f64> {
        self.apply(layout, v, true)
    }

    fn apply(&self, layout: &ConeLayout, v: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(layout.dim());
        for i in 0..layout.nonneg {
            out[i] = if inverse { v[i] / self.diag[i] } else { v[i] * self.diag[i] };
        }
        for ((off, d), (w, winv)) in layout.soc_blocks().zip(&self.blocks) {
            let m = if inverse { winv } else { w };
            let seg = m * v.rows(off, d);
            out.rows_mut(off, d).copy_from(&seg);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> ConeLayout {
        ConeLayout {
            nonneg: 2,
            soc: vec![4, 2],
        }
    }

    #[test]
    fn nt_scaling_maps_z_and_s_to_lambda() {
        let l = layout();
        let s = DVector::from_vec(vec![0.5, 2.0, 3.0, 0.4, -1.2, 0.7, 1.0, 0.3]);
        let z = DVector::from_vec(vec![1.5, 0.2, 2.0, -0.9, 0.5, 0.1, 0.8, -0.6]);
        let w = NtScaling::compute(&l, &s, &z).unwrap();
        let lam1 = w.apply_w(&l, &z);
        let lam2 = w.apply_winv(&l, &s);
        assert!((lam1 - lam2).amax() < 1e-12);
        // W W^{-1} = I on every block.
        for (wm, winv) in &w.blocks {
            let eye = wm * winv;
            assert!((eye - DMatrix::identity(wm.nrows(), wm.nrows())).amax() < 1e-12);
            assert!((wm - wm.transpose()).amax() < 1e-14);
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let l = layout();
        let lam = DVector::from_vec(vec![0.7, 1.1, 2.0, 0.3, 0.5, -0.4, 1.0, 0.2]);
        let x = DVector::from_vec(vec![0.3, -2.0, 0.1, 0.9, -1.0, 2.0, -0.5, 0.4]);
        let d = l.jordan(&lam, &x);
        assert!((l.jordan_div(&lam, &d) - x).amax() < 1e-12);
    }

    #[test]
    fn max_step_hits_boundary() {
        let l = ConeLayout {
            nonneg: 0,
            soc: vec![3],
        };
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let dx = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert!((l.max_step(&x, &dx) - 1.0).abs() < 1e-14);
        let inward = DVector::from_vec(vec![1.0, 0.5, 0.0]);
        assert_eq!(l.max_step(&x, &inward), f64::INFINITY);
        let shrink = DVector::from_vec(vec![-1.0, 0.0, 0.0]);
        assert!((l.max_step(&x, &shrink) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn interior_shift_sign() {
        let l = layout();
        assert!(l.is_interior(&l.identity()));
        let mut x = l.identity();
        x[3] = 2.0;
        assert!(!l.is_interior(&x));
        assert!((l.interior_shift(&x) - 1.0).abs() < 1e-15);
    }
}
