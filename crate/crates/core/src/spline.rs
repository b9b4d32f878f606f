//! Clamped uniform cubic B-splines over (x, y, z, yaw) control points.
//!
//! Knot vector for `n` control points starting at `t0` with span `dt`:
//! four copies of `t0`, the interior knots `t0 + k·dt`, and four copies of
//! `t0 + (n−3)·dt`. Yaw is stored unwrapped.

use nalgebra::{DMatrix, Vector3, Vector4};

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;

/// Cox–de Boor recursion for N_{i,k}(t).
///
/// The last non-empty span includes its right endpoint so that a clamped
/// spline interpolates its final control point.
pub fn basis(i: usize, k: usize, t: f64, knots: &[f64]) -> Result<f64> {
    if knots.len() < 2 * (k + 1) {
        return Err(Error::invalid("knot vector too short for the requested degree"));
    }
    let n_ctrl = knots.len() - k - 1;
    if i >= n_ctrl {
        return Err(Error::invalid(format!("basis index {i} out of range ({n_ctrl} functions)")));
    }
    let (lo, hi) = (knots[k], knots[n_ctrl]);
    if !(t >= lo && t <= hi) {
        return Err(Error::invalid(format!("t = {t} outside spline domain [{lo}, {hi}]")));
    }
    Ok(cox_de_boor(i, k, t, knots, hi))
}

fn cox_de_boor(i: usize, k: usize, t: f64, knots: &[f64], t_end: f64) -> f64 {
    if k == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let inside = a <= t && t < b;
        let at_end = t == t_end && a < b && b == t_end;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut value = 0.0;
    let d1 = knots[i + k] - knots[i];
    if d1 > 0.0 {
        value += (t - knots[i]) / d1 * cox_de_boor(i, k - 1, t, knots, t_end);
    }
    let d2 = knots[i + k + 1] - knots[i + 1];
    if d2 > 0.0 {
        value += (knots[i + k + 1] - t) / d2 * cox_de_boor(i + 1, k - 1, t, knots, t_end);
    }
    value
}

/// Position, yaw and their derivatives at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub velocity: Vector4<f64>,
    pub acceleration: Vector4<f64>,
    pub jerk: Vector4<f64>,
}

/// Anything that can report a flat-output state over a time interval.
pub trait Trajectory {
    fn domain(&self) -> (f64, f64);
    fn sample(&self, t: f64) -> Result<TrajectorySample>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineTrajectory {
    control_points: Vec<Vector4<f64>>,
    t_start: f64,
    dt: f64,
    knots: Vec<f64>,
}

impl BSplineTrajectory {
    pub fn build_clamped(control_points: Vec<Vector4<f64>>, t_start: f64, dt: f64) -> Result<Self> {
        if control_points.len() < DEGREE + 1 {
            return Err(Error::invalid(format!(
                "need at least {} control points, got {}",
                DEGREE + 1,
                control_points.len()
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() || !t_start.is_finite() {
            return Err(Error::invalid(format!("knot span must be positive, got {dt}")));
        }
        if control_points.iter().any(|q| q.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("control points must be finite"));
        }
        let n = control_points.len();
        let interior = n - DEGREE;
        let mut knots = Vec::with_capacity(n + DEGREE + 1);
        knots.extend(std::iter::repeat_n(t_start, DEGREE));
        for k in 0..=interior {
            knots.push(t_start + k as f64 * dt);
        }
        let t_end = t_start + interior as f64 * dt;
        knots.extend(std::iter::repeat_n(t_end, DEGREE));
        Ok(Self { control_points, t_start, dt, knots })
    }

    pub fn control_points(&self) -> &[Vector4<f64>] {
        &self.control_points
    }

    /// Replaces the control points, keeping the knot vector.
    pub fn set_control_points(&mut self, cps: &[Vector4<f64>]) -> Result<()> {
        if cps.len() != self.control_points.len() {
            return Err(Error::invalid("control point count must not change"));
        }
        self.control_points.copy_from_slice(cps);
        Ok(())
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn t_end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }
    pub fn n_ctrl(&self) -> usize {
        self.control_points.len()
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if t >= self.t_start && t <= self.t_end() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "t = {t} outside trajectory domain [{}, {}]",
                self.t_start,
                self.t_end()
            )))
        }
    }

    /// Index `s` of the knot span [knots[s], knots[s+1]) containing t.
    pub fn span_index(&self, t: f64) -> Result<usize> {
        self.check_domain(t)?;
        let n = self.n_ctrl();
        let k = ((t - self.t_start) / self.dt).floor() as usize;
        Ok((k + DEGREE).min(n - 1))
    }

    /// Greville abscissae: the parameter values associated with each control point.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.n_ctrl())
            .map(|i| {
                let g = self.knots[i + 1..=i + DEGREE].iter().sum::<f64>() / DEGREE as f64;
                g.clamp(self.t_start(), self.t_end())
            })
            .collect()
    }

    /// Weights w_i with d^order q / dt^order (t) = Σ w_i q_i.
    ///
    /// The same weights apply to every coordinate, so they are also the
    /// partial derivatives of the evaluated quantity with respect to each
    /// control-point coordinate.
    pub fn control_weights(&self, t: f64, order: usize) -> Result<Vec<f64>> {
        let span = self.span_index(t)?;
        self.weights_in_span(t, span, order)
    }

    fn weights_in_span(&self, t: f64, span: usize, order: usize) -> Result<Vec<f64>> {
        if order > DEGREE {
            return Err(Error::invalid(format!("derivative order {order} exceeds degree {DEGREE}")));
        }
        let n = self.n_ctrl();
        let p = DEGREE - order;
        // Knots of the order-th derivative spline: drop `order` from each end.
        let dk = &self.knots[order..self.knots.len() - order];
        let local = basis_funs(dk, p, t, span - order);

        // Differencing matrix rows for the derivative control points touched
        // by `local`, each expressed over the original control points.
        let mut weights = vec![0.0; n];
        let first = span - DEGREE;
        for (a, nb) in local.iter().enumerate() {
            if *nb == 0.0 {
                continue;
            }
            let j = first + a;
            let row = self.difference_row(j, order);
            for (i, w) in row {
                weights[i] += nb * w;
            }
        }
        Ok(weights)
    }

    /// Coefficients of derivative control point `j` of the given order.
    fn difference_row(&self, j: usize, order: usize) -> Vec<(usize, f64)> {
        let mut row: Vec<(usize, f64)> = (0..=order).map(|m| (j + m, 0.0)).collect();
        row[0].1 = 1.0;
        if order == 0 {
            return row;
        }
        // Start from unit vectors and apply the recursion
        // Q^{r}_i = (p−r+1)(Q^{r−1}_{i+1} − Q^{r−1}_i) / (t_{i+p+1} − t_{i+r}).
        let mut layer: Vec<Vec<f64>> = (0..=order)
            .map(|m| {
                let mut v = vec![0.0; order + 1];
                v[m] = 1.0;
                v
            })
            .collect();
        for r in 1..=order {
            let deg = (DEGREE - r + 1) as f64;
            let mut next = Vec::with_capacity(layer.len() - 1);
            for m in 0..layer.len() - 1 {
                let i = j + m;
                let denom = self.knots[i + DEGREE + 1] - self.knots[i + r];
                let scale = if denom > 0.0 { deg / denom } else { 0.0 };
                let v: Vec<f64> = layer[m + 1].iter().zip(&layer[m]).map(|(a, b)| scale * (a - b)).collect();
                next.push(v);
            }
            layer = next;
        }
        for (m, entry) in row.iter_mut().enumerate() {
            entry.1 = layer[0][m];
        }
        row
    }

    fn eval_in_span(&self, t: f64, span: usize, order: usize) -> Result<Vector4<f64>> {
        let w = self.weights_in_span(t, span, order)?;
        Ok(w.iter().zip(&self.control_points).fold(Vector4::zeros(), |acc, (wi, q)| acc + q * *wi))
    }

    pub fn eval(&self, t: f64) -> Result<Vector4<f64>> {
        self.eval_derivative(t, 0)
    }

    pub fn eval_derivative(&self, t: f64, order: usize) -> Result<Vector4<f64>> {
        if order > DEGREE {
            return Err(Error::invalid(format!("derivative order {order} exceeds degree {DEGREE}")));
        }
        let span = self.span_index(t)?;
        self.eval_in_span(t, span, order)
    }

    /// ∂(d^order q/dt^order)/∂(control point scalars), a 4 × 4n matrix with
    /// columns ordered (q_0x, q_0y, q_0z, q_0ψ, q_1x, ...).
    pub fn d_eval_d_control(&self, t: f64, order: usize) -> Result<DMatrix<f64>> {
        let w = self.control_weights(t, order)?;
        let n = self.n_ctrl();
        let mut m = DMatrix::zeros(4, 4 * n);
        for (i, wi) in w.iter().enumerate() {
            for c in 0..4 {
                m[(c, 4 * i + c)] = *wi;
            }
        }
        Ok(m)
    }
}

impl Trajectory for BSplineTrajectory {
    fn domain(&self) -> (f64, f64) {
        (self.t_start, self.t_end())
    }

    fn sample(&self, t: f64) -> Result<TrajectorySample> {
        let span = self.span_index(t)?;
        let q = self.eval_in_span(t, span, 0)?;
        Ok(TrajectorySample {
            t,
            position: q.xyz(),
            yaw: q[3],
            velocity: self.eval_in_span(t, span, 1)?,
            acceleration: self.eval_in_span(t, span, 2)?,
            jerk: self.eval_in_span(t, span, 3)?,
        })
    }
}

/// Non-zero basis functions N_{span−p..=span, p}(t) by the triangular
/// Cox–de Boor scheme.
fn basis_funs(knots: &[f64], p: usize, t: f64, span: usize) -> Vec<f64> {
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(cps: &[[f64; 4]], t0: f64, dt: f64) -> BSplineTrajectory {
        BSplineTrajectory::build_clamped(cps.iter().map(|c| Vector4::from_column_slice(c)).collect(), t0, dt)
            .unwrap()
    }

    /// de Boor's algorithm, written independently of the weight machinery.
    fn de_boor(knots: &[f64], cps: &[Vector4<f64>], t: f64) -> Vector4<f64> {
        let p = DEGREE;
        let n = cps.len();
        let mut s = p;
        while s < n - 1 && t >= knots[s + 1] {
            s += 1;
        }
        let mut d: Vec<Vector4<f64>> = (0..=p).map(|j| cps[j + s - p]).collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let i = j + s - p;
                let denom = knots[i + p + 1 - r] - knots[i];
                let a = if denom > 0.0 { (t - knots[i]) / denom } else { 0.0 };
                d[j] = d[j - 1] * (1.0 - a) + d[j] * a;
            }
        }
        d[p]
    }

    #[test]
    fn knot_vector_for_six_points() {
        let t = traj(&[[0.0; 4]; 6], 1.0, 0.5);
        assert_eq!(t.knots(), &[1.0, 1.0, 1.0, 1.0, 1.5, 2.0, 2.5, 2.5, 2.5, 2.5]);
        assert!((t.t_end() - t.t_start() - 3.0 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn build_rejects_bad_input() {
        let few = vec![Vector4::zeros(); 3];
        assert!(BSplineTrajectory::build_clamped(few, 0.0, 1.0).is_err());
        assert!(BSplineTrajectory::build_clamped(vec![Vector4::zeros(); 5], 0.0, 0.0).is_err());
        assert!(BSplineTrajectory::build_clamped(vec![Vector4::zeros(); 5], 0.0, -1.0).is_err());
    }

    #[test]
    fn clamped_basis_at_start() {
        let t = traj(&[[0.0; 4]; 6], 0.0, 1.0);
        assert_eq!(basis(0, 3, 0.0, t.knots()).unwrap(), 1.0);
        for i in 1..6 {
            assert_eq!(basis(i, 3, 0.0, t.knots()).unwrap(), 0.0);
        }
        assert_eq!(basis(5, 3, 3.0, t.knots()).unwrap(), 1.0);
        assert!(basis(0, 3, 3.5, t.knots()).is_err());
    }

    #[test]
    fn single_segment_is_cubic_bezier() {
        let cps = [[0.0, 0.0, 0.0, 0.0], [1.0, 2.0, 0.0, 0.5], [3.0, 2.0, 1.0, 0.2], [4.0, 0.0, 1.0, -1.0]];
        let t = traj(&cps, 0.0, 2.0);
        let u: f64 = 0.5;
        let b = [(1.0 - u).powi(3), 3.0 * u * (1.0 - u).powi(2), 3.0 * u * u * (1.0 - u), u.powi(3)];
        let expected = cps.iter().zip(b).fold(Vector4::zeros(), |acc, (c, w)| acc + Vector4::from_column_slice(c) * w);
        assert!((t.eval(1.0).unwrap() - expected).norm() < 1e-14);
    }

    #[test]
    fn constant_and_collinear() {
        let c = [1.0, -2.0, 3.0, 0.4];
        let t = traj(&[c; 7], 0.0, 0.3);
        for k in 0..=40 {
            let tt = k as f64 * 1.2 / 40.0;
            assert!((t.eval(tt).unwrap() - Vector4::from_column_slice(&c)).norm() < 1e-14);
            for order in 1..=3 {
                assert!(t.eval_derivative(tt, order).unwrap().norm() < 1e-12);
            }
        }
        // Collinear control points give a curve on the same line.
        let dir = Vector4::new(1.0, 2.0, -0.5, 0.3);
        let cps: Vec<[f64; 4]> = (0..6).map(|i| (dir * i as f64).into()).collect();
        let t = traj(&cps, 0.0, 1.0);
        for k in 1..30 {
            let p = t.eval(k as f64 * 0.1).unwrap();
            let proj = dir * (p.dot(&dir) / dir.norm_squared());
            assert!((p - proj).norm() < 1e-9);
        }
    }

    #[test]
    fn third_derivative_piecewise_constant() {
        let cps = [[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 2.0, 1.0], [2.0, 3.0, 1.0, 0.0], [0.0, 1.0, -1.0, 2.0], [4.0, 4.0, 0.0, 1.0]];
        let t = traj(&cps, 0.0, 1.0);
        let a = t.eval_derivative(1.1, 3).unwrap();
        let b = t.eval_derivative(1.9, 3).unwrap();
        assert!((a - b).norm() < 1e-12);
        assert!(t.eval_derivative(1.0, 4).is_err());
    }

    #[test]
    fn matches_de_boor_oracle() {
        let cps = [[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 2.0, 1.0], [2.0, 3.0, 1.0, 0.0], [0.0, 1.0, -1.0, 2.0], [4.0, 4.0, 0.0, 1.0], [1.0, 2.0, 3.0, 4.0]];
        let t = traj(&cps, -1.0, 0.7);
        for k in 0..=100 {
            let tt = t.t_start() + (t.t_end() - t.t_start()) * k as f64 / 100.0;
            let oracle = de_boor(t.knots(), t.control_points(), tt);
            assert!((t.eval(tt).unwrap() - oracle).norm() < 1e-12, "t={tt}");
        }
    }

    fn arb_traj() -> impl Strategy<Value = BSplineTrajectory> {
        (4usize..10, -5.0f64..5.0, 0.05f64..2.0).prop_flat_map(|(n, t0, dt)| {
            prop::collection::vec(prop::array::uniform4(-10.0f64..10.0), n).prop_map(move |cps| {
                BSplineTrajectory::build_clamped(cps.iter().map(|c| Vector4::from_column_slice(c)).collect(), t0, dt)
                    .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_nonnegativity(tr in arb_traj(), u in 0.0f64..=1.0) {
            let t = tr.t_start() + u * (tr.t_end() - tr.t_start());
            let vals: Vec<f64> = (0..tr.n_ctrl()).map(|i| basis(i, 3, t, tr.knots()).unwrap()).collect();
            prop_assert!(vals.iter().all(|v| *v >= 0.0));
            prop_assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let w = tr.control_weights(t, 0).unwrap();
            for (a, b) in w.iter().zip(&vals) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn convex_hull_and_endpoints(tr in arb_traj(), u in 0.0f64..=1.0) {
            let t = tr.t_start() + u * (tr.t_end() - tr.t_start());
            let q = tr.eval(t).unwrap();
            for c in 0..4 {
                let lo = tr.control_points().iter().map(|p| p[c]).fold(f64::INFINITY, f64::min);
                let hi = tr.control_points().iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(q[c] >= lo - 1e-9 && q[c] <= hi + 1e-9);
            }
            prop_assert!((tr.eval(tr.t_start()).unwrap() - tr.control_points()[0]).norm() < 1e-12);
            prop_assert!((tr.eval(tr.t_end()).unwrap() - tr.control_points()[tr.n_ctrl() - 1]).norm() < 1e-9);
        }

        #[test]
        fn derivatives_match_finite_differences(tr in arb_traj(), u in 0.05f64..0.95) {
            let t = tr.t_start() + u * (tr.t_end() - tr.t_start());
            let h = 1e-6 * t.abs().max(1.0);
            // Stay inside one polynomial piece so the difference is smooth.
            let s = tr.span_index(t).unwrap();
            prop_assume!(t - h >= tr.knots()[s] && t + h < tr.knots()[s + 1]);
            for order in 1..=3 {
                let fd = (tr.eval_derivative(t + h, order - 1).unwrap() - tr.eval_derivative(t - h, order - 1).unwrap()) / (2.0 * h);
                let an = tr.eval_derivative(t, order).unwrap();
                let scale = an.norm().max(fd.norm()).max(1.0);
                prop_assert!((an - fd).norm() <= 1e-5 * scale, "order {}: {} vs {}", order, an, fd);
            }
        }

        #[test]
        fn c2_across_interior_knots(tr in arb_traj()) {
            let n = tr.n_ctrl();
            for s in DEGREE..n - 1 {
                let knot = tr.knots()[s + 1];
                for order in 0..=2 {
                    let left = tr.eval_in_span(knot, s, order).unwrap();
                    let right = tr.eval_in_span(knot, s + 1, order).unwrap();
                    let scale = left.norm().max(1.0);
                    prop_assert!((left - right).norm() < 1e-9 * scale, "order {} at knot {}", order, knot);
                }
            }
        }

        #[test]
        fn control_partials_match_finite_differences(tr in arb_traj(), u in 0.0f64..=1.0, order in 0usize..=3) {
            let t = tr.t_start() + u * (tr.t_end() - tr.t_start());
            let jac = tr.d_eval_d_control(t, order).unwrap();
            let base = tr.control_points().to_vec();
            let h = 1e-6;
            for i in 0..tr.n_ctrl() {
                for c in 0..4 {
                    let mut plus = base.clone();
                    plus[i][c] += h;
                    let mut minus = base.clone();
                    minus[i][c] -= h;
                    let mut tp = tr.clone();
                    tp.set_control_points(&plus).unwrap();
                    let mut tm = tr.clone();
                    tm.set_control_points(&minus).unwrap();
                    let fd = (tp.eval_derivative(t, order).unwrap() - tm.eval_derivative(t, order).unwrap()) / (2.0 * h);
                    for r in 0..4 {
                        prop_assert!((jac[(r, 4 * i + c)] - fd[r]).abs() < 1e-6 * fd[r].abs().max(1.0));
                    }
                }
            }
            if order == 0 {
                for r in 0..4 {
                    prop_assert!((jac.row(r).sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn local_support_of_end_control_points() {
        let t = traj(&[[0.0; 4]; 8], 0.0, 1.0);
        // q_0 only influences the first span, q_7 only the last.
        let w = t.control_weights(2.5, 0).unwrap();
        assert_eq!(w[0], 0.0);
        assert_eq!(w[7], 0.0);
        let w = t.control_weights(0.5, 1).unwrap();
        assert_eq!(w[7], 0.0);
    }
}
