//! Fixed-lag smoother over (position, velocity, yaw) states.
//!
//! One state node is created per pose measurement, at its capture time.
//! Consecutive nodes are tied by preintegrated IMU factors; each node may
//! carry a robust pose factor. States older than the lag are marginalized
//! into a Gaussian prior on the oldest kept node by a Schur complement.
//! Between pose measurements the latest node is propagated through the IMU
//! stream, so an estimate is available at every IMU sample.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector3};

use super::imu::{preintegrate, ImuBias, ImuSample, NavState, Preintegrated};
use super::{wrap_angle, PoseEstimate, PoseSource};
use crate::error::{Error, Result};

const DIM: usize = 7;
type Vec7 = SVector<f64, DIM>;
type Mat7 = SMatrix<f64, DIM, DIM>;

/// Consecutive cost-increasing damped steps that count as divergence.
const MAX_FAILED_STEPS: usize = 5;
const REL_DECREASE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub lag: f64,
    pub pose_sigma_t: f64,
    pub pose_sigma_r: f64,
    /// Huber threshold in meters of translation residual; `None` disables
    /// the robust kernel.
    pub huber_delta: Option<f64>,
    /// Random-walk densities of the inertial factor, per √s.
    pub imu_sigma_p: f64,
    pub imu_sigma_v: f64,
    pub imu_sigma_yaw: f64,
    /// Uncertainty of the initial state.
    pub init_sigma_p: f64,
    pub init_sigma_v: f64,
    pub init_sigma_yaw: f64,
    pub max_iters: usize,
    /// Delay between image capture and availability of its pose.
    pub latency: f64,
    /// Accelerometer and gyro bias assumed by the smoother.
    pub bias: ImuBias,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            lag: 2.0,
            pose_sigma_t: 0.05,
            pose_sigma_r: 0.02,
            huber_delta: Some(0.1),
            imu_sigma_p: 0.02,
            imu_sigma_v: 0.05,
            imu_sigma_yaw: 0.01,
            init_sigma_p: 0.01,
            init_sigma_v: 0.01,
            init_sigma_yaw: 0.01,
            max_iters: 10,
            latency: 0.06,
            bias: ImuBias::default(),
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lag_s", self.lag),
            ("pose_sigma_t", self.pose_sigma_t),
            ("pose_sigma_r", self.pose_sigma_r),
            ("imu_sigma_p", self.imu_sigma_p),
            ("imu_sigma_v", self.imu_sigma_v),
            ("imu_sigma_yaw", self.imu_sigma_yaw),
            ("init_sigma_p", self.init_sigma_p),
            ("init_sigma_v", self.init_sigma_v),
            ("init_sigma_yaw", self.init_sigma_yaw),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(d) = self.huber_delta {
            if !(d > 0.0) {
                return Err(Error::invalid(format!("huber_delta must be positive, got {d}")));
            }
        }
        if !(self.latency >= 0.0) {
            return Err(Error::invalid("latency_s must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    t: f64,
    x: Vec7,
    pose: Option<(Vector3<f64>, f64)>,
}

fn to_vec(s: &NavState) -> Vec7 {
    Vec7::from_column_slice(&[s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z, s.yaw])
}

fn to_state(t: f64, x: &Vec7) -> NavState {
    NavState {
        t,
        position: Vector3::new(x[0], x[1], x[2]),
        velocity: Vector3::new(x[3], x[4], x[5]),
        yaw: x[6],
    }
}

/// Quadratic prior ½ δᵀHδ + bᵀδ with δ = x − x̄ on the oldest node.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Prior {
    h: Mat7,
    b: Vec7,
    x_bar: Vec7,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    Pose(PoseEstimate),
    Imu(ImuSample),
}

#[derive(Debug, Clone)]
pub struct FixedLagSmoother {
    cfg: SmootherConfig,
    nodes: VecDeque<Node>,
    prior: Prior,
    imu: Vec<ImuSample>,
    head: NavState,
    diverged: bool,
}

impl FixedLagSmoother {
    pub fn new(cfg: SmootherConfig, initial: NavState) -> Result<Self> {
        cfg.validate()?;
        let info = Vec7::from_column_slice(&[
            cfg.init_sigma_p.powi(-2),
            cfg.init_sigma_p.powi(-2),
            cfg.init_sigma_p.powi(-2),
            cfg.init_sigma_v.powi(-2),
            cfg.init_sigma_v.powi(-2),
            cfg.init_sigma_v.powi(-2),
            cfg.init_sigma_yaw.powi(-2),
        ]);
        let x0 = to_vec(&initial);
        let mut nodes = VecDeque::new();
        nodes.push_back(Node { t: initial.t, x: x0, pose: None });
        Ok(Self {
            cfg,
            nodes,
            prior: Prior { h: Mat7::from_diagonal(&info), b: Vec7::zeros(), x_bar: x0 },
            imu: Vec::new(),
            head: initial,
            diverged: false,
        })
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.cfg
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Capture times of the states currently in the window.
    pub fn window_times(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.t).collect()
    }

    /// Smoothed estimate of the newest node.
    pub fn newest_state(&self) -> NavState {
        let n = self.nodes.back().expect("window is never empty");
        to_state(n.t, &n.x)
    }

    /// Latest output: the newest node propagated to the latest IMU sample.
    pub fn latest(&self) -> PoseEstimate {
        PoseEstimate::from_yaw(self.head.position, self.head.yaw, self.head.t, PoseSource::Smoothed)
    }

    pub fn latest_state(&self) -> NavState {
        self.head
    }

    pub fn update(&mut self, m: Measurement) -> Result<Option<PoseEstimate>> {
        match m {
            Measurement::Imu(s) => self.add_imu(s).map(Some),
            Measurement::Pose(p) => self.add_pose(&p).map(|_| None),
        }
    }

    /// Adds one IMU sample and returns the estimate at its timestamp.
    pub fn add_imu(&mut self, s: ImuSample) -> Result<PoseEstimate> {
        if let Some(last) = self.imu.last() {
            if !(s.t > last.t) {
                return Err(Error::invalid("IMU timestamps must be strictly increasing"));
            }
        }
        if s.t < self.head.t {
            return Err(Error::invalid("IMU sample precedes the current estimate"));
        }
        let prev = self.imu.last().copied();
        self.imu.push(s);
        let window: Vec<ImuSample> = prev.into_iter().chain(std::iter::once(s)).collect();
        let step = preintegrate(&window, &self.cfg.bias, self.head.t, s.t)?;
        self.head = step.predict(&self.head);
        Ok(self.latest())
    }

    /// Inserts a pose measurement taken at `pose.t` and re-solves the window.
    pub fn add_pose(&mut self, pose: &PoseEstimate) -> Result<()> {
        if self.diverged {
            return Err(Error::Divergence("smoother already diverged".into()));
        }
        let newest = self.nodes.back().expect("window is never empty").t;
        if pose.t < newest {
            return Err(Error::invalid(format!("pose at {} is older than the newest state at {newest}", pose.t)));
        }
        let meas = (pose.translation, pose.yaw());
        if pose.t == newest {
            self.nodes.back_mut().unwrap().pose = Some(meas);
        } else {
            let last = self.nodes.back().unwrap();
            let pre = preintegrate(&self.imu, &self.cfg.bias, last.t, pose.t)?;
            let guess = pre.predict(&to_state(last.t, &last.x));
            self.nodes.push_back(Node { t: pose.t, x: to_vec(&guess), pose: Some(meas) });
        }
        if let Err(e) = self.solve() {
            self.diverged = true;
            return Err(e);
        }
        while self.nodes.len() > 1 && self.nodes.back().unwrap().t - self.nodes[0].t > self.cfg.lag {
            self.marginalize_oldest()?;
        }
        self.prune_imu();
        self.refresh_head()
    }

    fn refresh_head(&mut self) -> Result<()> {
        let n = *self.nodes.back().unwrap();
        let start = to_state(n.t, &n.x);
        self.head = match self.imu.last() {
            Some(last) if last.t > n.t => preintegrate(&self.imu, &self.cfg.bias, n.t, last.t)?.predict(&start),
            _ => start,
        };
        Ok(())
    }

    fn prune_imu(&mut self) {
        let t0 = self.nodes[0].t;
        // Keep one sample at or before the oldest node for interpolation.
        let k = self.imu.partition_point(|s| s.t <= t0);
        if k > 1 {
            self.imu.drain(..k - 1);
        }
    }

    fn imu_factors(&self) -> Result<Vec<Preintegrated>> {
        let mut out = Vec::with_capacity(self.nodes.len().saturating_sub(1));
        for k in 1..self.nodes.len() {
            out.push(preintegrate(&self.imu, &self.cfg.bias, self.nodes[k - 1].t, self.nodes[k].t)?);
        }
        Ok(out)
    }

    fn imu_sigmas(&self, dt: f64) -> Vec7 {
        let r = dt.max(1e-6).sqrt();
        let c = &self.cfg;
        Vec7::from_column_slice(&[
            c.imu_sigma_p * r,
            c.imu_sigma_p * r,
            c.imu_sigma_p * r,
            c.imu_sigma_v * r,
            c.imu_sigma_v * r,
            c.imu_sigma_v * r,
            c.imu_sigma_yaw * r,
        ])
    }

    /// Whitened pose residual and its robust weight.
    fn pose_residual(&self, x: &Vec7, meas: &(Vector3<f64>, f64)) -> (SVector<f64, 4>, f64, f64) {
        let c = &self.cfg;
        let r = SVector::<f64, 4>::new(
            (x[0] - meas.0.x) / c.pose_sigma_t,
            (x[1] - meas.0.y) / c.pose_sigma_t,
            (x[2] - meas.0.z) / c.pose_sigma_t,
            wrap_angle(x[6] - meas.1) / c.pose_sigma_r,
        );
        let s = r.norm();
        match c.huber_delta {
            Some(d) => {
                let k = d / c.pose_sigma_t;
                if s <= k {
                    (r, 1.0, 0.5 * s * s)
                } else {
                    (r, k / s, k * (s - 0.5 * k))
                }
            }
            None => (r, 1.0, 0.5 * s * s),
        }
    }

    fn imu_residual(&self, pre: &Preintegrated, xa: &Vec7, xb: &Vec7) -> Vec7 {
        let pred = to_vec(&pre.predict(&to_state(0.0, xa)));
        (xb - pred).component_div(&self.imu_sigmas(pre.dt))
    }

    fn cost(&self, xs: &[Vec7], pre: &[Preintegrated]) -> f64 {
        let d = xs[0] - self.prior.x_bar;
        let mut c = 0.5 * d.dot(&(self.prior.h * d)) + self.prior.b.dot(&d);
        for (n, x) in self.nodes.iter().zip(xs) {
            if let Some(m) = &n.pose {
                c += self.pose_residual(x, m).2;
            }
        }
        for (k, p) in pre.iter().enumerate() {
            c += 0.5 * self.imu_residual(p, &xs[k], &xs[k + 1]).norm_squared();
        }
        c
    }

    /// Gauss–Newton normal equations of the whole window at `xs`.
    fn linearize(&self, xs: &[Vec7], pre: &[Preintegrated]) -> (DMatrix<f64>, DVector<f64>) {
        let n = xs.len();
        let mut h = DMatrix::zeros(DIM * n, DIM * n);
        let mut g = DVector::zeros(DIM * n);

        let d = xs[0] - self.prior.x_bar;
        add_block(&mut h, 0, 0, &self.prior.h);
        add_seg(&mut g, 0, &(self.prior.h * d + self.prior.b));

        for (k, (node, x)) in self.nodes.iter().zip(xs).enumerate() {
            let Some(m) = &node.pose else { continue };
            let (r, w, _) = self.pose_residual(x, m);
            let c = &self.cfg;
            let mut j = SMatrix::<f64, 4, DIM>::zeros();
            for a in 0..3 {
                j[(a, a)] = 1.0 / c.pose_sigma_t;
            }
            j[(3, 6)] = 1.0 / c.pose_sigma_r;
            let o = DIM * k;
            add_block(&mut h, o, o, &(j.transpose() * j * w));
            add_seg(&mut g, o, &(j.transpose() * r * w));
        }

        for (k, p) in pre.iter().enumerate() {
            let r = self.imu_residual(p, &xs[k], &xs[k + 1]);
            let sig = self.imu_sigmas(p.dt);
            let (dp_dyaw, dv_dyaw) = p.d_predict_d_yaw(xs[k][6]);
            // Jacobian of the prediction with respect to the start state.
            let mut jp = Mat7::identity();
            for a in 0..3 {
                jp[(a, 3 + a)] = p.dt;
                jp[(a, 6)] = dp_dyaw[a];
                jp[(3 + a, 6)] = dv_dyaw[a];
            }
            let winv = Mat7::from_diagonal(&sig.map(|s| 1.0 / s));
            let ja = -(winv * jp);
            let jb = winv;
            let (oa, ob) = (DIM * k, DIM * (k + 1));
            add_block(&mut h, oa, oa, &(ja.transpose() * ja));
            add_block(&mut h, oa, ob, &(ja.transpose() * jb));
            add_block(&mut h, ob, oa, &(jb.transpose() * ja));
            add_block(&mut h, ob, ob, &(jb.transpose() * jb));
            add_seg(&mut g, oa, &(ja.transpose() * r));
            add_seg(&mut g, ob, &(jb.transpose() * r));
        }
        (h, g)
    }

    /// Levenberg–Marquardt over all states in the window.
    fn solve(&mut self) -> Result<()> {
        let pre = self.imu_factors()?;
        let mut xs: Vec<Vec7> = self.nodes.iter().map(|n| n.x).collect();
        let mut cost = self.cost(&xs, &pre);
        if !cost.is_finite() {
            return Err(Error::Divergence("non-finite smoother cost".into()));
        }
        let mut mu = 1e-6;
        let mut failures = 0;
        let mut iters = 0;
        while iters < self.cfg.max_iters {
            let (h, g) = self.linearize(&xs, &pre);
            if g.amax() < 1e-12 {
                break;
            }
            let mut damped = h.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += mu * (h[(i, i)] + 1.0);
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 10.0;
                failures += 1;
                if failures >= MAX_FAILED_STEPS {
                    return Err(Error::Divergence("smoother normal equations are not positive definite".into()));
                }
                continue;
            };
            let step = chol.solve(&(-&g));
            let trial: Vec<Vec7> =
                xs.iter().enumerate().map(|(k, x)| x + step.fixed_rows::<DIM>(DIM * k)).collect();
            let new_cost = self.cost(&trial, &pre);
            if !new_cost.is_finite() {
                return Err(Error::Divergence("non-finite smoother cost".into()));
            }
            // Predicted decrease of the quadratic model. Residuals are small
            // differences of metre-scale states, so relative changes below
            // REL_DECREASE_TOL are rounding noise.
            let predicted = -(g.dot(&step) + 0.5 * step.dot(&(&h * &step)));
            if new_cost < cost {
                let gain = cost - new_cost;
                xs = trial;
                cost = new_cost;
                mu = (mu / 3.0).max(1e-12);
                failures = 0;
                iters += 1;
                if gain <= REL_DECREASE_TOL * cost.max(1e-12) {
                    break;
                }
            } else {
                if predicted <= REL_DECREASE_TOL * cost.max(1e-12) {
                    // No meaningful decrease is available: converged.
                    break;
                }
                failures += 1;
                if failures >= MAX_FAILED_STEPS {
                    return Err(Error::Divergence(format!(
                        "cost increased on {MAX_FAILED_STEPS} consecutive damped steps"
                    )));
                }
                mu *= 4.0;
            }
        }
        for (n, x) in self.nodes.iter_mut().zip(&xs) {
            n.x = *x;
        }
        Ok(())
    }

    /// Folds the oldest node's factors into a prior on the next node.
    fn marginalize_oldest(&mut self) -> Result<()> {
        let pre = preintegrate(&self.imu, &self.cfg.bias, self.nodes[0].t, self.nodes[1].t)?;
        let (x0, x1) = (self.nodes[0].x, self.nodes[1].x);
        // Linearize only the factors touching node 0: its prior, its pose
        // factor, and the inertial factor to node 1.
        let keep = self.nodes.split_off(2);
        let (h, g) = self.linearize(&[x0, x1], &[pre]);
        // Node 1's own pose factor stays in the window; remove it here.
        let mut h = h;
        let mut g = g;
        if let Some(m) = &self.nodes[1].pose {
            let (r, w, _) = self.pose_residual(&x1, m);
            let c = &self.cfg;
            let mut j = SMatrix::<f64, 4, DIM>::zeros();
            for a in 0..3 {
                j[(a, a)] = 1.0 / c.pose_sigma_t;
            }
            j[(3, 6)] = 1.0 / c.pose_sigma_r;
            add_block(&mut h, DIM, DIM, &(-(j.transpose() * j * w)));
            add_seg(&mut g, DIM, &(-(j.transpose() * r * w)));
        }
        self.nodes.extend(keep);

        let a: Mat7 = h.fixed_view::<DIM, DIM>(0, 0).into_owned();
        let b: Mat7 = h.fixed_view::<DIM, DIM>(0, DIM).into_owned();
        let c: Mat7 = h.fixed_view::<DIM, DIM>(DIM, DIM).into_owned();
        let ga: Vec7 = g.fixed_rows::<DIM>(0).into_owned();
        let gb: Vec7 = g.fixed_rows::<DIM>(DIM).into_owned();
        let a_inv = a
            .try_inverse()
            .ok_or_else(|| Error::Divergence("marginalized block is singular".into()))?;
        let hm = c - b.transpose() * a_inv * b;
        let bm = gb - b.transpose() * a_inv * ga;
        let hm = (hm + hm.transpose()) * 0.5;
        self.prior = Prior { h: hm, b: bm, x_bar: x1 };
        self.nodes.pop_front();
        Ok(())
    }
}

fn add_block(h: &mut DMatrix<f64>, r: usize, c: usize, m: &Mat7) {
    let mut v = h.fixed_view_mut::<DIM, DIM>(r, c);
    v += m;
}

fn add_seg(g: &mut DVector<f64>, r: usize, x: &Vec7) {
    let mut v = g.fixed_rows_mut::<DIM>(r);
    v += x;
}
