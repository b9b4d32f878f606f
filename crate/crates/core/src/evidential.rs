//! Normal-Inverse-Gamma evidential regression for one scalar component.
//!
//! A scene coordinate component `v` is modelled as `N(μ, σ²)` with
//! `μ ~ N(γ, σ²/λ)` and `σ² ~ Γ⁻¹(α, β)`. Marginalizing gives a Student-t
//! predictive, from which the NLL loss and the predictive entropy follow in
//! closed form.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsConfig};
use crate::special::{digamma, ln_gamma};

/// Evidential hyperparameters (γ, λ, α, β) of one scalar component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigParams {
    gamma: f64,
    lambda: f64,
    alpha: f64,
    beta: f64,
}

impl NigParams {
    /// Requires λ > 0, α > 1, β > 0 and finite values.
    pub fn new(gamma: f64, lambda: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !gamma.is_finite() || !lambda.is_finite() || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::invalid("NIG parameters must be finite"));
        }
        if lambda <= 0.0 {
            return Err(Error::invalid(format!("lambda must be > 0, got {lambda}")));
        }
        if alpha <= 1.0 {
            return Err(Error::invalid(format!("alpha must be > 1, got {alpha}")));
        }
        if beta <= 0.0 {
            return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
        }
        Ok(Self { gamma, lambda, alpha, beta })
    }

    /// Parameters whose aleatoric variance β/(α−1) equals `sigma²`.
    pub fn from_aleatoric(gamma: f64, sigma: f64, lambda: f64, alpha: f64) -> Result<Self> {
        Self::new(gamma, lambda, alpha, sigma * sigma * (alpha - 1.0))
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// E[σ²] = β/(α−1)
    pub fn aleatoric(&self) -> f64 {
        self.beta / (self.alpha - 1.0)
    }

    /// Var[μ] = β/(λ(α−1))
    pub fn epistemic(&self) -> f64 {
        self.beta / (self.lambda * (self.alpha - 1.0))
    }
}

/// Student-t with location, squared scale and degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT {
    pub location: f64,
    pub scale_sq: f64,
    pub dof: f64,
}

impl StudentT {
    pub fn new(location: f64, scale_sq: f64, dof: f64) -> Result<Self> {
        if !(scale_sq > 0.0) || !(dof > 0.0) || !location.is_finite() {
            return Err(Error::invalid("Student-t requires scale_sq > 0 and dof > 0"));
        }
        Ok(Self { location, scale_sq, dof })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let nu = self.dof;
        let z2 = (x - self.location).powi(2) / self.scale_sq;
        ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu)
            - 0.5 * (nu * PI * self.scale_sq).ln()
            - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidentialLossConfig {
    /// Weight of the evidence regularizer.
    pub rho: f64,
}

impl Default for EvidentialLossConfig {
    fn default() -> Self {
        Self { rho: 1e-2 }
    }
}

impl EvidentialLossConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("rho must be >= 0, got {rho}")));
        }
        Ok(Self { rho })
    }
}

/// Closed-form predictive St(γ, β(1+λ)/(λα), 2α).
pub fn predictive(nig: &NigParams) -> StudentT {
    StudentT {
        location: nig.gamma,
        scale_sq: nig.beta * (1.0 + nig.lambda) / (nig.lambda * nig.alpha),
        dof: 2.0 * nig.alpha,
    }
}

/// (prediction, aleatoric, epistemic)
pub fn moments(nig: &NigParams) -> (f64, f64, f64) {
    (nig.gamma, nig.aleatoric(), nig.epistemic())
}

/// Negative log-likelihood of `v` under the predictive Student-t, written in
/// the four-term form with Ω = 2β(1+λ).
pub fn nll_loss(v: f64, nig: &NigParams) -> f64 {
    let NigParams { gamma, lambda, alpha, beta } = *nig;
    let omega = 2.0 * beta * (1.0 + lambda);
    let r = v - gamma;
    ln_gamma(alpha) - ln_gamma(alpha + 0.5) + 0.5 * (PI / lambda).ln() - alpha * omega.ln()
        + (alpha + 0.5) * (lambda * r * r + omega).ln()
}

/// Evidence regularizer (2λ + α)·|v − γ|.
pub fn reg_loss(v: f64, nig: &NigParams) -> f64 {
    (2.0 * nig.lambda + nig.alpha) * (v - nig.gamma).abs()
}

/// Mean of NLL + ρ·reg over the samples.
pub fn total_loss(samples: &[(f64, NigParams)], cfg: &EvidentialLossConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("total_loss needs at least one sample"));
    }
    let sum: f64 = samples.iter().map(|(v, m)| nll_loss(*v, m) + cfg.rho * reg_loss(*v, m)).sum();
    Ok(sum / samples.len() as f64)
}

/// Entropy of the predictive Student-t, in nats.
pub fn predictive_entropy(nig: &NigParams) -> f64 {
    let NigParams { lambda, alpha, beta, .. } = *nig;
    (alpha + 0.5) * (digamma(alpha + 0.5) - digamma(alpha))
        + 0.5 * (2.0 * PI * beta * (1.0 + lambda) / lambda).ln()
        + ln_gamma(alpha)
        - ln_gamma(alpha + 0.5)
}

/// Partial derivatives of one sample's loss with respect to (γ, λ, α, β).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossGradient {
    pub d_gamma: f64,
    pub d_lambda: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
}

/// Analytic gradient of `nll_loss + ρ·reg_loss`. The regularizer's subgradient
/// at v = γ is taken as zero.
pub fn loss_gradients(v: f64, nig: &NigParams, cfg: &EvidentialLossConfig) -> LossGradient {
    let NigParams { gamma, lambda, alpha, beta } = *nig;
    let omega = 2.0 * beta * (1.0 + lambda);
    let r = v - gamma;
    let denom = lambda * r * r + omega;
    let a_half = alpha + 0.5;

    let nll = LossGradient {
        d_gamma: -a_half * 2.0 * lambda * r / denom,
        d_lambda: -0.5 / lambda - alpha * 2.0 * beta / omega + a_half * (r * r + 2.0 * beta) / denom,
        d_alpha: digamma(alpha) - digamma(a_half) - omega.ln() + denom.ln(),
        d_beta: -alpha / beta + a_half * 2.0 * (1.0 + lambda) / denom,
    };

    let sign = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    let abs_r = r.abs();
    LossGradient {
        d_gamma: nll.d_gamma - cfg.rho * (2.0 * lambda + alpha) * sign,
        d_lambda: nll.d_lambda + cfg.rho * 2.0 * abs_r,
        d_alpha: nll.d_alpha + cfg.rho * abs_r,
        d_beta: nll.d_beta,
    }
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyFitOptions {
    pub n_bins: usize,
    /// Bins split this interval into equal widths; samples outside are clamped
    /// into the edge bins.
    pub x_range: (f64, f64),
    pub iters: usize,
    pub seed: u64,
    pub loss: EvidentialLossConfig,
    pub init_lambda: f64,
    pub init_alpha: f64,
    pub init_beta: f64,
}

impl Default for ToyFitOptions {
    fn default() -> Self {
        Self {
            n_bins: 20,
            x_range: (0.0, 2.0),
            iters: 500,
            seed: 0,
            loss: EvidentialLossConfig::default(),
            init_lambda: 0.1,
            init_alpha: 2.0,
            init_beta: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyFit {
    pub bin_centers: Vec<f64>,
    pub params: Vec<NigParams>,
    pub counts: Vec<usize>,
    pub loss_history: Vec<f64>,
}

impl ToyFit {
    pub fn bin_of(&self, x: f64) -> usize {
        let lo = self.bin_centers[0];
        let n = self.bin_centers.len();
        if n == 1 {
            return 0;
        }
        let width = self.bin_centers[1] - lo;
        (((x - lo) / width).round().max(0.0) as usize).min(n - 1)
    }
}

/// Fits one NIG parameter set per x-bin by minimizing the mean evidential
/// loss. λ, α−1 and β are kept positive through softplus maps; the descent is
/// L-BFGS with Armijo backtracking, so the loss never increases.
pub fn fit_toy_dataset(xs: &[f64], vs: &[f64], opts: &ToyFitOptions) -> Result<ToyFit> {
    if xs.len() != vs.len() {
        return Err(Error::invalid(format!(
            "xs and vs differ in length ({} vs {})",
            xs.len(),
            vs.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::invalid("toy dataset is empty"));
    }
    if opts.iters == 0 || opts.n_bins == 0 {
        return Err(Error::invalid("iters and n_bins must be positive"));
    }
    let (lo, hi) = opts.x_range;
    if !(hi > lo) {
        return Err(Error::invalid("x_range must be increasing"));
    }
    let nb = opts.n_bins;
    let width = (hi - lo) / nb as f64;
    let bin = |x: f64| (((x - lo) / width).floor().max(0.0) as usize).min(nb - 1);
    let assign: Vec<usize> = xs.iter().map(|&x| bin(x)).collect();
    let mut counts = vec![0usize; nb];
    assign.iter().for_each(|&b| counts[b] += 1);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x0 = Vec::with_capacity(4 * nb);
    for _ in 0..nb {
        x0.push(rng.random_range(-1e-3..1e-3));
        x0.push(softplus_inv(opts.init_lambda));
        x0.push(softplus_inv(opts.init_alpha - 1.0));
        x0.push(softplus_inv(opts.init_beta));
    }
    let decode = |p: &[f64]| -> NigParams {
        NigParams {
            gamma: p[0],
            lambda: softplus(p[1]).max(1e-300),
            alpha: 1.0 + softplus(p[2]).max(1e-300),
            beta: softplus(p[3]).max(1e-300),
        }
    };
    let n = xs.len() as f64;
    let cfg = opts.loss;
    let objective = |p: &[f64], g: &mut [f64]| -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut total = 0.0;
        for (i, &b) in assign.iter().enumerate() {
            let raw = &p[4 * b..4 * b + 4];
            let m = decode(raw);
            total += nll_loss(vs[i], &m) + cfg.rho * reg_loss(vs[i], &m);
            let d = loss_gradients(vs[i], &m, &cfg);
            g[4 * b] += d.d_gamma / n;
            g[4 * b + 1] += d.d_lambda * sigmoid(raw[1]) / n;
            g[4 * b + 2] += d.d_alpha * sigmoid(raw[2]) / n;
            g[4 * b + 3] += d.d_beta * sigmoid(raw[3]) / n;
        }
        total / n
    };
    let lb = LbfgsConfig { memory: 10, max_iters: opts.iters, grad_tol: 1e-10, cost_tol: 1e-14 };
    let res = lbfgs::minimize(objective, &x0, &lb)?;

    let params = res.x.chunks(4).map(decode).collect();
    let bin_centers = (0..nb).map(|b| lo + (b as f64 + 0.5) * width).collect();
    Ok(ToyFit { bin_centers, params, counts, loss_history: res.history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn nig(g: f64, l: f64, a: f64, b: f64) -> NigParams {
        NigParams::new(g, l, a, b).unwrap()
    }

    #[test]
    fn construction_rejects_invalid() {
        assert!(NigParams::new(0.0, 0.0, 2.0, 1.0).is_err());
        assert!(NigParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(NigParams::new(0.0, 1.0, 2.0, 0.0).is_err());
        assert!(NigParams::new(f64::NAN, 1.0, 2.0, 1.0).is_err());
        assert!(EvidentialLossConfig::new(-0.1).is_err());
    }

    #[test]
    fn predictive_examples() {
        // α = 1 is outside the NIG domain, so the first example is checked on
        // the raw Student-t formula.
        let st = StudentT { location: 0.0, scale_sq: 0.5 * 2.0 / (1.0 * 1.0), dof: 2.0 };
        assert_eq!(st.scale_sq, 1.0);

        let st = predictive(&nig(5.0, 1e12, 2.0, 1.0));
        assert!((st.scale_sq - 0.5).abs() < 1e-9);

        let st = predictive(&nig(1.0, 2.0, 3.0, 4.0));
        assert_eq!(st.location, 1.0);
        assert!((st.scale_sq - 2.0).abs() < 1e-15);
        assert_eq!(st.dof, 6.0);
    }

    #[test]
    fn moments_examples() {
        assert_eq!(moments(&nig(0.0, 1.0, 2.0, 3.0)), (0.0, 3.0, 3.0));
        assert_eq!(moments(&nig(2.0, 4.0, 3.0, 4.0)), (2.0, 2.0, 0.5));
        let (_, _, e) = moments(&nig(0.0, 1e9, 2.0, 3.0));
        assert!(e < 1e-8);
    }

    #[test]
    fn nll_minimized_at_location() {
        let m = nig(0.7, 2.0, 3.0, 0.4);
        let h = 1e-6;
        let d = (nll_loss(0.7, &NigParams { gamma: 0.7 + h, ..m })
            - nll_loss(0.7, &NigParams { gamma: 0.7 - h, ..m }))
            / (2.0 * h);
        assert!(d.abs() < 1e-8);
        let best = (-2000..=2000)
            .map(|k| 0.7 + k as f64 * 1e-3)
            .min_by(|a, b| nll_loss(*a, &m).total_cmp(&nll_loss(*b, &m)))
            .unwrap();
        assert!((best - 0.7).abs() < 1e-9);
    }

    #[test]
    fn reg_loss_examples() {
        let m = nig(0.0, 1.0, 2.0, 1.0);
        assert_eq!(reg_loss(0.0, &m), 0.0);
        assert_eq!(reg_loss(1.0, &m), 4.0);
        assert!((reg_loss(0.6, &m) - 2.0 * reg_loss(0.3, &m)).abs() < 1e-14);
    }

    #[test]
    fn total_loss_examples() {
        let m = nig(0.1, 1.5, 2.5, 0.3);
        let cfg0 = EvidentialLossConfig { rho: 0.0 };
        let cfg1 = EvidentialLossConfig { rho: 1.0 };
        assert_eq!(total_loss(&[(0.4, m)], &cfg0).unwrap(), nll_loss(0.4, &m));
        let samples = vec![(0.4, m), (-0.2, m), (1.3, m)];
        let mean_reg: f64 = samples.iter().map(|(v, m)| reg_loss(*v, m)).sum::<f64>() / 3.0;
        let diff = total_loss(&samples, &cfg1).unwrap() - total_loss(&samples, &cfg0).unwrap();
        assert!((diff - mean_reg).abs() < 1e-12);
        let same = vec![(0.4, m); 5];
        assert!((total_loss(&same, &cfg1).unwrap() - total_loss(&[(0.4, m)], &cfg1).unwrap()).abs() < 1e-12);
        assert!(total_loss(&[], &cfg0).is_err());
    }

    #[test]
    fn entropy_location_invariant_and_monotone() {
        let a = predictive_entropy(&nig(0.0, 2.0, 3.0, 0.5));
        let b = predictive_entropy(&nig(7.0, 2.0, 3.0, 0.5));
        assert_eq!(a, b);
        assert!(predictive_entropy(&nig(0.0, 2.0, 3.0, 0.6)) > a);
        assert!(predictive_entropy(&nig(0.0, 2.5, 3.0, 0.5)) < a);
    }

    #[test]
    fn regularizer_gradient_at_positive_residual() {
        let m = nig(0.0, 1.5, 2.0, 1.0);
        let cfg = EvidentialLossConfig { rho: 1.0 };
        let with = loss_gradients(0.5, &m, &cfg);
        let without = loss_gradients(0.5, &m, &EvidentialLossConfig { rho: 0.0 });
        assert!((with.d_gamma - without.d_gamma + (2.0 * 1.5 + 2.0)).abs() < 1e-12);
        let at_zero = loss_gradients(0.0, &m, &cfg);
        let at_zero_plain = loss_gradients(0.0, &m, &EvidentialLossConfig { rho: 0.0 });
        assert_eq!(at_zero.d_gamma, at_zero_plain.d_gamma);
    }

    #[test]
    fn beta_gradient_changes_sign_with_residual() {
        let m = nig(0.0, 1.0, 2.0, 0.5);
        let cfg = EvidentialLossConfig { rho: 0.0 };
        assert!(loss_gradients(0.0, &m, &cfg).d_beta > 0.0);
        assert!(loss_gradients(5.0, &m, &cfg).d_beta < 0.0);
    }

    fn toy_data(seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for _ in 0..2000 {
            let x: f64 = rng.random_range(0.0..2.0);
            let sigma = if x < 1.0 { 0.01 } else { 0.5 };
            let noise = Normal::new(0.0, sigma).unwrap().sample(&mut rng);
            xs.push(x);
            vs.push((3.0 * x).sin() + noise);
        }
        (xs, vs)
    }

    #[test]
    fn toy_fit_separates_noise_levels() {
        let (xs, vs) = toy_data(3);
        let opts = ToyFitOptions { n_bins: 20, x_range: (0.0, 2.0), iters: 400, ..Default::default() };
        let fit = fit_toy_dataset(&xs, &vs, &opts).unwrap();
        let clean: f64 = fit.params[..10].iter().map(|p| p.aleatoric()).sum::<f64>() / 10.0;
        let noisy: f64 = fit.params[10..].iter().map(|p| p.aleatoric()).sum::<f64>() / 10.0;
        assert!(noisy >= 10.0 * clean, "clean={clean} noisy={noisy}");
        assert!(fit.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(fit.loss_history.last().unwrap() <= &fit.loss_history[0]);
    }

    #[test]
    fn toy_fit_empty_bins_keep_initialization() {
        let (xs, vs) = toy_data(4);
        // Range extends to 3.0; bins above 2.0 never see data.
        let opts = ToyFitOptions { n_bins: 15, x_range: (0.0, 3.0), iters: 300, ..Default::default() };
        let fit = fit_toy_dataset(&xs, &vs, &opts).unwrap();
        let init_epi = opts.init_beta / (opts.init_lambda * (opts.init_alpha - 1.0));
        for b in 10..15 {
            assert_eq!(fit.counts[b], 0);
            assert!((fit.params[b].epistemic() - init_epi).abs() < 1e-9 * init_epi);
        }
        let populated_max = fit.params[..10].iter().map(|p| p.epistemic()).fold(0.0, f64::max);
        assert!(populated_max < init_epi);
    }

    #[test]
    fn toy_fit_rejects_mismatched_lengths() {
        assert!(fit_toy_dataset(&[0.0, 1.0], &[0.0], &ToyFitOptions::default()).is_err());
    }
}
