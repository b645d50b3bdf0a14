//! Hamiltonian Monte Carlo with dual-averaging step-size adaptation,
//! multi-chain execution and convergence diagnostics.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differentiable log density over `R^dim`.
///
/// Implementations may return `-inf` (or any non-finite value) for points
/// outside the support; the sampler rejects such proposals.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a closure `(x, grad) -> log p` into a [`LogDensity`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

/// Hamiltonian error above which a trajectory is flagged divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub leapfrog_steps: usize,
    /// Relative jitter of the leapfrog count, drawn uniformly per iteration.
    pub leapfrog_jitter: f64,
    pub target_accept: f64,
    pub chains: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Diagonal mass-matrix adaptation from burn-in variances.
    pub adapt_mass: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            burn_in: 500,
            leapfrog_steps: 32,
            leapfrog_jitter: 0.2,
            target_accept: 0.8,
            chains: 4,
            seed: 0,
            init_scale: 0.1,
            adapt_mass: false,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.iterations == 0 || self.chains == 0 || self.leapfrog_steps == 0 {
            return bad("iterations, chains and leapfrog_steps must be positive".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            ));
        }
        if !(self.init_scale > 0.0) || !(0.0..1.0).contains(&self.leapfrog_jitter) {
            return bad("init_scale must be positive and leapfrog_jitter in [0, 1)".into());
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations - self.burn_in
    }
}

/// Result of a leapfrog integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
}

/// Plain leapfrog with identity mass. `potential_grad` writes `∇U(q)` where
/// `U` is the negative log density.
pub fn leapfrog<G>(
    position: &[f64],
    momentum: &[f64],
    step_size: f64,
    steps: usize,
    mut potential_grad: G,
) -> Trajectory
where
    G: FnMut(&[f64], &mut [f64]),
{
    let mut q = position.to_vec();
    let mut p = momentum.to_vec();
    if steps == 0 {
        return Trajectory {
            position: q,
            momentum: p,
        };
    }
    let mut g = vec![0.0; q.len()];
    potential_grad(&q, &mut g);
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= 0.5 * step_size * gi;
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step_size * pi;
        }
        potential_grad(&q, &mut g);
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= 0.5 * step_size * gi;
        }
    }
    Trajectory {
        position: q,
        momentum: p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSamples {
    /// Retained draws, one unconstrained vector per iteration.
    pub draws: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    /// Fraction of post-burn-in proposals accepted.
    pub accept_rate: f64,
    /// Mean Metropolis acceptance probability after burn-in.
    pub mean_accept_prob: f64,
    pub step_size: f64,
    pub divergences: usize,
    pub inv_mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub param_names: Vec<String>,
    pub chains: Vec<ChainSamples>,
}

impl SampleSet {
    pub fn with_param_names(mut self, names: Vec<String>) -> Self {
        self.param_names = names;
        self
    }

    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.draws.len())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    pub fn dim(&self) -> usize {
        self.chains
            .first()
            .and_then(|c| c.draws.first())
            .map_or(self.param_names.len(), Vec::len)
    }

    /// Draws of every chain, concatenated in chain order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(Vec::as_slice))
    }

    pub fn iter_log_post(&self) -> impl Iterator<Item = f64> + '_ {
        self.chains.iter().flat_map(|c| c.log_post.iter().copied())
    }

    /// Per-chain trace of one parameter.
    pub fn column(&self, param: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().map(|d| d[param]).collect())
            .collect()
    }

    /// Flat index (chain-major) of the draw with the highest log posterior; first wins ties.
    pub fn argmax_log_post(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, lp) in self.iter_log_post().enumerate() {
            if best.is_none_or(|(_, b)| lp > b) {
                best = Some((i, lp));
            }
        }
        best.map(|(i, _)| i)
    }

    /// `iteration,param_0,...,param_{K-1},log_post` for one chain. `first_iteration`
    /// is the absolute index of the first retained draw.
    pub fn write_chain_csv(
        &self,
        chain: usize,
        first_iteration: usize,
        mut out: impl Write,
    ) -> std::io::Result<()> {
        let c = &self.chains[chain];
        let dim = self.dim();
        let mut header = String::from("iteration");
        for k in 0..dim {
            header.push_str(&format!(",param_{k}"));
        }
        header.push_str(",log_post");
        writeln!(out, "{header}")?;
        for (i, (d, lp)) in c.draws.iter().zip(&c.log_post).enumerate() {
            let mut line = (first_iteration + i).to_string();
            for x in d {
                line.push(',');
                line.push_str(&x.to_string());
            }
            line.push(',');
            line.push_str(&lp.to_string());
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step).ln(),
            target,
            h_bar: 0.0,
            log_eps: step.ln(),
            log_eps_bar: 0.0,
            t: 0.0,
        }
    }

    fn update(&mut self, accept_prob: f64) {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let k = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = k * self.log_eps + (1.0 - k) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct State {
    q: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

struct Transition {
    accepted: bool,
    accept_prob: f64,
    divergent: bool,
}

struct Chain<'a> {
    target: &'a dyn LogDensity,
    inv_mass: Vec<f64>,
    state: State,
    rng: ChaCha8Rng,
    // scratch
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_mass)
            .map(|(pi, m)| pi * pi * m)
            .sum::<f64>()
    }

    fn draw_momentum(&mut self) {
        for (pi, m) in self.p.iter_mut().zip(&self.inv_mass) {
            let z: f64 = self.rng.sample(StandardNormal);
            *pi = z / m.sqrt();
        }
    }

    /// Integrates from the current state; returns the final log density and
    /// whether the trajectory diverged.
    fn integrate(&mut self, step: f64, steps: usize, h0: f64) -> (f64, bool) {
        self.q.copy_from_slice(&self.state.q);
        self.g.copy_from_slice(&self.state.grad);
        let mut logp = self.state.logp;
        for _ in 0..steps {
            for (pi, gi) in self.p.iter_mut().zip(&self.g) {
                *pi += 0.5 * step * gi;
            }
            for ((qi, pi), m) in self.q.iter_mut().zip(&self.p).zip(&self.inv_mass) {
                *qi += step * m * pi;
            }
            logp = self.target.log_density_and_grad(&self.q, &mut self.g);
            if !logp.is_finite() {
                return (f64::NEG_INFINITY, true);
            }
            for (pi, gi) in self.p.iter_mut().zip(&self.g) {
                *pi += 0.5 * step * gi;
            }
            let h = -logp + self.kinetic(&self.p);
            if !h.is_finite() || h - h0 > DIVERGENCE_THRESHOLD {
                return (f64::NEG_INFINITY, true);
            }
        }
        (logp, false)
    }

    fn transition(&mut self, step: f64, steps: usize) -> Transition {
        self.draw_momentum();
        let h0 = -self.state.logp + self.kinetic(&self.p);
        let (logp, divergent) = self.integrate(step, steps, h0);
        if divergent {
            return Transition {
                accepted: false,
                accept_prob: 0.0,
                divergent,
            };
        }
        let h1 = -logp + self.kinetic(&self.p);
        let accept_prob = (h0 - h1).exp().min(1.0);
        let u: f64 = self.rng.random();
        let accepted = u < accept_prob;
        if accepted {
            self.state.q.copy_from_slice(&self.q);
            self.state.grad.copy_from_slice(&self.g);
            self.state.logp = logp;
        }
        Transition {
            accepted,
            accept_prob,
            divergent: false,
        }
    }

    /// Doubles or halves a starting step until one-step acceptance crosses 1/2.
    fn initial_step_size(&mut self) -> f64 {
        let mut step = 1.0;
        let accept = |chain: &mut Self, step: f64| {
            chain.draw_momentum();
            let h0 = -chain.state.logp + chain.kinetic(&chain.p);
            let (logp, div) = chain.integrate(step, 1, h0);
            if div {
                0.0
            } else {
                (h0 - (-logp + chain.kinetic(&chain.p))).exp().min(1.0)
            }
        };
        let a = accept(self, step);
        let up = a > 0.5;
        for _ in 0..60 {
            step = if up { step * 2.0 } else { step * 0.5 };
            let a = accept(self, step);
            if up != (a > 0.5) {
                break;
            }
        }
        if up {
            step * 0.5
        } else {
            step
        }
    }
}

fn leapfrog_count(rng: &mut ChaCha8Rng, config: &HmcConfig) -> usize {
    let base = config.leapfrog_steps as f64;
    let lo = (base * (1.0 - config.leapfrog_jitter)).round().max(1.0) as usize;
    let hi = (base * (1.0 + config.leapfrog_jitter))
        .round()
        .max(lo as f64) as usize;
    rng.random_range(lo..=hi)
}

fn run_chain(
    target: &dyn LogDensity,
    config: &HmcConfig,
    chain_index: usize,
) -> Result<ChainSamples> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain_index as u64);

    let mut state = None;
    for _ in 0..100 {
        let q: Vec<f64> = (0..dim)
            .map(|_| config.init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut grad = vec![0.0; dim];
        let logp = target.log_density_and_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            state = Some(State { q, logp, grad });
            break;
        }
    }
    let state = state.ok_or(Error::InitFailed)?;

    let mut chain = Chain {
        target,
        inv_mass: vec![1.0; dim],
        state,
        rng,
        q: vec![0.0; dim],
        p: vec![0.0; dim],
        g: vec![0.0; dim],
    };

    let mut da = DualAveraging::new(chain.initial_step_size(), config.target_accept);
    let (window_start, window_end) = if config.adapt_mass && config.burn_in >= 20 {
        ((config.burn_in * 15) / 100, (config.burn_in * 75) / 100)
    } else {
        (usize::MAX, usize::MAX)
    };
    let mut welford = Welford::new(dim);

    for it in 0..config.burn_in {
        let steps = leapfrog_count(&mut chain.rng, config);
        let t = chain.transition(da.current(), steps);
        da.update(t.accept_prob);
        if it >= window_start && it < window_end {
            welford.push(&chain.state.q);
        }
        if it + 1 == window_end {
            let n = welford.count as f64;
            chain.inv_mass = welford
                .variance()
                .into_iter()
                .map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0)))
                .collect();
            da = DualAveraging::new(da.current(), config.target_accept);
        }
    }
    let step = if config.burn_in > 0 {
        da.final_step()
    } else {
        da.current()
    };

    let retained = config.retained();
    let mut draws = Vec::with_capacity(retained);
    let mut log_post = Vec::with_capacity(retained);
    let (mut accepted, mut prob_sum, mut divergences) = (0usize, 0.0, 0usize);
    for _ in 0..retained {
        let steps = leapfrog_count(&mut chain.rng, config);
        let t = chain.transition(step, steps);
        accepted += usize::from(t.accepted);
        prob_sum += t.accept_prob;
        divergences += usize::from(t.divergent);
        draws.push(chain.state.q.clone());
        log_post.push(chain.state.logp);
    }
    if divergences * 10 > retained * 9 {
        return Err(Error::AllDivergent {
            divergent: divergences,
            total: retained,
        });
    }
    Ok(ChainSamples {
        draws,
        log_post,
        accept_rate: accepted as f64 / retained as f64,
        mean_accept_prob: prob_sum / retained as f64,
        step_size: step,
        divergences,
        inv_mass: chain.inv_mass,
    })
}

/// Runs `config.chains` independent chains, concurrently. Chain `c` draws
/// from stream `c` of a ChaCha generator keyed by `config.seed`, so the
/// output does not depend on scheduling.
pub fn hmc_sample(target: &dyn LogDensity, config: &HmcConfig) -> Result<SampleSet> {
    config.validate()?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        param_names: (0..target.dim()).map(|k| format!("param_{k}")).collect(),
        chains,
    })
}

struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &xi) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = xi - *m;
            *m += d / n;
            *s += d * (xi - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let n = self.count.max(2) as f64;
        self.m2.iter().map(|s| s / (n - 1.0)).collect()
    }
}

/// Returned by [`split_rhat`] when within-chain variance vanishes but chains disagree.
pub const RHAT_DISJOINT: f64 = 1.0e6;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn split_chains(chains: &[Vec<f64>]) -> Result<Vec<&[f64]>> {
    if chains.len() < 2 {
        return Err(Error::InsufficientDraws(format!(
            "need at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::InsufficientDraws(format!(
            "need at least 4 draws per chain, got {n}"
        )));
    }
    let half = n / 2;
    Ok(chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect())
}

/// Split potential scale reduction factor for one parameter, given per-chain traces.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let halves = split_chains(chains)?;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| var(h)).collect::<Vec<_>>());
    let b_over_n = var(&means);
    if w <= 0.0 {
        return Ok(if b_over_n <= 0.0 { 1.0 } else { RHAT_DISJOINT });
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

/// Effective sample size of one parameter by initial-positive-sequence
/// truncation of the multi-chain autocorrelation, on split chains. Capped
/// at the total number of draws.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    let halves = split_chains(chains)?;
    let m = halves.len();
    let n = halves[0].len();
    let total = (m * n) as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let centered: Vec<Vec<f64>> = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| x - mu).collect())
        .collect();
    let acov = |lag: usize| -> f64 {
        centered
            .iter()
            .map(|c| {
                c[..n - lag]
                    .iter()
                    .zip(&c[lag..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let var_plus = mean_var * (nf - 1.0) / nf + var(&means);
    if !(var_plus > 0.0) {
        return Ok(total);
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rhos = vec![1.0];
    let mut even = 1.0;
    let mut odd = rho(1);
    rhos.push(odd);
    let mut t = 1;
    while t + 2 < n.saturating_sub(3) && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rhos.push(even);
            rhos.push(odd);
        }
        t += 2;
    }
    let max_t = rhos.len() - 1;
    let tail = if even > 0.0 && even + odd < 0.0 {
        even
    } else {
        0.0
    };
    // enforce monotone decrease of paired sums
    let mut k = 1;
    while k + 2 <= max_t {
        let prev = rhos[k - 1] + rhos[k];
        if rhos[k + 1] + rhos[k + 2] > prev {
            rhos[k + 1] = prev / 2.0;
            rhos[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let tau = (-1.0 + 2.0 * rhos.iter().sum::<f64>() + tail).max(1.0 / total.log10());
    Ok((total / tau).min(total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub accept_rate: Vec<f64>,
    pub divergences: Vec<usize>,
    pub step_size: Vec<f64>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::NAN, f64::min)
    }
}

pub fn diagnostics(samples: &SampleSet) -> Result<Diagnostics> {
    let dim = samples.dim();
    let per_param: Vec<(f64, f64)> = (0..dim)
        .into_par_iter()
        .map(|k| {
            let col = samples.column(k);
            Ok((split_rhat(&col)?, ess(&col)?))
        })
        .collect::<Result<_>>()?;
    Ok(Diagnostics {
        rhat: per_param.iter().map(|p| p.0).collect(),
        ess: per_param.iter().map(|p| p.1).collect(),
        accept_rate: samples.chains.iter().map(|c| c.accept_rate).collect(),
        divergences: samples.chains.iter().map(|c| c.divergences).collect(),
        step_size: samples.chains.iter().map(|c| c.step_size).collect(),
    })
}
