//! Mixture-of-unigrams under a survey-weighted pseudolikelihood.
//!
//! Each document contributes `w_d * log sum_j theta_j prod_v phi_{j,v}^{n_{d,v}}`;
//! the topic indicator is summed out analytically. The multinomial
//! coefficient is dropped since it does not depend on the parameters.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{BowDocument, Corpus};
use crate::error::{Error, Result};
use crate::inference::LogDensity;
use crate::simplex::{unconstrained_from_simplex, SimplexPoint};

pub const DEFAULT_MAX_TOPICS: usize = 64;
const SIMPLEX_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MouSpec {
    #[serde(rename = "J")]
    pub topics: usize,
    #[serde(rename = "V")]
    pub vocab_size: usize,
    pub alpha: f64,
    pub eta: f64,
}

impl MouSpec {
    pub fn new(topics: usize, vocab_size: usize) -> Self {
        Self {
            topics,
            vocab_size,
            alpha: 1.0,
            eta: 1.0,
        }
    }

    pub fn with_concentrations(mut self, alpha: f64, eta: f64) -> Self {
        self.alpha = alpha;
        self.eta = eta;
        self
    }

    pub fn validate(&self, max_topics: usize) -> Result<()> {
        if self.topics < 1 || self.topics > max_topics {
            return Err(Error::InvalidConfig(format!(
                "topics must be in [1, {max_topics}], got {}",
                self.topics
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary must hold at least 2 tokens, got {}",
                self.vocab_size
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

fn check_simplex(x: &[f64], what: &'static str) -> Result<()> {
    if x.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::DomainError(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = x.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::DomainError(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Corpus-level topic proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Theta(Vec<f64>);

impl Theta {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values, "theta")?;
        Ok(Self(values))
    }

    pub fn uniform(j: usize) -> Self {
        Self(vec![1.0 / j as f64; j])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Topic-word probabilities, one simplex row per topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phi(Vec<Vec<f64>>);

impl Phi {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let v = rows.first().map(Vec::len).unwrap_or(0);
        for r in &rows {
            if r.len() != v {
                return Err(Error::DimensionMismatch {
                    what: "phi row length",
                    expected: v,
                    got: r.len(),
                });
            }
            check_simplex(r, "phi row")?;
        }
        Ok(Self(rows))
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.0[j]
    }

    pub fn topics(&self) -> usize {
        self.0.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.0.first().map(Vec::len).unwrap_or(0)
    }
}

/// Serialized parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MouParams {
    pub theta: Theta,
    pub phi: Phi,
    pub spec: MouSpec,
}

impl MouParams {
    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| Error::Json {
            context: "parameter document".into(),
            source: e,
        })?;
        check_dims(&p.theta, &p.phi)?;
        if p.theta.len() != p.spec.topics || p.phi.vocab_size() != p.spec.vocab_size {
            return Err(Error::DimensionMismatch {
                what: "parameters vs spec",
                expected: p.spec.topics,
                got: p.theta.len(),
            });
        }
        Ok(p)
    }
}

fn check_dims(theta: &Theta, phi: &Phi) -> Result<()> {
    if theta.len() != phi.topics() {
        return Err(Error::DimensionMismatch {
            what: "topics in theta vs phi",
            expected: theta.len(),
            got: phi.topics(),
        });
    }
    Ok(())
}

/// Numerically stable `log sum exp`. Returns `-inf` when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Fills `terms[j] = log_theta[j] + sum_v n_v log_phi[j, v]` for a flat
/// row-major `log_phi` of shape `J x V`, turns `terms` into responsibilities
/// and returns the log marginal (unweighted). If the marginal is `-inf`,
/// `terms` is left holding the raw log terms.
pub(crate) fn doc_log_marginal(
    doc: &BowDocument,
    log_theta: &[f64],
    log_phi: &[f64],
    v: usize,
    terms: &mut [f64],
) -> f64 {
    for (j, t) in terms.iter_mut().enumerate() {
        let row = &log_phi[j * v..(j + 1) * v];
        let mut acc = log_theta[j];
        for &(w, n) in &doc.counts {
            acc += n as f64 * row[w];
        }
        *t = acc;
    }
    let lse = log_sum_exp(terms);
    if lse.is_finite() {
        for t in terms.iter_mut() {
            *t = (*t - lse).exp();
        }
    }
    lse
}

fn log_params(doc: &BowDocument, theta: &Theta, phi: &Phi) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(theta, phi)?;
    let v = phi.vocab_size();
    if let Some(&(w, _)) = doc.counts.iter().find(|&&(w, _)| w >= v) {
        return Err(Error::DimensionMismatch {
            what: "word index",
            expected: v,
            got: w,
        });
    }
    let log_theta = theta.values().iter().map(|x| x.ln()).collect();
    let log_phi = phi.rows().iter().flatten().map(|x| x.ln()).collect();
    Ok((log_theta, log_phi))
}

/// Weighted log pseudolikelihood of one document.
pub fn log_doc_pseudolikelihood(doc: &BowDocument, theta: &Theta, phi: &Phi) -> Result<f64> {
    let (lt, lp) = log_params(doc, theta, phi)?;
    let mut terms = vec![0.0; theta.len()];
    let lse = doc_log_marginal(doc, &lt, &lp, phi.vocab_size(), &mut terms);
    if doc.weight == 0.0 {
        return Ok(0.0);
    }
    Ok(doc.weight * lse)
}

/// Posterior over the document's topic, `r_j ∝ theta_j prod_v phi_{j,v}^{n_v}`.
pub fn responsibilities(doc: &BowDocument, theta: &Theta, phi: &Phi) -> Result<Vec<f64>> {
    let (lt, lp) = log_params(doc, theta, phi)?;
    responsibilities_from_logs(doc, &lt, &lp, phi.vocab_size())
}

pub(crate) fn responsibilities_from_logs(
    doc: &BowDocument,
    log_theta: &[f64],
    log_phi: &[f64],
    v: usize,
) -> Result<Vec<f64>> {
    let mut terms = vec![0.0; log_theta.len()];
    let lse = doc_log_marginal(doc, log_theta, log_phi, v, &mut terms);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateDocument(doc.id.clone()));
    }
    if !lse.is_finite() {
        return Err(Error::NonFinite("document log marginal"));
    }
    Ok(terms)
}

/// Log density of a symmetric Dirichlet with normalizing constant.
/// A one-coordinate simplex contributes zero.
pub fn dirichlet_log_density(x: &[f64], concentration: f64) -> Result<f64> {
    let k = x.len();
    if k <= 1 {
        return Ok(0.0);
    }
    let mut acc = ln_gamma(concentration * k as f64) - k as f64 * ln_gamma(concentration);
    for &xi in x {
        if xi == 0.0 {
            if concentration < 1.0 {
                return Err(Error::DomainError(
                    "simplex coordinate is 0 under a concentration below 1".into(),
                ));
            }
            if concentration > 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            continue;
        }
        acc += (concentration - 1.0) * xi.ln();
    }
    Ok(acc)
}

/// `log Dir(theta | alpha) + sum_j log Dir(phi_j | eta)`.
pub fn log_prior(spec: &MouSpec, theta: &Theta, phi: &Phi) -> Result<f64> {
    check_dims(theta, phi)?;
    let mut acc = dirichlet_log_density(theta.values(), spec.alpha)?;
    for row in phi.rows() {
        acc += dirichlet_log_density(row, spec.eta)?;
    }
    Ok(acc)
}

/// Inference-space image of `(theta, phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams {
    pub theta_free: Vec<f64>,
    pub phi_free: Vec<Vec<f64>>,
}

impl UnconstrainedParams {
    pub fn from_flat(u: &[f64], spec: &MouSpec) -> Result<Self> {
        let (j, v) = (spec.topics, spec.vocab_size);
        let dim = mou_dim(spec);
        if u.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "unconstrained vector",
                expected: dim,
                got: u.len(),
            });
        }
        let theta_free = u[..j - 1].to_vec();
        let phi_free = u[j - 1..].chunks(v - 1).map(<[f64]>::to_vec).collect();
        Ok(Self {
            theta_free,
            phi_free,
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.theta_free.clone();
        for r in &self.phi_free {
            out.extend_from_slice(r);
        }
        out
    }

    pub fn from_constrained(theta: &Theta, phi: &Phi) -> Result<Self> {
        check_dims(theta, phi)?;
        Ok(Self {
            theta_free: unconstrained_from_simplex(theta.values())?,
            phi_free: phi
                .rows()
                .iter()
                .map(|r| unconstrained_from_simplex(r))
                .collect::<Result<_>>()?,
        })
    }

    pub fn constrain(&self) -> Result<(Theta, Phi)> {
        if self.to_flat().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("unconstrained parameters"));
        }
        let theta = Theta(SimplexPoint::forward(&self.theta_free).simplex());
        let phi = Phi(self
            .phi_free
            .iter()
            .map(|r| SimplexPoint::forward(r).simplex())
            .collect());
        Ok((theta, phi))
    }
}

/// Unconstrained dimension: `(J - 1) + J (V - 1)`.
pub fn mou_dim(spec: &MouSpec) -> usize {
    spec.topics - 1 + spec.topics * (spec.vocab_size - 1)
}

/// Forward pass of the topic-word block: per-row simplex points and the flat log-phi matrix.
pub(crate) struct PhiBlock {
    pub points: Vec<SimplexPoint>,
    pub log_phi: Vec<f64>,
}

impl PhiBlock {
    pub fn forward(free: &[f64], j: usize, v: usize) -> Self {
        let points: Vec<SimplexPoint> = free
            .chunks(v - 1)
            .take(j)
            .map(SimplexPoint::forward)
            .collect();
        let log_phi = points
            .iter()
            .flat_map(|p| p.log_x.iter().copied())
            .collect();
        Self { points, log_phi }
    }

    /// Dirichlet(eta) prior on each row plus the row Jacobians; adds `eta - 1`
    /// to the log-phi gradient accumulator.
    pub fn prior_and_jacobian(&self, eta: f64, g_log_phi: &mut [f64]) -> f64 {
        let v = self.points.first().map(SimplexPoint::len).unwrap_or(0);
        let norm = ln_gamma(eta * v as f64) - v as f64 * ln_gamma(eta);
        let mut acc = 0.0;
        for p in &self.points {
            acc += norm + (eta - 1.0) * p.log_x.iter().sum::<f64>() + p.log_jac;
        }
        for g in g_log_phi.iter_mut() {
            *g += eta - 1.0;
        }
        acc
    }

    pub fn pullback(&self, g_log_phi: &[f64], grad: &mut [f64]) {
        let v = self.points.first().map(SimplexPoint::len).unwrap_or(0);
        for (j, p) in self.points.iter().enumerate() {
            p.pullback(
                &g_log_phi[j * v..(j + 1) * v],
                true,
                &mut grad[j * (v - 1)..(j + 1) * (v - 1)],
            );
        }
    }
}

/// The MoU log posterior in unconstrained space.
#[derive(Debug, Clone)]
pub struct MouPosterior<'a> {
    corpus: &'a Corpus,
    spec: MouSpec,
}

impl<'a> MouPosterior<'a> {
    pub fn new(corpus: &'a Corpus, spec: MouSpec) -> Result<Self> {
        spec.validate(DEFAULT_MAX_TOPICS)?;
        if corpus.vocab_size() != spec.vocab_size {
            return Err(Error::DimensionMismatch {
                what: "vocabulary size",
                expected: spec.vocab_size,
                got: corpus.vocab_size(),
            });
        }
        Ok(Self { corpus, spec })
    }

    pub fn spec(&self) -> &MouSpec {
        &self.spec
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.spec.topics - 1)
            .map(|k| format!("theta_free[{k}]"))
            .collect();
        for j in 0..self.spec.topics {
            for w in 0..self.spec.vocab_size - 1 {
                names.push(format!("phi_free[{j}][{w}]"));
            }
        }
        names
    }

    pub fn constrain(&self, u: &[f64]) -> Result<(Theta, Phi)> {
        UnconstrainedParams::from_flat(u, &self.spec)?.constrain()
    }

    /// Log posterior (with Jacobians) and its gradient. Documents are reduced in corpus order.
    pub fn log_posterior_and_grad(&self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        let dim = mou_dim(&self.spec);
        if u.len() != dim || grad.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "unconstrained vector",
                expected: dim,
                got: u.len(),
            });
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("unconstrained parameters"));
        }
        Ok(self.eval(u, grad))
    }

    fn eval(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let (j, v) = (self.spec.topics, self.spec.vocab_size);
        let theta_pt = SimplexPoint::forward(&u[..j - 1]);
        let phi = PhiBlock::forward(&u[j - 1..], j, v);

        let mut g_log_theta = vec![0.0; j];
        let mut g_log_phi = vec![0.0; j * v];
        let mut terms = vec![0.0; j];
        let mut value = 0.0;
        for doc in &self.corpus.docs {
            if doc.weight == 0.0 {
                continue;
            }
            let lse = doc_log_marginal(doc, &theta_pt.log_x, &phi.log_phi, v, &mut terms);
            if !lse.is_finite() {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::NEG_INFINITY;
            }
            value += doc.weight * lse;
            for (k, &r) in terms.iter().enumerate() {
                let wr = doc.weight * r;
                g_log_theta[k] += wr;
                let row = &mut g_log_phi[k * v..(k + 1) * v];
                for &(w, n) in &doc.counts {
                    row[w] += wr * n as f64;
                }
            }
        }

        // theta prior + Jacobian
        let alpha = self.spec.alpha;
        if j > 1 {
            value += ln_gamma(alpha * j as f64) - j as f64 * ln_gamma(alpha)
                + (alpha - 1.0) * theta_pt.log_x.iter().sum::<f64>()
                + theta_pt.log_jac;
            for g in &mut g_log_theta {
                *g += alpha - 1.0;
            }
        }
        value += phi.prior_and_jacobian(self.spec.eta, &mut g_log_phi);

        grad.iter_mut().for_each(|g| *g = 0.0);
        theta_pt.pullback(&g_log_theta, true, &mut grad[..j - 1]);
        phi.pullback(&g_log_phi, &mut grad[j - 1..]);
        value
    }
}

impl LogDensity for MouPosterior<'_> {
    fn dim(&self) -> usize {
        mou_dim(&self.spec)
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        self.eval(x, grad)
    }
}
