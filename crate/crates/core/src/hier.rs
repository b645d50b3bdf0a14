//! Hierarchical mixture of unigrams: per-document topic proportions from
//! fixed and random effects through a softmax with the last topic as the
//! reference category.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{Corpus, Covariates};
use crate::error::{Error, Result};
use crate::inference::LogDensity;
use crate::model::{doc_log_marginal, log_sum_exp, PhiBlock, Theta, DEFAULT_MAX_TOPICS};
use crate::posterior::{quantile, ScalarSummary};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariancePrior {
    /// `IG(a, b)` on the random-effect variance.
    InverseGamma,
    /// `Gamma(shape a, rate b)` on the random-effect variance.
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceStructure {
    /// One variance per non-reference topic.
    PerTopic,
    /// A single variance shared by all non-reference topics.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierSpec {
    #[serde(rename = "J")]
    pub topics: usize,
    #[serde(rename = "V")]
    pub vocab_size: usize,
    pub eta: f64,
    pub p: usize,
    pub r: usize,
    pub a: f64,
    pub b: f64,
    pub sigma2_beta: f64,
    pub variance_prior: VariancePrior,
    pub variance_structure: VarianceStructure,
}

impl HierSpec {
    pub fn new(topics: usize, vocab_size: usize, p: usize, r: usize) -> Self {
        Self {
            topics,
            vocab_size,
            eta: 1.0,
            p,
            r,
            a: 0.1,
            b: 0.1,
            sigma2_beta: 1000.0,
            variance_prior: VariancePrior::InverseGamma,
            variance_structure: VarianceStructure::PerTopic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 || self.topics > DEFAULT_MAX_TOPICS {
            return Err(Error::InvalidConfig(format!(
                "hierarchical model needs 2..={DEFAULT_MAX_TOPICS} topics, got {}",
                self.topics
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig(
                "vocabulary must hold at least 2 tokens".into(),
            ));
        }
        if self.p == 0 {
            return Err(Error::InvalidConfig(
                "design needs at least the intercept column".into(),
            ));
        }
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("sigma2_beta", self.sigma2_beta),
            ("eta", self.eta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Number of free variance parameters.
    pub fn variance_params(&self) -> usize {
        match (self.r, self.variance_structure) {
            (0, _) => 0,
            (_, VarianceStructure::PerTopic) => self.topics - 1,
            (_, VarianceStructure::Shared) => 1,
        }
    }

    pub fn dim(&self) -> usize {
        let k = self.topics - 1;
        k * self.p + k * self.r + self.variance_params() + self.topics * (self.vocab_size - 1)
    }
}

/// One document's row of the fixed-effect design and its random-effect incidence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub x: Vec<f64>,
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalCovariate {
    pub name: String,
    /// Sorted levels; the first is the reference level.
    pub levels: Vec<String>,
}

impl CategoricalCovariate {
    fn position(&self, level: &str) -> Option<usize> {
        self.levels.binary_search_by(|l| l.as_str().cmp(level)).ok()
    }
}

/// Dummy coding of categorical covariates: an intercept, one indicator per
/// non-reference level of each fixed covariate, and a one-hot incidence
/// vector over the levels of the random-effect covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignEncoder {
    pub fixed: Vec<CategoricalCovariate>,
    pub random: Option<CategoricalCovariate>,
}

impl DesignEncoder {
    /// Collects levels from the corpus. Every document must carry every declared covariate.
    pub fn fit(corpus: &Corpus, fixed: &[String], random: Option<&str>) -> Result<Self> {
        let collect = |name: &str| -> Result<CategoricalCovariate> {
            let mut levels = BTreeSet::new();
            for d in &corpus.docs {
                let level = d
                    .covariates
                    .get(name)
                    .ok_or_else(|| Error::MissingCovariate {
                        doc: d.id.clone(),
                        name: name.to_owned(),
                    })?;
                levels.insert(level.clone());
            }
            Ok(CategoricalCovariate {
                name: name.to_owned(),
                levels: levels.into_iter().collect(),
            })
        };
        let mut seen = BTreeSet::new();
        for n in fixed.iter().map(String::as_str).chain(random) {
            if !seen.insert(n) {
                return Err(Error::InvalidConfig(format!(
                    "covariate `{n}` declared twice"
                )));
            }
        }
        Ok(Self {
            fixed: fixed.iter().map(|n| collect(n)).collect::<Result<_>>()?,
            random: random.map(collect).transpose()?,
        })
    }

    pub fn p(&self) -> usize {
        1 + self.fixed.iter().map(|c| c.levels.len() - 1).sum::<usize>()
    }

    pub fn r(&self) -> usize {
        self.random.as_ref().map_or(0, |c| c.levels.len())
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["(intercept)".to_owned()];
        for c in &self.fixed {
            for l in &c.levels[1..] {
                names.push(format!("{}={}", c.name, l));
            }
        }
        names
    }

    pub fn random_level_names(&self) -> Vec<String> {
        self.random
            .as_ref()
            .map(|c| {
                c.levels
                    .iter()
                    .map(|l| format!("{}={}", c.name, l))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn encode_fixed(&self, cov: &Covariates, doc: &str) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.p()];
        x[0] = 1.0;
        let mut col = 1;
        for c in &self.fixed {
            let level = cov.get(&c.name).ok_or_else(|| Error::MissingCovariate {
                doc: doc.to_owned(),
                name: c.name.clone(),
            })?;
            let pos = c.position(level).ok_or_else(|| Error::UnknownLevel {
                name: c.name.clone(),
                level: level.clone(),
            })?;
            if pos > 0 {
                x[col + pos - 1] = 1.0;
            }
            col += c.levels.len() - 1;
        }
        Ok(x)
    }

    /// Encodes a training document; every covariate must be present and known.
    pub fn encode(&self, cov: &Covariates, doc: &str) -> Result<DesignRow> {
        let x = self.encode_fixed(cov, doc)?;
        let mut psi = vec![0.0; self.r()];
        if let Some(c) = &self.random {
            let level = cov.get(&c.name).ok_or_else(|| Error::MissingCovariate {
                doc: doc.to_owned(),
                name: c.name.clone(),
            })?;
            let pos = c.position(level).ok_or_else(|| Error::UnknownLevel {
                name: c.name.clone(),
                level: level.clone(),
            })?;
            psi[pos] = 1.0;
        }
        Ok(DesignRow { x, psi })
    }

    /// Encodes a group for prediction. Fixed covariates are required; a
    /// missing or unseen random-effect level contributes zero.
    pub fn encode_group(&self, combo: &Covariates) -> Result<DesignRow> {
        for k in combo.keys() {
            let known = self.fixed.iter().any(|c| &c.name == k)
                || self.random.as_ref().is_some_and(|c| &c.name == k);
            if !known {
                return Err(Error::InvalidInput(format!(
                    "`{k}` is not a declared covariate"
                )));
            }
        }
        let x = self.encode_fixed(combo, "<group>")?;
        let mut psi = vec![0.0; self.r()];
        if let Some(c) = &self.random {
            match combo.get(&c.name) {
                Some(level) => match c.position(level) {
                    Some(pos) => psi[pos] = 1.0,
                    None => log::warn!(
                        "level `{level}` of `{}` was not seen in fitting; using a zero random effect",
                        c.name
                    ),
                },
                None => log::warn!("no level given for `{}`; using a zero random effect", c.name),
            }
        }
        Ok(DesignRow { x, psi })
    }

    /// Inverse of [`DesignEncoder::encode`] for rows it produced.
    pub fn decode(&self, row: &DesignRow) -> Covariates {
        let mut out = Covariates::new();
        let mut col = 1;
        for c in &self.fixed {
            let k = c.levels.len() - 1;
            let hit = (0..k).find(|&i| row.x[col + i] == 1.0);
            out.insert(c.name.clone(), c.levels[hit.map_or(0, |i| i + 1)].clone());
            col += k;
        }
        if let Some(c) = &self.random {
            if let Some(pos) = row.psi.iter().position(|&v| v == 1.0) {
                out.insert(c.name.clone(), c.levels[pos].clone());
            }
        }
        out
    }
}

/// Fixed effects `beta` (`(J-1) x p`), random effects `gamma` (`(J-1) x r`)
/// and random-effect variances. The reference topic's effects are zero and not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierParams {
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub sigma2_gamma: Vec<f64>,
}

impl HierParams {
    pub fn zeros(topics: usize, p: usize, r: usize) -> Self {
        Self {
            beta: vec![vec![0.0; p]; topics - 1],
            gamma: vec![vec![0.0; r]; topics - 1],
            sigma2_gamma: vec![1.0; topics - 1],
        }
    }

    pub fn topics(&self) -> usize {
        self.beta.len() + 1
    }

    /// Relabels topics so that new topic `k` is old topic `perm[k]`, keeping the
    /// last topic as the zero reference. Effects are re-expressed relative to
    /// the new reference; variances follow their topics.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let j = self.topics();
        let last = j - 1;
        let eff = |m: &[Vec<f64>], k: usize| -> Vec<f64> {
            if k == last {
                vec![0.0; m.first().map_or(0, Vec::len)]
            } else {
                m[k].clone()
            }
        };
        let new_ref = perm[last];
        let rebase = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let base = eff(m, new_ref);
            (0..last)
                .map(|k| {
                    eff(m, perm[k])
                        .iter()
                        .zip(&base)
                        .map(|(a, b)| a - b)
                        .collect()
                })
                .collect()
        };
        let sigma2_gamma = if self.sigma2_gamma.is_empty() {
            Vec::new()
        } else {
            (0..last)
                .map(|k| {
                    let src = if perm[k] == last { new_ref } else { perm[k] };
                    self.sigma2_gamma.get(src).copied().unwrap_or(f64::NAN)
                })
                .collect()
        };
        Self {
            beta: rebase(&self.beta),
            gamma: rebase(&self.gamma),
            sigma2_gamma,
        }
    }
}

/// `xi_j = x . beta_j + psi . gamma_j` for the non-reference topics.
pub fn linear_predictor(row: &DesignRow, params: &HierParams) -> Result<Vec<f64>> {
    let p = row.x.len();
    let r = row.psi.len();
    let mut xi = Vec::with_capacity(params.beta.len());
    for (b, g) in params.beta.iter().zip(&params.gamma) {
        if b.len() != p {
            return Err(Error::DimensionMismatch {
                what: "fixed effects",
                expected: p,
                got: b.len(),
            });
        }
        if g.len() != r {
            return Err(Error::DimensionMismatch {
                what: "random effects",
                expected: r,
                got: g.len(),
            });
        }
        xi.push(dot(&row.x, b) + dot(&row.psi, g));
    }
    Ok(xi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log of the softmax over `[xi, 0]`.
pub fn log_softmax_with_reference(xi: &[f64], out: &mut [f64]) {
    let j = xi.len() + 1;
    out[..j - 1].copy_from_slice(xi);
    out[j - 1] = 0.0;
    let lse = log_sum_exp(&out[..j]);
    for v in out[..j].iter_mut() {
        *v -= lse;
    }
}

pub fn softmax_with_reference(xi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xi.len() + 1];
    log_softmax_with_reference(xi, &mut out);
    out.iter().map(|v| v.exp()).collect()
}

pub fn topic_proportions_from_effects(row: &DesignRow, params: &HierParams) -> Result<Theta> {
    let xi = linear_predictor(row, params)?;
    let mut t = softmax_with_reference(&xi);
    // absorb rounding so the result passes the simplex check
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    Theta::new(t)
}

/// Inverse-gamma log density with shape `a` and rate `b`.
pub fn inverse_gamma_log_density(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

pub fn gamma_log_density(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x
}

fn normal_block(v: &[f64], var: f64) -> f64 {
    -0.5 * v.len() as f64 * (LN_2PI + var.ln()) - 0.5 * v.iter().map(|x| x * x).sum::<f64>() / var
}

/// Normal priors on the effects plus the variance prior.
pub fn log_prior_hier(params: &HierParams, spec: &HierSpec) -> Result<f64> {
    if params.sigma2_gamma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::DomainError(
            "random-effect variance must be positive".into(),
        ));
    }
    let variance_density = |s: f64| match spec.variance_prior {
        VariancePrior::InverseGamma => inverse_gamma_log_density(s, spec.a, spec.b),
        VariancePrior::Gamma => gamma_log_density(s, spec.a, spec.b),
    };
    let mut acc = 0.0;
    for (k, (b, g)) in params.beta.iter().zip(&params.gamma).enumerate() {
        acc += normal_block(b, spec.sigma2_beta);
        let s = params.sigma2_gamma[k];
        acc += normal_block(g, s);
        if spec.variance_structure == VarianceStructure::PerTopic {
            acc += variance_density(s);
        }
    }
    if spec.variance_structure == VarianceStructure::Shared {
        acc += variance_density(params.sigma2_gamma[0]);
    }
    Ok(acc)
}

/// Constrained view of one unconstrained hierarchical draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierDraw {
    pub effects: HierParams,
    pub phi: Vec<Vec<f64>>,
}

struct Layout {
    k: usize,
    p: usize,
    r: usize,
    nvar: usize,
}

impl Layout {
    fn new(spec: &HierSpec) -> Self {
        Self {
            k: spec.topics - 1,
            p: spec.p,
            r: spec.r,
            nvar: spec.variance_params(),
        }
    }
    fn beta(&self) -> std::ops::Range<usize> {
        0..self.k * self.p
    }
    fn gamma(&self) -> std::ops::Range<usize> {
        let s = self.k * self.p;
        s..s + self.k * self.r
    }
    fn tau(&self) -> std::ops::Range<usize> {
        let s = self.k * (self.p + self.r);
        s..s + self.nvar
    }
    fn phi_start(&self) -> usize {
        self.tau().end
    }
}

/// The hMoU log posterior over `(beta, gamma, log sigma2_gamma, phi_free)`.
#[derive(Debug, Clone)]
pub struct HierPosterior<'a> {
    corpus: &'a Corpus,
    spec: HierSpec,
    encoder: DesignEncoder,
    rows: Vec<DesignRow>,
}

impl<'a> HierPosterior<'a> {
    pub fn new(corpus: &'a Corpus, mut spec: HierSpec, encoder: DesignEncoder) -> Result<Self> {
        spec.p = encoder.p();
        spec.r = encoder.r();
        spec.validate()?;
        if corpus.vocab_size() != spec.vocab_size {
            return Err(Error::DimensionMismatch {
                what: "vocabulary size",
                expected: spec.vocab_size,
                got: corpus.vocab_size(),
            });
        }
        let rows = corpus
            .docs
            .iter()
            .map(|d| encoder.encode(&d.covariates, &d.id))
            .collect::<Result<_>>()?;
        Ok(Self {
            corpus,
            spec,
            encoder,
            rows,
        })
    }

    pub fn spec(&self) -> &HierSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &DesignEncoder {
        &self.encoder
    }

    pub fn rows(&self) -> &[DesignRow] {
        &self.rows
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }

    pub fn param_names(&self) -> Vec<String> {
        let cols = self.encoder.column_names();
        let levels = self.encoder.random_level_names();
        let l = Layout::new(&self.spec);
        let mut names = Vec::with_capacity(self.spec.dim());
        for k in 0..l.k {
            names.extend(cols.iter().map(|c| format!("beta[{k}][{c}]")));
        }
        for k in 0..l.k {
            names.extend(levels.iter().map(|c| format!("gamma[{k}][{c}]")));
        }
        for k in 0..l.nvar {
            names.push(format!("log_sigma2_gamma[{k}]"));
        }
        for j in 0..self.spec.topics {
            for w in 0..self.spec.vocab_size - 1 {
                names.push(format!("phi_free[{j}][{w}]"));
            }
        }
        names
    }

    pub fn constrain(&self, u: &[f64]) -> Result<HierDraw> {
        if u.len() != self.spec.dim() {
            return Err(Error::DimensionMismatch {
                what: "unconstrained vector",
                expected: self.spec.dim(),
                got: u.len(),
            });
        }
        let l = Layout::new(&self.spec);
        let chunk = |s: &[f64], w: usize| -> Vec<Vec<f64>> {
            if w == 0 {
                vec![Vec::new(); l.k]
            } else {
                s.chunks(w).map(<[f64]>::to_vec).collect()
            }
        };
        let tau = &u[l.tau()];
        let sigma2_gamma = if tau.is_empty() {
            Vec::new()
        } else {
            (0..l.k).map(|k| tau[k.min(tau.len() - 1)].exp()).collect()
        };
        let phi = PhiBlock::forward(&u[l.phi_start()..], self.spec.topics, self.spec.vocab_size);
        Ok(HierDraw {
            effects: HierParams {
                beta: chunk(&u[l.beta()], l.p),
                gamma: chunk(&u[l.gamma()], l.r),
                sigma2_gamma,
            },
            phi: phi.points.iter().map(|p| p.simplex()).collect(),
        })
    }

    /// Topic proportions of document `d` at unconstrained point `u`.
    pub fn doc_theta(&self, u: &[f64], d: usize) -> Vec<f64> {
        let l = Layout::new(&self.spec);
        let xi = self.xi(u, &l, d);
        softmax_with_reference(&xi)
    }

    fn xi(&self, u: &[f64], l: &Layout, d: usize) -> Vec<f64> {
        let row = &self.rows[d];
        let beta = &u[l.beta()];
        let gamma = &u[l.gamma()];
        (0..l.k)
            .map(|k| {
                let mut s = dot(&row.x, &beta[k * l.p..(k + 1) * l.p]);
                if l.r > 0 {
                    s += dot(&row.psi, &gamma[k * l.r..(k + 1) * l.r]);
                }
                s
            })
            .collect()
    }

    pub fn log_posterior_and_grad(&self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        let dim = self.spec.dim();
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
        let spec = &self.spec;
        let (j, v) = (spec.topics, spec.vocab_size);
        let l = Layout::new(spec);
        let phi = PhiBlock::forward(&u[l.phi_start()..], j, v);
        grad.iter_mut().for_each(|g| *g = 0.0);

        let mut g_log_phi = vec![0.0; j * v];
        let mut log_theta = vec![0.0; j];
        let mut terms = vec![0.0; j];
        let mut value = 0.0;
        for (d, doc) in self.corpus.docs.iter().enumerate() {
            if doc.weight == 0.0 {
                continue;
            }
            let xi = self.xi(u, &l, d);
            log_softmax_with_reference(&xi, &mut log_theta);
            let lse = doc_log_marginal(doc, &log_theta, &phi.log_phi, v, &mut terms);
            if !lse.is_finite() {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::NEG_INFINITY;
            }
            value += doc.weight * lse;
            for (k, &r) in terms.iter().enumerate() {
                let wr = doc.weight * r;
                let row = &mut g_log_phi[k * v..(k + 1) * v];
                for &(w, n) in &doc.counts {
                    row[w] += wr * n as f64;
                }
            }
            let design = &self.rows[d];
            for k in 0..l.k {
                let g_xi = doc.weight * (terms[k] - log_theta[k].exp());
                if g_xi == 0.0 {
                    continue;
                }
                let gb = &mut grad[k * l.p..(k + 1) * l.p];
                for (g, x) in gb.iter_mut().zip(&design.x) {
                    *g += g_xi * x;
                }
                if l.r > 0 {
                    let off = l.gamma().start + k * l.r;
                    for (g, s) in grad[off..off + l.r].iter_mut().zip(&design.psi) {
                        *g += g_xi * s;
                    }
                }
            }
        }

        // fixed effects
        let s2b = spec.sigma2_beta;
        let beta = &u[l.beta()];
        value += -0.5 * beta.len() as f64 * (LN_2PI + s2b.ln())
            - 0.5 * beta.iter().map(|b| b * b).sum::<f64>() / s2b;
        for (g, b) in grad[l.beta()].iter_mut().zip(beta) {
            *g -= b / s2b;
        }

        // random effects and their variances on the log scale
        if l.r > 0 {
            let tau = &u[l.tau()];
            let gamma = &u[l.gamma()];
            let mut g_tau = vec![0.0; l.nvar];
            for k in 0..l.k {
                let ti = k.min(l.nvar - 1);
                let s2 = tau[ti].exp();
                let gk = &gamma[k * l.r..(k + 1) * l.r];
                let ss = gk.iter().map(|x| x * x).sum::<f64>();
                value += -0.5 * l.r as f64 * (LN_2PI + tau[ti]) - 0.5 * ss / s2;
                g_tau[ti] += -0.5 * l.r as f64 + 0.5 * ss / s2;
                let off = l.gamma().start + k * l.r;
                for (g, x) in grad[off..off + l.r].iter_mut().zip(gk) {
                    *g -= x / s2;
                }
            }
            let (a, b) = (spec.a, spec.b);
            let norm = a * b.ln() - ln_gamma(a);
            for (i, &t) in tau.iter().enumerate() {
                match spec.variance_prior {
                    VariancePrior::InverseGamma => {
                        value += norm - (a + 1.0) * t - b * (-t).exp() + t;
                        g_tau[i] += -(a + 1.0) + b * (-t).exp() + 1.0;
                    }
                    VariancePrior::Gamma => {
                        value += norm + (a - 1.0) * t - b * t.exp() + t;
                        g_tau[i] += (a - 1.0) - b * t.exp() + 1.0;
                    }
                }
            }
            grad[l.tau()].copy_from_slice(&g_tau);
        }

        value += phi.prior_and_jacobian(spec.eta, &mut g_log_phi);
        phi.pullback(&g_log_phi, &mut grad[l.phi_start()..]);
        value
    }
}

impl LogDensity for HierPosterior<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        self.eval(x, grad)
    }
}

/// Posterior summary of topic proportions for one covariate combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub topics: Vec<ScalarSummary>,
}

/// Evaluates the topic proportions of `combo` under every retained draw and
/// summarizes them per topic (mean and 2.5% / 97.5% quantiles).
pub fn group_topic_proportions(
    encoder: &DesignEncoder,
    combo: &Covariates,
    draws: &[HierParams],
) -> Result<GroupSummary> {
    if draws.is_empty() {
        return Err(Error::InsufficientDraws("no draws to summarize".into()));
    }
    let row = encoder.encode_group(combo)?;
    let thetas: Vec<Vec<f64>> = draws
        .iter()
        .map(|p| Ok(softmax_with_reference(&linear_predictor(&row, p)?)))
        .collect::<Result<_>>()?;
    let j = thetas[0].len();
    let topics = (0..j)
        .map(|k| {
            let mut col: Vec<f64> = thetas.iter().map(|t| t[k]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            ScalarSummary {
                mean,
                lo: quantile(&col, 0.025),
                hi: quantile(&col, 0.975),
            }
        })
        .collect();
    Ok(GroupSummary { topics })
}
