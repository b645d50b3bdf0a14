//! Topic models behind a common trait, looked up by name, and the shared
//! fit pipeline (sample, relabel, summarize, cluster).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hier::{
    DesignEncoder, HierParams, HierPosterior, HierSpec, VariancePrior, VarianceStructure,
};
use crate::inference::{
    diagnostics, hmc_sample, ChainSamples, Diagnostics, HmcConfig, LogDensity, SampleSet,
};
use crate::model::{MouPosterior, MouSpec, Phi, Theta};
use crate::posterior::{
    apply_perm, assign_documents, assign_documents_by_vote, assign_documents_with_doc_theta,
    relabel, relabel_to, summarize, ClusterAssignment, ScalarSummary, TopicDraws, TopicSummary,
};

/// Everything a registered model may need to build its posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub topics: usize,
    pub alpha: f64,
    pub eta: f64,
    pub fixed: Vec<String>,
    pub random: Option<String>,
    pub a: f64,
    pub b: f64,
    pub sigma2_beta: f64,
    pub variance_prior: VariancePrior,
    pub variance_structure: VarianceStructure,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            topics: 3,
            alpha: 1.0,
            eta: 1.0,
            fixed: Vec::new(),
            random: None,
            a: 0.1,
            b: 0.1,
            sigma2_beta: 1000.0,
            variance_prior: VariancePrior::InverseGamma,
            variance_structure: VarianceStructure::PerTopic,
        }
    }
}

/// Constrained quantities of one draw that every model exposes.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicView {
    /// Corpus-level topic proportions.
    pub theta: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    /// Per-document proportions, for models where they vary.
    pub doc_theta: Option<Vec<Vec<f64>>>,
}

/// Extra model-specific output, written as `<name>.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub value: Value,
}

pub trait TopicPosterior: LogDensity {
    fn param_names(&self) -> Vec<String>;
    fn num_topics(&self) -> usize;
    fn topic_view(&self, u: &[f64]) -> Result<TopicView>;
    /// Model-specific artifacts from the retained draws and their label permutations.
    fn artifacts(&self, _draws: &[&[f64]], _perms: &[Vec<usize>]) -> Result<Vec<Artifact>> {
        Ok(Vec::new())
    }
}

pub trait TopicModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn posterior<'a>(
        &self,
        corpus: &'a Corpus,
        settings: &ModelSettings,
    ) -> Result<Box<dyn TopicPosterior + 'a>>;
}

pub struct Mou;

impl TopicModel for Mou {
    fn name(&self) -> &'static str {
        "mou"
    }

    fn description(&self) -> &'static str {
        "survey-weighted mixture of unigrams"
    }

    fn posterior<'a>(
        &self,
        corpus: &'a Corpus,
        settings: &ModelSettings,
    ) -> Result<Box<dyn TopicPosterior + 'a>> {
        let spec = MouSpec::new(settings.topics, corpus.vocab_size())
            .with_concentrations(settings.alpha, settings.eta);
        Ok(Box::new(MouPosterior::new(corpus, spec)?))
    }
}

impl TopicPosterior for MouPosterior<'_> {
    fn param_names(&self) -> Vec<String> {
        MouPosterior::param_names(self)
    }

    fn num_topics(&self) -> usize {
        self.spec().topics
    }

    fn topic_view(&self, u: &[f64]) -> Result<TopicView> {
        let (theta, phi) = self.constrain(u)?;
        Ok(TopicView {
            theta: theta.values().to_vec(),
            phi: phi.rows().to_vec(),
            doc_theta: None,
        })
    }
}

pub struct HierMou;

impl TopicModel for HierMou {
    fn name(&self) -> &'static str {
        "hmou"
    }

    fn description(&self) -> &'static str {
        "mixture of unigrams with document-level fixed and random effects"
    }

    fn posterior<'a>(
        &self,
        corpus: &'a Corpus,
        settings: &ModelSettings,
    ) -> Result<Box<dyn TopicPosterior + 'a>> {
        if settings.fixed.is_empty() && settings.random.is_none() {
            return Err(Error::InvalidConfig(
                "hierarchical model needs at least one fixed or random covariate".into(),
            ));
        }
        let encoder = DesignEncoder::fit(corpus, &settings.fixed, settings.random.as_deref())?;
        let mut spec = HierSpec::new(
            settings.topics,
            corpus.vocab_size(),
            encoder.p(),
            encoder.r(),
        );
        spec.eta = settings.eta;
        spec.a = settings.a;
        spec.b = settings.b;
        spec.sigma2_beta = settings.sigma2_beta;
        spec.variance_prior = settings.variance_prior;
        spec.variance_structure = settings.variance_structure;
        Ok(Box::new(HierPosterior::new(corpus, spec, encoder)?))
    }
}

fn block_summary(
    draws: &[HierParams],
    pick: impl Fn(&HierParams) -> &Vec<Vec<f64>>,
    k: usize,
    c: usize,
) -> ScalarSummary {
    ScalarSummary::from_values(&draws.iter().map(|d| pick(d)[k][c]).collect::<Vec<_>>())
}

impl TopicPosterior for HierPosterior<'_> {
    fn param_names(&self) -> Vec<String> {
        HierPosterior::param_names(self)
    }

    fn num_topics(&self) -> usize {
        self.spec().topics
    }

    fn topic_view(&self, u: &[f64]) -> Result<TopicView> {
        let draw = self.constrain(u)?;
        let corpus = self.corpus();
        let doc_theta: Vec<Vec<f64>> = (0..corpus.len()).map(|d| self.doc_theta(u, d)).collect();
        let total: f64 = corpus.docs.iter().map(|d| d.weight).sum();
        let mut theta = vec![0.0; self.spec().topics];
        for (doc, t) in corpus.docs.iter().zip(&doc_theta) {
            for (acc, v) in theta.iter_mut().zip(t) {
                *acc += doc.weight * v / total;
            }
        }
        Ok(TopicView {
            theta,
            phi: draw.phi,
            doc_theta: Some(doc_theta),
        })
    }

    fn artifacts(&self, draws: &[&[f64]], perms: &[Vec<usize>]) -> Result<Vec<Artifact>> {
        let effects: Vec<HierParams> = draws
            .iter()
            .zip(perms)
            .map(|(u, p)| Ok(self.constrain(u)?.effects.permuted(p)))
            .collect::<Result<_>>()?;
        let enc = self.encoder();
        let cols = enc.column_names();
        let levels = enc.random_level_names();
        let k = self.spec().topics - 1;
        let mut beta = Vec::new();
        let mut gamma = Vec::new();
        let mut sigma2 = Vec::new();
        if !effects.is_empty() {
            for t in 0..k {
                for (c, name) in cols.iter().enumerate() {
                    beta.push(json!({"topic": t, "column": name, "summary": block_summary(&effects, |d| &d.beta, t, c)}));
                }
                for (c, name) in levels.iter().enumerate() {
                    gamma.push(json!({"topic": t, "level": name, "summary": block_summary(&effects, |d| &d.gamma, t, c)}));
                }
                if !effects[0].sigma2_gamma.is_empty() {
                    let s = ScalarSummary::from_values(
                        &effects
                            .iter()
                            .map(|d| d.sigma2_gamma[t])
                            .collect::<Vec<_>>(),
                    );
                    sigma2.push(json!({"topic": t, "summary": s}));
                }
            }
        }
        Ok(vec![
            Artifact {
                name: "effects".into(),
                value: json!({"reference_topic": k, "beta": beta, "gamma": gamma, "sigma2_gamma": sigma2}),
            },
            Artifact {
                name: "design".into(),
                value: json!({"spec": self.spec(), "encoder": enc}),
            },
            Artifact {
                name: "hier_draws".into(),
                value: serde_json::to_value(&effects).map_err(|e| Error::Json {
                    context: "hierarchical draws".into(),
                    source: e,
                })?,
            },
        ])
    }
}

/// Models addressable by name.
pub struct ModelRegistry {
    models: BTreeMap<&'static str, Box<dyn TopicModel>>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Mou));
        r.register(Box::new(HierMou));
        r
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            models: BTreeMap::new(),
        }
    }

    /// Adds a model, replacing any previous one with the same name.
    pub fn register(&mut self, model: Box<dyn TopicModel>) {
        self.models.insert(model.name(), model);
    }

    pub fn get(&self, name: &str) -> Result<&dyn TopicModel> {
        self.models.get(name).map(|m| m.as_ref()).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown model `{name}` (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.models.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Words listed per topic.
    pub top_k: usize,
    /// Align labels to this topic-word matrix instead of the best draw.
    pub reference_phi: Option<Vec<Vec<f64>>>,
    /// Cluster by per-draw majority vote instead of plug-in means.
    pub vote_assignment: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            top_k: 15,
            reference_phi: None,
            vote_assignment: false,
        }
    }
}

pub struct Fit {
    pub model: String,
    pub samples: SampleSet,
    /// Constrained draws after relabeling.
    pub draws: TopicDraws,
    pub perms: Vec<Vec<usize>>,
    pub summary: TopicSummary,
    pub assignments: ClusterAssignment,
    /// R-hat and ESS of the relabeled `theta` and `phi` draws; `None` with a single chain.
    pub diagnostics: Option<Diagnostics>,
    pub doc_theta_mean: Option<Vec<Vec<f64>>>,
    pub artifacts: Vec<Artifact>,
}

/// Samples the model's posterior and post-processes the draws.
pub fn fit_model(
    model: &dyn TopicModel,
    corpus: &Corpus,
    settings: &ModelSettings,
    hmc: &HmcConfig,
    options: &FitOptions,
) -> Result<Fit> {
    let post = model.posterior(corpus, settings)?;
    let samples = hmc_sample(&*post as &dyn LogDensity, hmc)?.with_param_names(post.param_names());
    let raw: Vec<&[f64]> = samples.iter_draws().collect();
    let views: Vec<TopicView> = raw
        .par_iter()
        .map(|u| post.topic_view(u))
        .collect::<Result<_>>()?;
    let unaligned = TopicDraws {
        theta: views.iter().map(|v| v.theta.clone()).collect(),
        phi: views.iter().map(|v| v.phi.clone()).collect(),
        log_post: samples.iter_log_post().collect(),
    };
    let relabeled = match &options.reference_phi {
        Some(r) => relabel_to(&unaligned, r),
        None => relabel(&unaligned),
    };
    let summary = summarize(&relabeled.draws, &corpus.vocab, options.top_k)?;

    let doc_theta_mean = views[0].doc_theta.as_ref().map(|first| {
        let mut acc = vec![vec![0.0; first[0].len()]; first.len()];
        for (v, perm) in views.iter().zip(&relabeled.perms) {
            for (a, t) in acc.iter_mut().zip(v.doc_theta.as_ref().unwrap()) {
                for (x, y) in a.iter_mut().zip(apply_perm(t, perm)) {
                    *x += y;
                }
            }
        }
        let n = views.len() as f64;
        acc.iter_mut()
            .for_each(|row| row.iter_mut().for_each(|x| *x /= n));
        acc
    });

    let phi_hat = Phi::new(normalized_rows(summary.phi_means()))?;
    let assignments = if options.vote_assignment {
        assign_documents_by_vote(corpus, &relabeled.draws)?
    } else if let Some(dt) = &doc_theta_mean {
        assign_documents_with_doc_theta(corpus, dt, &phi_hat)?
    } else {
        let theta_hat = Theta::new(normalized_rows(vec![summary.theta_means()]).remove(0))?;
        assign_documents(corpus, &theta_hat, &phi_hat)?
    };

    let diagnostics = match diagnostics(&constrained_samples(&samples, &relabeled.draws)) {
        Ok(d) => Some(d),
        Err(e) => {
            log::warn!("convergence diagnostics unavailable: {e}");
            None
        }
    };
    let artifacts = post.artifacts(&raw, &relabeled.perms)?;
    Ok(Fit {
        model: model.name().to_owned(),
        samples,
        draws: relabeled.draws,
        perms: relabeled.perms,
        summary,
        assignments,
        diagnostics,
        doc_theta_mean,
        artifacts,
    })
}

/// Relabeled constrained draws laid out per chain, for label-invariant diagnostics.
pub fn constrained_samples(samples: &SampleSet, draws: &TopicDraws) -> SampleSet {
    let j = draws.topics();
    let v = draws
        .phi
        .first()
        .and_then(|f| f.first())
        .map_or(0, Vec::len);
    let mut names: Vec<String> = (0..j).map(|k| format!("theta[{k}]")).collect();
    for k in 0..j {
        names.extend((0..v).map(|w| format!("phi[{k}][{w}]")));
    }
    let mut offset = 0;
    let chains = samples
        .chains
        .iter()
        .map(|c| {
            let n = c.draws.len();
            let flat = (offset..offset + n)
                .map(|i| {
                    let mut row = draws.theta[i].clone();
                    row.extend(draws.phi[i].iter().flatten());
                    row
                })
                .collect();
            offset += n;
            ChainSamples {
                draws: flat,
                ..c.clone()
            }
        })
        .collect();
    SampleSet {
        param_names: names,
        chains,
    }
}

fn normalized_rows(mut rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    for r in &mut rows {
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|x| *x /= s);
    }
    rows
}
