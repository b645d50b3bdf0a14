//! Simulation study: synthetic labeled populations, informative PPS samples,
//! repeated weighted and unweighted fits, and the RMSE / bias / interval-score
//! comparison.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    scale_weights, BowDocument, Corpus, Covariates, RawContent, RawDocument, Vocabulary,
};
use crate::error::{Error, Result};
use crate::inference::HmcConfig;
use crate::posterior::ScalarSummary;
use crate::registry::{fit_model, FitOptions, ModelSettings, Mou};

/// Peaked word profile used for the default topic-word rows.
pub const DEFAULT_PROFILE: [f64; 6] = [0.5, 0.2, 0.1, 0.1, 0.05, 0.05];

/// Row `j` is the profile rotated right by `j` places.
pub fn cyclic_phi(profile: &[f64], topics: usize) -> Vec<Vec<f64>> {
    let v = profile.len();
    (0..topics)
        .map(|j| (0..v).map(|w| profile[(w + v - j % v) % v]).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    #[serde(rename = "M_pop")]
    pub size: usize,
    pub lambda: f64,
    #[serde(rename = "V")]
    pub vocab_size: usize,
    #[serde(rename = "J")]
    pub topics: usize,
    pub theta_true: Vec<f64>,
    pub phi_true: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            size: 10_000,
            lambda: 30.0,
            vocab_size: 6,
            topics: 3,
            theta_true: vec![0.5, 0.3, 0.2],
            phi_true: cyclic_phi(&DEFAULT_PROFILE, 3),
            seed: 0,
        }
    }
}

fn check_simplex(x: &[f64], what: &str) -> Result<()> {
    if x.iter().any(|v| !(*v >= 0.0) || !v.is_finite())
        || (x.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(format!(
            "{what} must be a probability vector"
        )));
    }
    Ok(())
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidConfig(
                "population size must be positive".into(),
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.theta_true.len() != self.topics || self.phi_true.len() != self.topics {
            return Err(Error::InvalidConfig(format!(
                "theta_true and phi_true must have J = {} entries",
                self.topics
            )));
        }
        check_simplex(&self.theta_true, "theta_true")?;
        for row in &self.phi_true {
            if row.len() != self.vocab_size {
                return Err(Error::InvalidConfig(format!(
                    "phi_true rows must have V = {} entries",
                    self.vocab_size
                )));
            }
            check_simplex(row, "phi_true row")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationDoc {
    pub topic: usize,
    /// Dense word counts.
    pub counts: Vec<u32>,
}

impl PopulationDoc {
    pub fn length(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPopulation {
    pub config: PopulationConfig,
    pub docs: Vec<PopulationDoc>,
}

impl LabeledPopulation {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn topic_shares(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.config.topics];
        for d in &self.docs {
            counts[d.topic] += 1.0;
        }
        counts.iter().map(|c| c / self.docs.len() as f64).collect()
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_tokens((0..self.config.vocab_size).map(|w| format!("w{w}")))
            .expect("distinct synthetic tokens")
    }

    pub fn doc_id(index: usize) -> String {
        format!("doc{index:05}")
    }

    /// Population documents as JSONL records (unit weights, true topic as a covariate).
    pub fn raw_documents(&self, indices: &[usize], weights: Option<&[f64]>) -> Vec<RawDocument> {
        let vocab = self.vocabulary();
        indices
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let doc = &self.docs[d];
                let counts = doc
                    .counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(w, &c)| (vocab.token(w).to_owned(), u64::from(c)))
                    .collect();
                let mut covariates = Covariates::new();
                covariates.insert("true_topic".into(), doc.topic.to_string());
                RawDocument {
                    id: Self::doc_id(d),
                    content: RawContent::Counts(counts),
                    raw_weight: weights.map_or(1.0, |w| w[i]),
                    covariates,
                }
            })
            .collect()
    }
}

fn multinomial(rng: &mut impl Rng, n: u64, probs: &[f64]) -> Vec<u32> {
    let mut out = vec![0u32; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() || mass <= p {
            out[k] = left as u32;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[k] = draw as u32;
        left -= draw;
        mass -= p;
    }
    out
}

/// Draws `M_pop` documents: topic from `theta_true`, length from a Poisson
/// truncated to at least one word, counts from the topic's word distribution.
pub fn generate_population(config: &PopulationConfig) -> Result<LabeledPopulation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let topic_dist = WeightedIndex::new(&config.theta_true)
        .map_err(|e| Error::InvalidConfig(format!("theta_true: {e}")))?;
    let length_dist =
        Poisson::new(config.lambda).map_err(|e| Error::InvalidConfig(format!("lambda: {e}")))?;
    let docs = (0..config.size)
        .map(|_| {
            let topic = topic_dist.sample(&mut rng);
            let n = loop {
                let n: f64 = length_dist.sample(&mut rng);
                if n >= 1.0 {
                    break n as u64;
                }
            };
            PopulationDoc {
                topic,
                counts: multinomial(&mut rng, n, &config.phi_true[topic]),
            }
        })
        .collect();
    Ok(LabeledPopulation {
        config: config.clone(),
        docs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingDesign {
    pub target_topic: usize,
    /// Relative selection size `c` of target-topic documents.
    pub boost: f64,
    pub sample_size: usize,
}

impl Default for SamplingDesign {
    fn default() -> Self {
        Self {
            target_topic: 2,
            boost: 5.0,
            sample_size: 100,
        }
    }
}

impl SamplingDesign {
    pub fn validate(&self, pop_size: usize, topics: usize) -> Result<()> {
        if self.sample_size == 0 || self.sample_size > pop_size {
            return Err(Error::InvalidConfig(format!(
                "sample size must be in 1..={pop_size}, got {}",
                self.sample_size
            )));
        }
        if !(self.boost > 0.0 && self.boost.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "boost must be positive, got {}",
                self.boost
            )));
        }
        if self.target_topic >= topics {
            return Err(Error::InvalidConfig(format!(
                "target topic {} out of range for {topics} topics",
                self.target_topic
            )));
        }
        Ok(())
    }

    pub fn mechanism(&self) -> String {
        format!(
            "systematic PPS without replacement on a random permutation; size {} for topic {} documents, 1 otherwise; n = {}",
            self.boost, self.target_topic, self.sample_size
        )
    }
}

/// `pi_d = m s_d / sum(s)`, failing if any exceeds one.
pub fn inclusion_probabilities(
    pop: &LabeledPopulation,
    design: &SamplingDesign,
) -> Result<Vec<f64>> {
    design.validate(pop.len(), pop.config.topics)?;
    let size = |d: &PopulationDoc| {
        if d.topic == design.target_topic {
            design.boost
        } else {
            1.0
        }
    };
    let total: f64 = pop.docs.iter().map(size).sum();
    let m = design.sample_size as f64;
    let pi: Vec<f64> = pop.docs.iter().map(|d| m * size(d) / total).collect();
    let max_pi = pi.iter().copied().fold(0.0, f64::max);
    if max_pi > 1.0 + 1e-12 {
        return Err(Error::InfeasibleDesign { max_pi });
    }
    Ok(pi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformativeSample {
    /// Population indices, ascending.
    pub indices: Vec<usize>,
    pub inclusion: Vec<f64>,
    /// Inverse inclusion probabilities before scaling.
    pub raw_weights: Vec<f64>,
    /// Weights scaled to sum to the sample size.
    pub weights: Vec<f64>,
}

/// Fixed-size systematic PPS sample.
pub fn draw_informative_sample(
    pop: &LabeledPopulation,
    design: &SamplingDesign,
    rng: &mut impl Rng,
) -> Result<InformativeSample> {
    let pi = inclusion_probabilities(pop, design)?;
    let m = design.sample_size;
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.shuffle(rng);
    let mut next: f64 = rng.random();
    let mut cum = 0.0;
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; pop.len()];
    for &d in &order {
        cum += pi[d];
        if chosen.len() < m && next < cum {
            chosen.push(d);
            taken[d] = true;
            next += 1.0;
        }
    }
    // rounding in the running sum can leave the final point uncovered
    for &d in order.iter().rev() {
        if chosen.len() >= m {
            break;
        }
        if !taken[d] {
            chosen.push(d);
            taken[d] = true;
        }
    }
    chosen.sort_unstable();
    let inclusion: Vec<f64> = chosen.iter().map(|&d| pi[d]).collect();
    let raw_weights: Vec<f64> = inclusion.iter().map(|p| 1.0 / p).collect();
    let weights = scale_weights(&raw_weights)?;
    Ok(InformativeSample {
        indices: chosen,
        inclusion,
        raw_weights,
        weights,
    })
}

impl InformativeSample {
    /// Sampled documents as a corpus over the population vocabulary.
    pub fn corpus(&self, pop: &LabeledPopulation) -> Result<Corpus> {
        let docs = self
            .indices
            .iter()
            .zip(&self.weights)
            .map(|(&d, &w)| {
                let counts = pop.docs[d].counts.iter().enumerate().map(|(v, &c)| (v, c));
                let mut cov = Covariates::new();
                cov.insert("true_topic".into(), pop.docs[d].topic.to_string());
                BowDocument::new(LabeledPopulation::doc_id(d), counts, w).with_covariates(cov)
            })
            .collect();
        Corpus::new(pop.vocabulary(), docs)
    }
}

/// Horvitz-Thompson estimate of the population share of `topic`.
pub fn horvitz_thompson_share(
    pop: &LabeledPopulation,
    sample: &InformativeSample,
    topic: usize,
) -> f64 {
    sample
        .indices
        .iter()
        .zip(&sample.inclusion)
        .filter(|(&d, _)| pop.docs[d].topic == topic)
        .map(|(_, p)| 1.0 / p)
        .sum::<f64>()
        / pop.len() as f64
}

pub fn rmse(estimates: &[f64], truth: f64) -> f64 {
    (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64).sqrt()
}

pub fn abs_bias(estimates: &[f64], truth: f64) -> f64 {
    (estimates.iter().sum::<f64>() / estimates.len() as f64 - truth).abs()
}

/// `(u - l) + (2/alpha)(l - x) 1[x < l] + (2/alpha)(x - u) 1[x > u]`.
pub fn interval_score(lower: f64, upper: f64, truth: f64, alpha: f64) -> Result<f64> {
    if lower > upper {
        return Err(Error::InvalidInterval { lower, upper });
    }
    let mut s = upper - lower;
    if truth < lower {
        s += 2.0 / alpha * (lower - truth);
    }
    if truth > upper {
        s += 2.0 / alpha * (truth - upper);
    }
    Ok(s)
}

/// Average interval score over replicates.
pub fn mean_interval_score(intervals: &[(f64, f64)], truth: f64, alpha: f64) -> Result<f64> {
    let mut acc = 0.0;
    for &(l, u) in intervals {
        acc += interval_score(l, u, truth, alpha)?;
    }
    Ok(acc / intervals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub population: PopulationConfig,
    pub design: SamplingDesign,
    pub hmc: HmcConfig,
    pub alpha: f64,
    pub eta: f64,
    /// Number of replicates `K`.
    pub replicates: usize,
    /// Draw a new population for every replicate instead of sharing one.
    pub regenerate_population: bool,
    /// Master seed for samples and chains.
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            population: PopulationConfig::default(),
            design: SamplingDesign::default(),
            hmc: HmcConfig::default(),
            alpha: 1.0,
            eta: 1.0,
            replicates: 100,
            regenerate_population: false,
            seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig(
                "at least one replicate is required".into(),
            ));
        }
        self.population.validate()?;
        self.design
            .validate(self.population.size, self.population.topics)?;
        self.hmc.validate()
    }
}

/// Posterior means and 95% intervals of one fit, aligned to the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEstimates {
    pub theta: Vec<ScalarSummary>,
    pub phi: Vec<Vec<ScalarSummary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub weighted: FitEstimates,
    pub unweighted: FitEstimates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub rmse: f64,
    pub abs_bias: f64,
    pub interval_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub theta: BlockMetrics,
    pub phi: BlockMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    #[serde(rename = "K")]
    pub replicates: usize,
    pub completed: usize,
    pub failed: Vec<FailedReplicate>,
    pub mechanism: String,
    pub weighted: ModelMetrics,
    pub unweighted: ModelMetrics,
    pub results: Vec<ReplicateResult>,
}

impl ReplicationReport {
    /// Two rows (theta, phi), one column per model and metric.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "block,weighted_rmse,weighted_abs_bias,weighted_interval_score,unweighted_rmse,unweighted_abs_bias,unweighted_interval_score"
        )?;
        for (name, w, u) in [
            ("theta", self.weighted.theta, self.unweighted.theta),
            ("phi", self.weighted.phi, self.unweighted.phi),
        ] {
            writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                w.rmse, w.abs_bias, w.interval_score, u.rmse, u.abs_bias, u.interval_score
            )?;
        }
        Ok(())
    }
}

/// Elementwise metrics over replicates, averaged across the block's entries.
pub fn block_metrics(per_replicate: &[Vec<ScalarSummary>], truth: &[f64]) -> Result<BlockMetrics> {
    let n = truth.len() as f64;
    let mut out = BlockMetrics {
        rmse: 0.0,
        abs_bias: 0.0,
        interval_score: 0.0,
    };
    for (i, &t) in truth.iter().enumerate() {
        let means: Vec<f64> = per_replicate.iter().map(|r| r[i].mean).collect();
        let intervals: Vec<(f64, f64)> = per_replicate.iter().map(|r| (r[i].lo, r[i].hi)).collect();
        out.rmse += rmse(&means, t) / n;
        out.abs_bias += abs_bias(&means, t) / n;
        out.interval_score += mean_interval_score(&intervals, t, 0.05)? / n;
    }
    Ok(out)
}

fn model_metrics(results: &[&FitEstimates], pop: &PopulationConfig) -> Result<ModelMetrics> {
    let theta: Vec<Vec<ScalarSummary>> = results.iter().map(|r| r.theta.clone()).collect();
    let phi: Vec<Vec<ScalarSummary>> = results.iter().map(|r| r.phi.concat()).collect();
    Ok(ModelMetrics {
        theta: block_metrics(&theta, &pop.theta_true)?,
        phi: block_metrics(&phi, &pop.phi_true.concat())?,
    })
}

fn sample_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 + 1);
    rng
}

fn fit_estimates(corpus: &Corpus, study: &StudyConfig, hmc: &HmcConfig) -> Result<FitEstimates> {
    let settings = ModelSettings {
        topics: study.population.topics,
        alpha: study.alpha,
        eta: study.eta,
        ..ModelSettings::default()
    };
    let options = FitOptions {
        top_k: 0,
        reference_phi: Some(study.population.phi_true.clone()),
        vote_assignment: false,
    };
    let fit = fit_model(&Mou, corpus, &settings, hmc, &options)?;
    Ok(FitEstimates {
        theta: fit.summary.theta,
        phi: fit.summary.phi,
    })
}

fn run_replicate(
    study: &StudyConfig,
    shared: Option<&LabeledPopulation>,
    k: usize,
) -> Result<ReplicateResult> {
    let owned;
    let pop = match shared {
        Some(p) => p,
        None => {
            let mut cfg = study.population.clone();
            cfg.seed = cfg.seed.wrapping_add(k as u64);
            owned = generate_population(&cfg)?;
            &owned
        }
    };
    let sample = draw_informative_sample(pop, &study.design, &mut sample_rng(study.seed, k))?;
    let weighted = sample.corpus(pop)?;
    let unweighted = weighted.unweighted();
    let hmc = HmcConfig {
        seed: study
            .hmc
            .seed
            .wrapping_add((k as u64).wrapping_mul(0x9E37_79B9)),
        ..study.hmc.clone()
    };
    Ok(ReplicateResult {
        replicate: k,
        weighted: fit_estimates(&weighted, study, &hmc)?,
        unweighted: fit_estimates(&unweighted, study, &hmc)?,
    })
}

/// The population and the first replicate's sample of a study.
pub fn simulate_once(study: &StudyConfig) -> Result<(LabeledPopulation, InformativeSample)> {
    study.population.validate()?;
    study
        .design
        .validate(study.population.size, study.population.topics)?;
    let pop = generate_population(&study.population)?;
    let sample = draw_informative_sample(&pop, &study.design, &mut sample_rng(study.seed, 0))?;
    Ok((pop, sample))
}

/// Runs `K` replicates in parallel and aggregates both models' metrics in
/// replicate order. Failed replicates are reported and excluded.
pub fn run_replications(study: &StudyConfig) -> Result<ReplicationReport> {
    study.validate()?;
    let shared = if study.regenerate_population {
        None
    } else {
        Some(generate_population(&study.population)?)
    };
    // fail fast on an infeasible design before launching any fits
    if let Some(p) = &shared {
        inclusion_probabilities(p, &study.design)?;
    }
    let outcomes: Vec<Result<ReplicateResult>> = (0..study.replicates)
        .into_par_iter()
        .map(|k| run_replicate(study, shared.as_ref(), k))
        .collect();
    let mut results = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => results.push(r),
            Err(e) => {
                log::warn!("replicate {k} failed: {e}");
                failed.push(FailedReplicate {
                    replicate: k,
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if results.is_empty() {
        return Err(first_error.expect("at least one replicate ran"));
    }
    let weighted = model_metrics(
        &results.iter().map(|r| &r.weighted).collect::<Vec<_>>(),
        &study.population,
    )?;
    let unweighted = model_metrics(
        &results.iter().map(|r| &r.unweighted).collect::<Vec<_>>(),
        &study.population,
    )?;
    Ok(ReplicationReport {
        replicates: study.replicates,
        completed: results.len(),
        failed,
        mechanism: study.design.mechanism(),
        weighted,
        unweighted,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_pop(size: usize, theta: Vec<f64>, seed: u64) -> LabeledPopulation {
        generate_population(&PopulationConfig {
            size,
            theta_true: theta,
            seed,
            ..PopulationConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn default_truth() {
        let c = PopulationConfig::default();
        assert_eq!(c.phi_true[0], DEFAULT_PROFILE.to_vec());
        assert_eq!(c.phi_true[1], vec![0.05, 0.5, 0.2, 0.1, 0.1, 0.05]);
        c.validate().unwrap();
    }

    #[test]
    fn degenerate_theta_labels_everything() {
        let pop = small_pop(500, vec![1.0, 0.0, 0.0], 1);
        assert!(pop.docs.iter().all(|d| d.topic == 0));
        assert!(pop.docs.iter().all(|d| d.length() >= 1));
    }

    #[test]
    fn population_matches_generating_process() {
        let pop = small_pop(10_000, vec![0.5, 0.3, 0.2], 2);
        let m = pop.len() as f64;
        for (s, t) in pop.topic_shares().iter().zip([0.5, 0.3, 0.2]) {
            assert!(
                (s - t).abs() < 3.0 * (t * (1.0 - t) / m).sqrt(),
                "{s} vs {t}"
            );
        }
        let lambda: f64 = 30.0;
        let expected = lambda / (1.0 - (-lambda).exp());
        let mean_len = pop.docs.iter().map(|d| d.length() as f64).sum::<f64>() / m;
        assert!(
            (mean_len - expected).abs() < 3.0 * (lambda / m).sqrt(),
            "{mean_len}"
        );
        assert_eq!(
            small_pop(200, vec![0.5, 0.3, 0.2], 9),
            small_pop(200, vec![0.5, 0.3, 0.2], 9)
        );
    }

    #[test]
    fn truncation_matters_for_short_documents() {
        let pop = generate_population(&PopulationConfig {
            size: 20_000,
            lambda: 0.5,
            seed: 4,
            ..PopulationConfig::default()
        })
        .unwrap();
        let expected = 0.5 / (1.0 - (-0.5f64).exp());
        let mean_len = pop.docs.iter().map(|d| d.length() as f64).sum::<f64>() / pop.len() as f64;
        assert!(pop.docs.iter().all(|d| d.length() >= 1));
        // variance of the truncated Poisson is below lambda', so this bound is loose
        assert!(
            (mean_len - expected).abs() < 3.0 * (expected / pop.len() as f64).sqrt(),
            "{mean_len} vs {expected}"
        );
    }

    #[test]
    fn uniform_design_gives_equal_weights() {
        let pop = small_pop(2_000, vec![0.5, 0.3, 0.2], 5);
        let design = SamplingDesign {
            boost: 1.0,
            ..SamplingDesign::default()
        };
        let pi = inclusion_probabilities(&pop, &design).unwrap();
        assert!(pi.iter().all(|&p| p == 100.0 / 2_000.0));
        let s = draw_informative_sample(&pop, &design, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.indices.len(), 100);
        assert!(s.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn sample_size_and_weights_sum() {
        let pop = small_pop(3_000, vec![0.5, 0.3, 0.2], 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = draw_informative_sample(&pop, &SamplingDesign::default(), &mut rng).unwrap();
            assert_eq!(s.indices.len(), 100);
            let mut uniq = s.indices.clone();
            uniq.dedup();
            assert_eq!(uniq.len(), 100);
            assert!((s.weights.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn expected_target_share() {
        // target share 1/3 in the population, size 5 -> 5 / (5 + 2) in expectation
        let pop = small_pop(9_000, vec![1.0 / 3.0; 3], 7);
        let design = SamplingDesign {
            target_topic: 0,
            ..SamplingDesign::default()
        };
        let pop_share = pop.topic_shares()[0];
        let exact = 5.0 * pop_share / (5.0 * pop_share + (1.0 - pop_share));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let reps = 1_000;
        let shares: Vec<f64> = (0..reps)
            .map(|_| {
                let s = draw_informative_sample(&pop, &design, &mut rng).unwrap();
                s.indices
                    .iter()
                    .filter(|&&d| pop.docs[d].topic == 0)
                    .count() as f64
                    / 100.0
            })
            .collect();
        let mean = shares.iter().sum::<f64>() / reps as f64;
        let sd =
            (shares.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * sd / (reps as f64).sqrt(),
            "{mean} vs {exact}"
        );
        assert!((exact - 5.0 / 7.0).abs() < 0.02);
    }

    #[test]
    fn horvitz_thompson_unbiased() {
        let pop = small_pop(5_000, vec![0.5, 0.3, 0.2], 10);
        let truth = pop.topic_shares()[1];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 1_000;
        let est: Vec<f64> = (0..reps)
            .map(|_| {
                let s =
                    draw_informative_sample(&pop, &SamplingDesign::default(), &mut rng).unwrap();
                horvitz_thompson_share(&pop, &s, 1)
            })
            .collect();
        let mean = est.iter().sum::<f64>() / reps as f64;
        let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!(
            (mean - truth).abs() < 3.0 * sd / (reps as f64).sqrt(),
            "{mean} vs {truth}"
        );
    }

    #[test]
    fn infeasible_design() {
        let pop = small_pop(300, vec![0.5, 0.3, 0.2], 12);
        let design = SamplingDesign {
            boost: 50.0,
            ..SamplingDesign::default()
        };
        let err = inclusion_probabilities(&pop, &design).unwrap_err();
        assert!(matches!(err, Error::InfeasibleDesign { .. }));
        assert!(err.to_string().contains("lower"));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[0.3; 4], 0.3), 0.0);
        assert_eq!(rmse(&[0.0, 2.0], 1.0), 1.0);
        assert_eq!(abs_bias(&[0.5, 1.5], 1.0), 0.0);
        assert_eq!(abs_bias(&[0.0, 2.0], 0.0), 1.0);
        assert!((interval_score(0.2, 0.4, 0.3, 0.05).unwrap() - 0.2).abs() < 1e-15);
        assert!((interval_score(0.2, 0.4, 0.1, 0.05).unwrap() - 4.2).abs() < 1e-12);
        assert!((interval_score(0.2, 0.4, 0.2, 0.05).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(
            interval_score(0.5, 0.4, 0.1, 0.05),
            Err(Error::InvalidInterval { .. })
        ));
    }

    fn rmse_two_pass(est: &[f64], truth: f64) -> f64 {
        let mut sum_sq = 0.0;
        let mut n = 0.0;
        for e in est {
            let d = e - truth;
            sum_sq += d * d;
            n += 1.0;
        }
        f64::sqrt(sum_sq / n)
    }

    proptest! {
        #[test]
        fn bias_bounded_by_rmse(est in prop::collection::vec(-10.0f64..10.0, 1..40), truth in -10.0f64..10.0) {
            let r = rmse(&est, truth);
            prop_assert!(r >= 0.0);
            prop_assert!(abs_bias(&est, truth) <= r + 1e-12);
            prop_assert!((r - rmse_two_pass(&est, truth)).abs() < 1e-12);
        }
    }

    #[test]
    fn report_schema_and_determinism() {
        let study = StudyConfig {
            population: PopulationConfig {
                size: 2_000,
                ..PopulationConfig::default()
            },
            hmc: HmcConfig {
                iterations: 120,
                burn_in: 60,
                chains: 2,
                leapfrog_steps: 8,
                ..HmcConfig::default()
            },
            replicates: 2,
            seed: 1,
            ..StudyConfig::default()
        };
        let a = run_replications(&study).unwrap();
        assert_eq!(a.completed, 2);
        assert_eq!(a.results.len(), 2);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 7);
        for m in [a.weighted, a.unweighted] {
            for b in [m.theta, m.phi] {
                assert!(b.rmse >= 0.0 && b.abs_bias >= 0.0 && b.interval_score >= 0.0);
            }
        }
        assert_eq!(a, run_replications(&study).unwrap());
    }
}
