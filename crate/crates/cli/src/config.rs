//! Run configurations: defaults, then the `--config` file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wtopics_core::hier::{VariancePrior, VarianceStructure};
use wtopics_core::inference::HmcConfig;
use wtopics_core::registry::ModelSettings;
use wtopics_core::simstudy::StudyConfig;
use wtopics_core::Error;

use crate::{FitFlags, HierFlags, StudyArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub input: Option<String>,
    pub model: String,
    pub settings: ModelSettings,
    pub hmc: HmcConfig,
    pub unweighted: bool,
    pub stopwords: Option<String>,
    pub min_count: u64,
    pub top_k: usize,
    pub vote_assignment: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            input: None,
            model: "mou".into(),
            settings: ModelSettings::default(),
            hmc: HmcConfig::default(),
            unweighted: false,
            stopwords: None,
            min_count: 1,
            top_k: 15,
            vote_assignment: false,
        }
    }
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

impl FitConfig {
    pub fn from_flags(flags: &FitFlags) -> Result<Self, Error> {
        let mut c: Self = load(flags.config.as_deref())?;
        set(&mut c.input, flags.input.as_ref().map(|p| Some(p.display().to_string())));
        set(&mut c.settings.topics, flags.topics);
        set(&mut c.settings.alpha, flags.alpha);
        set(&mut c.settings.eta, flags.eta);
        set(&mut c.hmc.iterations, flags.iterations);
        set(&mut c.hmc.burn_in, flags.burn_in);
        set(&mut c.hmc.chains, flags.chains);
        set(&mut c.hmc.seed, flags.seed);
        set(&mut c.hmc.leapfrog_steps, flags.leapfrog_steps);
        set(&mut c.stopwords, flags.stopwords.as_ref().map(|p| Some(p.display().to_string())));
        set(&mut c.min_count, flags.min_count);
        set(&mut c.top_k, flags.top_k);
        c.hmc.adapt_mass |= flags.adapt_mass;
        c.unweighted |= flags.unweighted;
        c.vote_assignment |= flags.vote;
        Ok(c)
    }

    pub fn apply_hier(&mut self, h: &HierFlags) {
        self.model = "hmou".into();
        if !h.fixed.is_empty() {
            self.settings.fixed = h.fixed.iter().map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
        }
        set(&mut self.settings.random, h.random.clone().map(Some));
        set(
            &mut self.settings.variance_prior,
            h.variance_prior.as_deref().map(|p| match p {
                "gamma" => VariancePrior::Gamma,
                _ => VariancePrior::InverseGamma,
            }),
        );
        if h.shared_variance {
            self.settings.variance_structure = VarianceStructure::Shared;
        }
        set(&mut self.settings.a, h.a);
        set(&mut self.settings.b, h.b);
        set(&mut self.settings.sigma2_beta, h.sigma2_beta);
    }

    pub fn input(&self) -> Result<&str, Error> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("no input corpus given (--input or `input` in the config)".into()))
    }
}

pub fn study_from_args(a: &StudyArgs) -> Result<StudyConfig, Error> {
    let mut c: StudyConfig = load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        c.seed = seed;
        c.population.seed = seed;
        c.hmc.seed = seed;
    }
    set(&mut c.population.size, a.pop_size);
    set(&mut c.design.boost, a.boost);
    set(&mut c.design.sample_size, a.sample_size);
    set(&mut c.design.target_topic, a.target_topic);
    Ok(c)
}
