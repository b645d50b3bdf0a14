use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};
use wtopics_core::corpus::{read_jsonl, Corpus, Covariates, TokenizeRules};
use wtopics_core::hier::{group_topic_proportions, DesignEncoder, HierParams};
use wtopics_core::posterior::topic_count_trace;
use wtopics_core::registry::{fit_model, Fit, FitOptions, ModelRegistry};
use wtopics_core::simstudy::{horvitz_thompson_share, run_replications, simulate_once, LabeledPopulation};
use wtopics_core::Error;

use crate::config::{study_from_args, FitConfig};
use crate::output::OutDir;
use crate::{CompareArgs, FitArgs, FitHierArgs, ReplicateArgs, SelectArgs, StudyArgs};

fn load_corpus(cfg: &FitConfig) -> Result<Corpus, Error> {
    let raw = read_jsonl(cfg.input()?)?;
    let rules = match &cfg.stopwords {
        Some(p) => TokenizeRules::default().with_stopword_file(p)?,
        None => TokenizeRules::default(),
    };
    let (corpus, report) = Corpus::from_raw(&raw, &rules, cfg.min_count)?;
    if !report.dropped.is_empty() {
        log::warn!(
            "dropped {} document(s) with no in-vocabulary tokens: {}",
            report.dropped.len(),
            report.dropped.join(", ")
        );
    }
    Ok(if cfg.unweighted { corpus.unweighted() } else { corpus })
}

fn run_fit(cfg: &FitConfig, corpus: &Corpus) -> Result<Fit, Error> {
    cfg.hmc.validate()?;
    let registry = ModelRegistry::default();
    let model = registry.get(&cfg.model)?;
    let options = FitOptions {
        top_k: cfg.top_k,
        vote_assignment: cfg.vote_assignment,
        ..FitOptions::default()
    };
    fit_model(model, corpus, &cfg.settings, &cfg.hmc, &options)
}

fn write_fit(command: &str, cfg: &FitConfig, corpus: &Corpus, fit: &Fit, out: &Path) -> Result<(), Error> {
    let mut dir = OutDir::create(out)?;
    let summary = json!({
        "model": fit.model,
        "documents": corpus.len(),
        "vocab_size": corpus.vocab_size(),
        "draws": fit.draws.len(),
        "theta": fit.summary.theta,
        "phi": fit.summary.phi,
        "top_words": fit.summary.top_words,
    });
    dir.write_json("summary.json", &summary)?;
    match &fit.diagnostics {
        Some(d) => dir.write_json("diagnostics.json", d)?,
        None => dir.write_json("diagnostics.json", &Value::Null)?,
    }
    dir.write_with("topics.csv", |w| fit.summary.write_topics_csv(w))?;
    dir.write_with("assignments.csv", |w| fit.assignments.write_csv(w))?;
    dir.write_with("vocab.csv", |w| corpus.vocab.write_csv(w))?;
    for c in 0..fit.samples.chains.len() {
        dir.write_with(&format!("chains/chain_{c}.csv"), |w| {
            fit.samples.write_chain_csv(c, cfg.hmc.burn_in, w)
        })?;
    }
    for a in &fit.artifacts {
        dir.write_json(&format!("{}.json", a.name), &a.value)?;
    }

    let results = json!({
        "theta_mean": fit.summary.theta_means(),
        "max_rhat": fit.diagnostics.as_ref().map(|d| d.max_rhat()),
        "min_ess": fit.diagnostics.as_ref().map(|d| d.min_ess()),
    });
    dir.finish(command, cfg, results)?;
    print_topics(fit);
    Ok(())
}

fn print_topics(fit: &Fit) {
    let mut out = std::io::stdout().lock();
    for (k, (t, words)) in fit.summary.theta.iter().zip(&fit.summary.top_words).enumerate() {
        let top: Vec<&str> = words.iter().take(8).map(|w| w.token.as_str()).collect();
        let _ = writeln!(
            out,
            "topic {k}  theta {:.3} [{:.3}, {:.3}]  {}",
            t.mean,
            t.lo,
            t.hi,
            top.join(" ")
        );
    }
    if let Some(d) = &fit.diagnostics {
        let _ = writeln!(out, "max R-hat {:.3}  min ESS {:.0}", d.max_rhat(), d.min_ess());
    }
}

pub fn fit(args: FitArgs) -> Result<(), Error> {
    let mut cfg = FitConfig::from_flags(&args.flags)?;
    if let Some(m) = args.model {
        cfg.model = m;
    }
    let corpus = load_corpus(&cfg)?;
    let fit = run_fit(&cfg, &corpus)?;
    write_fit("fit", &cfg, &corpus, &fit, &args.flags.out)
}

pub fn fit_hier(args: FitHierArgs) -> Result<(), Error> {
    let mut cfg = FitConfig::from_flags(&args.flags)?;
    cfg.apply_hier(&args.hier);
    let corpus = load_corpus(&cfg)?;
    let fit = run_fit(&cfg, &corpus)?;
    write_fit("fit-hier", &cfg, &corpus, &fit, &args.flags.out)
}

fn read_json(path: &Path) -> Result<Value, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

fn parse_group(s: &str) -> Result<Covariates, Error> {
    let mut combo = Covariates::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("group `{s}`: expected name=level pairs")))?;
        combo.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(combo)
}

pub fn compare_groups(args: CompareArgs) -> Result<(), Error> {
    let groups: Vec<(String, Covariates)> = args
        .group
        .iter()
        .map(|g| Ok((g.clone(), parse_group(g)?)))
        .collect::<Result<_, Error>>()?;
    let design_path = args.input.join("design.json");
    let design = read_json(&design_path)?;
    let encoder: DesignEncoder = serde_json::from_value(design["encoder"].clone()).map_err(|e| Error::Json {
        context: design_path.display().to_string(),
        source: e,
    })?;
    let draws_path = args.input.join("hier_draws.json");
    let draws: Vec<HierParams> = serde_json::from_value(read_json(&draws_path)?).map_err(|e| Error::Json {
        context: draws_path.display().to_string(),
        source: e,
    })?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (label, combo) in &groups {
        let s = group_topic_proportions(&encoder, combo, &draws)?;
        for (k, t) in s.topics.iter().enumerate() {
            rows.push(format!(
                "{},{k},{},{},{}",
                wtopics_core::corpus::csv_field(label),
                t.mean,
                t.lo,
                t.hi
            ));
        }
        summaries.push(json!({"group": label, "topics": s.topics}));
    }

    let mut dir = OutDir::create(&args.out)?;
    dir.write_with("groups.csv", |w| {
        writeln!(w, "group,topic,mean,lo,hi")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })?;
    {
        let mut out = std::io::stdout().lock();
        for r in &rows {
            let _ = writeln!(out, "{r}");
        }
    }
    let config = json!({"groups": args.group, "draws": draws.len()});
    dir.finish("compare-groups", &config, json!({ "groups": summaries }))
}

fn write_jsonl(dir: &mut OutDir, name: &str, pop: &LabeledPopulation, indices: &[usize], weights: Option<&[f64]>) -> Result<(), Error> {
    let docs = pop.raw_documents(indices, weights);
    dir.write_with(name, |w| docs.iter().try_for_each(|d| writeln!(w, "{}", d.to_json_line())))
}

pub fn simulate(args: StudyArgs) -> Result<(), Error> {
    let study = study_from_args(&args)?;
    let (pop, sample) = simulate_once(&study)?;
    let mut dir = OutDir::create(&args.out)?;
    let all: Vec<usize> = (0..pop.len()).collect();
    write_jsonl(&mut dir, "population.jsonl", &pop, &all, None)?;
    write_jsonl(&mut dir, "sample.jsonl", &pop, &sample.indices, Some(&sample.raw_weights))?;

    let topics = pop.config.topics;
    let sample_shares: Vec<f64> = (0..topics)
        .map(|j| sample.indices.iter().filter(|&&i| pop.docs[i].topic == j).count() as f64 / sample.indices.len() as f64)
        .collect();
    let ht: Vec<f64> = (0..topics).map(|j| horvitz_thompson_share(&pop, &sample, j)).collect();
    let truth = json!({
        "theta_true": pop.config.theta_true,
        "phi_true": pop.config.phi_true,
        "population_shares": pop.topic_shares(),
        "sample_shares": sample_shares,
        "horvitz_thompson_shares": ht,
        "mechanism": study.design.mechanism(),
    });
    dir.write_json("truth.json", &truth)?;
    println!("population {}  sample {}  {}", pop.len(), sample.indices.len(), study.design.mechanism());
    println!("sample shares {:?}", sample_shares.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>());
    dir.finish(
        "simulate",
        &study,
        json!({"population_shares": pop.topic_shares(), "sample_shares": sample_shares}),
    )
}

pub fn replicate(args: ReplicateArgs) -> Result<(), Error> {
    let mut study = study_from_args(&args.study)?;
    if let Some(k) = args.k {
        study.replicates = k;
    }
    if let Some(n) = args.iterations {
        study.hmc.iterations = n;
    }
    if let Some(n) = args.burn_in {
        study.hmc.burn_in = n;
    }
    if let Some(n) = args.chains {
        study.hmc.chains = n;
    }
    study.validate()?;
    let report = run_replications(&study)?;
    let mut dir = OutDir::create(&args.study.out)?;
    dir.write_json("report.json", &report)?;
    dir.write_with("report.csv", |w| report.write_csv(w))?;

    println!("{} of {} replicates completed; {}", report.completed, report.replicates, report.mechanism);
    println!("{:<6}{:>10}{:>12}{:>12}{:>12}{:>12}{:>12}", "block", "w.rmse", "w.bias", "w.IS", "u.rmse", "u.bias", "u.IS");
    for (name, w, u) in [
        ("theta", &report.weighted.theta, &report.unweighted.theta),
        ("phi", &report.weighted.phi, &report.unweighted.phi),
    ] {
        println!(
            "{:<6}{:>10.4}{:>12.4}{:>12.4}{:>12.4}{:>12.4}{:>12.4}",
            name, w.rmse, w.abs_bias, w.interval_score, u.rmse, u.abs_bias, u.interval_score
        );
    }
    let results = json!({
        "completed": report.completed,
        "weighted": report.weighted,
        "unweighted": report.unweighted,
    });
    dir.finish("replicate", &study, results)
}

pub fn select_topics(args: SelectArgs) -> Result<(), Error> {
    let cfg = FitConfig::from_flags(&args.flags)?;
    let cap = args.max_topics.unwrap_or(10);
    let start = args.start.unwrap_or(2);
    let corpus = load_corpus(&cfg)?;
    let selection = topic_count_trace(start, cap, |j| {
        let mut c = cfg.clone();
        c.settings.topics = j;
        Ok(run_fit(&c, &corpus)?.summary.theta_means())
    })?;

    let mut dir = OutDir::create(&args.flags.out)?;
    dir.write_json("selection.json", &selection)?;
    for step in &selection.trace {
        println!("J = {:>2}  smallest topic proportion {:.5}", step.topics, step.min_proportion);
    }
    match selection.chosen {
        Some(j) => println!("selected {j} topics"),
        None => println!("no topic fell below 1% up to the cap of {cap}; consider a larger --max-topics"),
    }
    let config = json!({"fit": cfg, "start": start, "max_topics": cap});
    dir.finish("select-topics", &config, json!({ "selected_topics": selection.chosen }))
}
