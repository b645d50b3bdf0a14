//! Post-processing of topic-model draws: label alignment, summaries,
//! document clustering and topic-count selection.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{responsibilities, responsibilities_from_logs, Phi, Theta};

/// Fewest draws accepted for a 95% equal-tailed interval.
pub const MIN_DRAWS_FOR_INTERVAL: usize = 40;

/// Topic-count rule threshold on the smallest posterior-mean proportion.
pub const MIN_TOPIC_SHARE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ScalarSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean,
            lo: quantile(&sorted, 0.025),
            hi: quantile(&sorted, 0.975),
        }
    }
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Constrained topic-model draws pooled across chains (chain-major order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDraws {
    pub theta: Vec<Vec<f64>>,
    pub phi: Vec<Vec<Vec<f64>>>,
    pub log_post: Vec<f64>,
}

impl TopicDraws {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn topics(&self) -> usize {
        self.theta.first().map_or(0, Vec::len)
    }

    pub fn permuted(&self, perms: &[Vec<usize>]) -> Self {
        Self {
            theta: self
                .theta
                .iter()
                .zip(perms)
                .map(|(t, p)| apply_perm(t, p))
                .collect(),
            phi: self
                .phi
                .iter()
                .zip(perms)
                .map(|(f, p)| apply_perm(f, p))
                .collect(),
            log_post: self.log_post.clone(),
        }
    }
}

/// `out[k] = items[perm[k]]`.
pub fn apply_perm<T: Clone>(items: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| items[i].clone()).collect()
}

/// Minimum-cost perfect matching on a square cost matrix. Returns
/// `assign[row] = column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials formulation of the Hungarian method
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Permutation aligning `phi` to `reference`: `perm[k]` is the topic of
/// `phi` placed at reference position `k`.
pub fn align_to(phi: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<usize> {
    let cost: Vec<Vec<f64>> = reference
        .iter()
        .map(|r| phi.iter().map(|row| l1(row, r)).collect())
        .collect();
    min_cost_assignment(&cost)
}

pub fn total_l1(phi: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    phi.iter().zip(reference).map(|(a, b)| l1(a, b)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relabeled {
    pub draws: TopicDraws,
    /// Per-draw permutation applied, `new[k] = old[perm[k]]`.
    pub perms: Vec<Vec<usize>>,
}

/// Aligns every draw to the highest-log-posterior draw.
pub fn relabel(draws: &TopicDraws) -> Relabeled {
    let best = draws
        .log_post
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &lp)| match acc {
            Some((_, b)) if lp <= b => acc,
            _ => Some((i, lp)),
        })
        .map_or(0, |(i, _)| i);
    match draws.phi.get(best) {
        Some(reference) => relabel_to(draws, &reference.clone()),
        None => Relabeled {
            draws: draws.clone(),
            perms: Vec::new(),
        },
    }
}

/// Aligns every draw to a fixed reference topic-word matrix.
pub fn relabel_to(draws: &TopicDraws, reference: &[Vec<f64>]) -> Relabeled {
    let perms: Vec<Vec<usize>> = draws
        .phi
        .iter()
        .map(|phi| align_to(phi, reference))
        .collect();
    Relabeled {
        draws: draws.permuted(&perms),
        perms,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopWord {
    pub rank: usize,
    pub index: usize,
    pub token: String,
    pub mean_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub theta: Vec<ScalarSummary>,
    pub phi: Vec<Vec<ScalarSummary>>,
    pub top_words: Vec<Vec<TopWord>>,
}

impl TopicSummary {
    pub fn theta_means(&self) -> Vec<f64> {
        self.theta.iter().map(|s| s.mean).collect()
    }

    pub fn phi_means(&self) -> Vec<Vec<f64>> {
        self.phi
            .iter()
            .map(|r| r.iter().map(|s| s.mean).collect())
            .collect()
    }

    /// `topic,rank,token,mean_prob` CSV.
    pub fn write_topics_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "topic,rank,token,mean_prob")?;
        for (j, words) in self.top_words.iter().enumerate() {
            for w in words {
                writeln!(
                    out,
                    "{},{},{},{}",
                    j,
                    w.rank,
                    crate::corpus::csv_field(&w.token),
                    w.mean_prob
                )?;
            }
        }
        Ok(())
    }
}

/// Means and equal-tailed 95% intervals for every scalar, plus the `top_k`
/// words of each topic by posterior-mean probability (ties by vocabulary index).
pub fn summarize(draws: &TopicDraws, vocab: &Vocabulary, top_k: usize) -> Result<TopicSummary> {
    if draws.len() < MIN_DRAWS_FOR_INTERVAL {
        return Err(Error::InsufficientDraws(format!(
            "{} draws, need at least {MIN_DRAWS_FOR_INTERVAL} for a 95% interval",
            draws.len()
        )));
    }
    let j = draws.topics();
    let v = draws.phi[0].first().map_or(0, Vec::len);
    if v != vocab.len() {
        return Err(Error::DimensionMismatch {
            what: "vocabulary size",
            expected: vocab.len(),
            got: v,
        });
    }
    let theta = (0..j)
        .map(|k| ScalarSummary::from_values(&draws.theta.iter().map(|t| t[k]).collect::<Vec<_>>()))
        .collect();
    let phi: Vec<Vec<ScalarSummary>> = (0..j)
        .map(|k| {
            (0..v)
                .map(|w| {
                    ScalarSummary::from_values(
                        &draws.phi.iter().map(|f| f[k][w]).collect::<Vec<_>>(),
                    )
                })
                .collect()
        })
        .collect();
    let top_words = phi
        .iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..v).collect();
            idx.sort_by(|&a, &b| row[b].mean.total_cmp(&row[a].mean).then(a.cmp(&b)));
            idx.into_iter()
                .take(top_k)
                .enumerate()
                .map(|(rank, index)| TopWord {
                    rank: rank + 1,
                    index,
                    token: vocab.token(index).to_owned(),
                    mean_prob: row[index].mean,
                })
                .collect()
        })
        .collect();
    Ok(TopicSummary {
        theta,
        phi,
        top_words,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocAssignment {
    pub doc_id: String,
    pub topic: usize,
    pub resp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub docs: Vec<DocAssignment>,
}

impl ClusterAssignment {
    /// `doc_id,topic,resp_1..resp_J` CSV.
    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        let j = self.docs.first().map_or(0, |d| d.resp.len());
        let mut header = String::from("doc_id,topic");
        for k in 1..=j {
            header.push_str(&format!(",resp_{k}"));
        }
        writeln!(out, "{header}")?;
        for d in &self.docs {
            let mut line = format!("{},{}", crate::corpus::csv_field(&d.doc_id), d.topic);
            for r in &d.resp {
                line.push_str(&format!(",{r}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Plug-in clustering: responsibilities at point estimates, argmax with lowest-index ties.
pub fn assign_documents(
    corpus: &Corpus,
    theta_hat: &Theta,
    phi_hat: &Phi,
) -> Result<ClusterAssignment> {
    let docs = corpus
        .docs
        .iter()
        .map(|d| {
            let resp = responsibilities(d, theta_hat, phi_hat)?;
            Ok(DocAssignment {
                doc_id: d.id.clone(),
                topic: argmax(&resp),
                resp,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ClusterAssignment { docs })
}

/// Plug-in clustering with document-specific topic proportions.
pub fn assign_documents_with_doc_theta(
    corpus: &Corpus,
    doc_theta: &[Vec<f64>],
    phi_hat: &Phi,
) -> Result<ClusterAssignment> {
    let v = phi_hat.vocab_size();
    let log_phi: Vec<f64> = phi_hat.rows().iter().flatten().map(|x| x.ln()).collect();
    let docs = corpus
        .docs
        .iter()
        .zip(doc_theta)
        .map(|(d, t)| {
            let lt: Vec<f64> = t.iter().map(|x| x.ln()).collect();
            let resp = responsibilities_from_logs(d, &lt, &log_phi, v)?;
            Ok(DocAssignment {
                doc_id: d.id.clone(),
                topic: argmax(&resp),
                resp,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ClusterAssignment { docs })
}

/// Per-draw clustering: each document goes to the topic it is most often
/// assigned to across draws; `resp` holds the vote fractions.
pub fn assign_documents_by_vote(corpus: &Corpus, draws: &TopicDraws) -> Result<ClusterAssignment> {
    let j = draws.topics();
    let mut votes = vec![vec![0usize; j]; corpus.len()];
    for (t, f) in draws.theta.iter().zip(&draws.phi) {
        let theta = Theta::new(t.clone())?;
        let phi = Phi::new(f.clone())?;
        for (d, doc) in corpus.docs.iter().enumerate() {
            votes[d][argmax(&responsibilities(doc, &theta, &phi)?)] += 1;
        }
    }
    let n = draws.len().max(1) as f64;
    let docs = corpus
        .docs
        .iter()
        .zip(votes)
        .map(|(doc, v)| {
            let resp: Vec<f64> = v.iter().map(|&c| c as f64 / n).collect();
            DocAssignment {
                doc_id: doc.id.clone(),
                topic: argmax(&resp),
                resp,
            }
        })
        .collect();
    Ok(ClusterAssignment { docs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCountStep {
    pub topics: usize,
    pub min_proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSelection {
    /// Last topic count before the rule triggered; `None` if the cap was hit first.
    pub chosen: Option<usize>,
    pub trace: Vec<TopicCountStep>,
    pub cap: usize,
}

/// Fits `J = j_start, j_start + 1, ...` with `fit` (which returns posterior-mean
/// topic proportions) and stops at the first `J` whose smallest proportion is
/// below 1%. The chosen count is the `J` before that.
pub fn topic_count_trace<F>(j_start: usize, cap: usize, mut fit: F) -> Result<TopicSelection>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if j_start < 2 || cap < j_start {
        return Err(Error::InvalidConfig(format!(
            "topic search needs 2 <= start ({j_start}) <= cap ({cap})"
        )));
    }
    let mut trace = Vec::new();
    for j in j_start..=cap {
        let props = fit(j)?;
        let min_proportion = props.iter().copied().fold(f64::INFINITY, f64::min);
        log::info!("J = {j}: smallest topic proportion {min_proportion:.5}");
        trace.push(TopicCountStep {
            topics: j,
            min_proportion,
        });
        if min_proportion < MIN_TOPIC_SHARE {
            return Ok(TopicSelection {
                chosen: Some(j - 1),
                trace,
                cap,
            });
        }
    }
    Ok(TopicSelection {
        chosen: None,
        trace,
        cap,
    })
}

/// As [`topic_count_trace`] with `J` starting at 2, failing with `CapReached`
/// when the rule never triggers.
pub fn select_num_topics<F>(cap: usize, fit: F) -> Result<(usize, Vec<TopicCountStep>)>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let sel = topic_count_trace(2, cap, fit)?;
    match sel.chosen {
        Some(j) => Ok((j, sel.trace)),
        None => Err(Error::CapReached { cap }),
    }
}
