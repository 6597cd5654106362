//! Posterior summaries of a jump chain.
//!
//! All summaries work on the post-burn-in segment. The Binder median uses the
//! first half of that segment to estimate co-clustering probabilities and
//! scans the second half for the best candidate.

use std::collections::HashMap;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::jumps::RateConfig;
use crate::pmcmc::ChainRecord;
use crate::tree::{BranchId, JumpVector, Tree};

/// Cluster id per original node, canonicalized by first occurrence in node
/// id order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ClusterAssignment(pub Vec<u32>);

impl ClusterAssignment {
    /// Nodes joined by jump-free paths share a cluster.
    pub fn from_jumps(tree: &Tree, jumps: &JumpVector) -> Self {
        let n = tree.num_nodes();
        let mut raw = vec![0usize; n];
        for &node in tree.preorder() {
            raw[node] = match tree.node(node).parent {
                None => node,
                Some(p) => {
                    let b = tree.node_branch(node).expect("non-root node has a branch");
                    if jumps[b] > 0 {
                        node
                    } else {
                        raw[p]
                    }
                }
            };
        }
        Self::canonical(&raw)
    }

    pub fn canonical(raw: &[usize]) -> Self {
        let mut ids: HashMap<usize, u32> = HashMap::new();
        ClusterAssignment(
            raw.iter()
                .map(|&r| {
                    let next = ids.len() as u32;
                    *ids.entry(r).or_insert(next)
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.0.iter().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn same(&self, i: usize, j: usize) -> bool {
        self.0[i] == self.0[j]
    }

    /// Members of each cluster.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (i, &z) in self.0.iter().enumerate() {
            out[z as usize].push(i);
        }
        out
    }
}

/// Symmetric matrix of co-clustering probabilities over all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoclusterMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CoclusterMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// CSV with a header row and a leading name column.
    pub fn to_csv(&self, tree: &Tree) -> String {
        let names: Vec<String> = (0..self.n).map(|i| csv_field(&tree.node_name(i))).collect();
        let mut out = String::from("node");
        for name in &names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, name) in names.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.n {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Records from the first post-burn-in iteration on.
pub fn post_burn_in(records: &[ChainRecord], burn_in: f64) -> Result<&[ChainRecord]> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::Config(format!("burn-in fraction {burn_in} must lie in [0, 1)")));
    }
    let cut = (records.len() as f64 * burn_in).floor() as usize;
    let segment = &records[cut.min(records.len())..];
    if segment.is_empty() {
        return Err(Error::EmptySegment("no post-burn-in samples".into()));
    }
    Ok(segment)
}

/// Fraction of records with at least one jump on each branch.
pub fn branch_probabilities(segment: &[ChainRecord], branches: usize) -> Result<Vec<f64>> {
    if segment.is_empty() {
        return Err(Error::EmptySegment("no post-burn-in samples".into()));
    }
    let mut counts = vec![0usize; branches];
    for r in segment {
        for (c, &b) in counts.iter_mut().zip(&r.jumps.0) {
            if b > 0 {
                *c += 1;
            }
        }
    }
    let m = segment.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / m).collect())
}

/// Distinct assignments in `segment` with their multiplicities, in order of
/// first appearance.
fn tally_assignments(segment: &[ChainRecord], tree: &Tree) -> Vec<(ClusterAssignment, usize)> {
    let mut index: HashMap<JumpVector, usize> = HashMap::new();
    let mut out: Vec<(ClusterAssignment, usize)> = Vec::new();
    let mut last: Option<(&JumpVector, usize)> = None;
    for r in segment {
        // Consecutive records usually repeat the incumbent.
        let slot = match last {
            Some((jv, slot)) if jv == &r.jumps => slot,
            _ => {
                let indicator = indicator_of(&r.jumps);
                let slot = *index.entry(indicator).or_insert_with_key(|jv| {
                    out.push((ClusterAssignment::from_jumps(tree, jv), 0));
                    out.len() - 1
                });
                last = Some((&r.jumps, slot));
                slot
            }
        };
        out[slot].1 += 1;
    }
    out
}

fn indicator_of(jumps: &JumpVector) -> JumpVector {
    JumpVector(jumps.0.iter().map(|&b| u32::from(b > 0)).collect())
}

/// `P(z_i = z_j)` estimated over `segment`.
pub fn cocluster_matrix(segment: &[ChainRecord], tree: &Tree) -> Result<CoclusterMatrix> {
    if segment.is_empty() {
        return Err(Error::EmptySegment("no post-burn-in samples".into()));
    }
    let n = tree.num_nodes();
    let mut data = vec![0.0; n * n];
    for (assignment, count) in tally_assignments(segment, tree) {
        let w = count as f64;
        for block in assignment.blocks() {
            for &i in &block {
                let row = &mut data[i * n..(i + 1) * n];
                for &j in &block {
                    row[j] += w;
                }
            }
        }
    }
    let m = segment.len() as f64;
    for x in &mut data {
        *x /= m;
    }
    Ok(CoclusterMatrix { n, data })
}

/// Binder score `sum_{i<j} 1[z_i = z_j] (P_ij - 1/2)`.
pub fn binder_score(assignment: &ClusterAssignment, probs: &CoclusterMatrix) -> f64 {
    let mut score = 0.0;
    for block in assignment.blocks() {
        for (a, &i) in block.iter().enumerate() {
            for &j in &block[a + 1..] {
                score += probs.get(i, j) - 0.5;
            }
        }
    }
    score
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinderMedian {
    pub assignment: ClusterAssignment,
    pub jumps: JumpVector,
    /// Offset of the chosen record within the post-burn-in segment.
    pub position: usize,
    pub score: f64,
}

pub fn binder_median(segment: &[ChainRecord], tree: &Tree) -> Result<BinderMedian> {
    let half = segment.len() / 2;
    if half == 0 {
        return Err(Error::EmptySegment("Binder median needs at least two samples".into()));
    }
    let (first, second) = segment.split_at(half);
    let probs = cocluster_matrix(first, tree)?;
    let mut scored: HashMap<JumpVector, f64> = HashMap::new();
    let mut best: Option<BinderMedian> = None;
    for (offset, r) in second.iter().enumerate() {
        let key = indicator_of(&r.jumps);
        let score = match scored.get(&key) {
            Some(&s) => s,
            None => {
                let s = binder_score(&ClusterAssignment::from_jumps(tree, &key), &probs);
                scored.insert(key, s);
                s
            }
        };
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(BinderMedian {
                assignment: ClusterAssignment::from_jumps(tree, &r.jumps),
                jumps: r.jumps.clone(),
                position: half + offset,
                score,
            });
        }
    }
    Ok(best.expect("second half is non-empty"))
}

/// Posterior-to-prior odds of "at least one jump" against "no jumps".
pub fn bayes_factor(segment: &[ChainRecord], rate: &RateConfig, total_length: f64) -> Result<f64> {
    if segment.is_empty() {
        return Err(Error::EmptySegment("no post-burn-in samples".into()));
    }
    let p0 = rate.resolve(total_length)?.prob_no_jumps(total_length);
    let positive = segment.iter().filter(|r| r.jumps.has_jump()).count();
    let zero = segment.len() - positive;
    if zero == 0 {
        return Ok(f64::INFINITY);
    }
    if positive == 0 {
        return Ok(0.0);
    }
    let posterior_odds = positive as f64 / zero as f64;
    let prior_odds = (1.0 - p0) / p0;
    Ok(posterior_odds / prior_odds)
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn ess(values: &[f64]) -> Result<f64> {
    let m = values.len();
    if m < 10 {
        return Err(Error::Config(format!("ESS needs at least 10 values, got {m}")));
    }
    let acf = autocorrelation(values);
    let Some(acf) = acf else {
        log::warn!("constant sequence; reporting ESS equal to its length");
        return Ok(m as f64);
    };
    // Pair sums Gamma_k = rho_{2k} + rho_{2k+1}, truncated at the first
    // non-positive pair.
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < m {
        let gamma = acf[2 * k] + acf[2 * k + 1];
        if gamma <= 0.0 {
            break;
        }
        sum += gamma;
        k += 1;
    }
    let tau = -1.0 + 2.0 * sum;
    let ess = if tau > 0.0 { m as f64 / tau } else { m as f64 };
    Ok(ess.clamp(f64::MIN_POSITIVE, m as f64))
}

/// Normalized autocorrelations at lags `0..m`, or `None` for zero variance.
fn autocorrelation(values: &[f64]) -> Option<Vec<f64>> {
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    let size = (2 * m).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = values
        .iter()
        .map(|&x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 1e-300 * m as f64 || !c0.is_finite() {
        return None;
    }
    Some(buf[..m].iter().map(|c| c.re / c0).collect())
}

fn finite_or_string<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchSummary {
    pub branch: BranchId,
    /// Name of the node below the branch.
    pub child: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub samples: usize,
    pub burn_in: f64,
    pub acceptance_rate: f64,
    pub branches: Vec<BranchSummary>,
    pub median_jump_branches: Vec<BranchId>,
    pub median_assignment: ClusterAssignment,
    #[serde(serialize_with = "finite_or_string")]
    pub bayes_factor: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub log10_bayes_factor: f64,
    pub ess_lambda: f64,
    #[serde(serialize_with = "finite_or_string")]
    pub ess_per_second: f64,
    pub runtime_secs: f64,
}

impl Summary {
    pub fn branch_probabilities(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.probability).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Everything reported for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub cocluster: CoclusterMatrix,
}

/// Summarizes one chain. `tree` is the tree the sampler ran on.
pub fn summarize(
    records: &[ChainRecord],
    tree: &Tree,
    rate: &RateConfig,
    burn_in: f64,
    runtime_secs: f64,
) -> Result<Report> {
    summarize_pooled(&[records], tree, rate, burn_in, runtime_secs)
}

/// Pools the post-burn-in segments of independent chains. The ESS is the sum
/// of per-chain values.
pub fn summarize_pooled(
    chains: &[&[ChainRecord]],
    tree: &Tree,
    rate: &RateConfig,
    burn_in: f64,
    runtime_secs: f64,
) -> Result<Report> {
    let mut pooled: Vec<ChainRecord> = Vec::new();
    let mut ess_total = 0.0;
    let mut accepted = 0usize;
    let mut total = 0usize;
    for records in chains {
        let segment = post_burn_in(records, burn_in)?;
        for r in &records[..] {
            if r.jumps.len() != tree.num_branches() {
                return Err(Error::JumpLength {
                    expected: tree.num_branches(),
                    got: r.jumps.len(),
                });
            }
        }
        accepted += records.iter().filter(|r| r.accepted).count();
        total += records.len();
        let lambdas: Vec<f64> = segment.iter().map(|r| r.lambda).collect();
        ess_total += if lambdas.len() >= 10 { ess(&lambdas)? } else { lambdas.len() as f64 };
        pooled.extend_from_slice(segment);
    }
    if pooled.is_empty() {
        return Err(Error::EmptySegment("no post-burn-in samples".into()));
    }
    let probs = branch_probabilities(&pooled, tree.num_branches())?;
    let median = binder_median(&pooled, tree)?;
    let k = bayes_factor(&pooled, rate, tree.total_length())?;
    let cocluster = cocluster_matrix(&pooled, tree)?;
    let branches = probs
        .into_iter()
        .enumerate()
        .map(|(branch, probability)| BranchSummary {
            branch,
            child: tree.node_name(tree.branch_child(branch)),
            probability,
        })
        .collect();
    let summary = Summary {
        samples: pooled.len(),
        burn_in,
        acceptance_rate: accepted as f64 / total.max(1) as f64,
        branches,
        median_jump_branches: median.jumps.jump_branches(),
        median_assignment: median.assignment,
        bayes_factor: k,
        log10_bayes_factor: k.log10(),
        ess_lambda: ess_total,
        ess_per_second: if runtime_secs > 0.0 { ess_total / runtime_secs } else { f64::INFINITY },
        runtime_secs,
    };
    Ok(Report { summary, cocluster })
}
