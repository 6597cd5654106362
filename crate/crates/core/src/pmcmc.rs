//! Pseudo-marginal Metropolis-Hastings within Gibbs over the jump vector and
//! the jump rate.
//!
//! Each iteration optionally redraws the rate given the jumps, proposes a new
//! jump vector, estimates its likelihood with a fresh particle filter run and
//! accepts on the ratio of estimates times prior and proposal ratios. The
//! incumbent's estimate is kept until a proposal is accepted.

use std::io::{BufRead, Write};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::crf::BaseMeasure;
use crate::error::{Error, Result};
use crate::jumps::{self, JumpProposer, MoveKind, RateConfig, ResolvedRate};
use crate::smc::{ParticleFilter, Resampling, SmcConfig};
use crate::tree::{JumpVector, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: f64,
    pub particles: usize,
    pub discount: f64,
    pub rate: RateConfig,
    pub seed: u64,
    /// Scale rescaled branch lengths to unit mean before inference.
    #[serde(default)]
    pub normalize_branches: bool,
    #[serde(default = "default_resampling")]
    pub resampling: Resampling,
}

fn default_resampling() -> Resampling {
    Resampling::EveryStep
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 50_000,
            burn_in: 0.5,
            particles: 100,
            discount: 0.5,
            rate: RateConfig::default(),
            seed: 0,
            normalize_branches: false,
            resampling: Resampling::EveryStep,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return Err(Error::Config("at least two iterations are required".into()));
        }
        if !(self.burn_in > 0.0 && self.burn_in < 1.0) {
            return Err(Error::Config(format!("burn-in fraction {} must lie in (0, 1)", self.burn_in)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount {} must lie in (0, 1)", self.discount)));
        }
        if self.particles == 0 {
            return Err(Error::Config("at least one particle is required".into()));
        }
        self.rate.validate()
    }

    /// The tree the sampler actually works on.
    pub fn prepare_tree(&self, tree: &Tree) -> Tree {
        let rescaled = tree.rescale();
        if self.normalize_branches {
            rescaled.normalize_branches()
        } else {
            rescaled
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub jumps: JumpVector,
    pub log_lik: f64,
    pub accepted: bool,
    pub kind: MoveKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub records: Vec<ChainRecord>,
    pub config: McmcConfig,
    /// Branch lengths of the tree the sampler ran on.
    pub rescaled_lengths: Vec<f64>,
    /// Number of particle filter runs, including the initial one.
    pub smc_calls: u64,
    pub runtime_secs: f64,
}

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        let n = self.records.len().max(1);
        self.records.iter().filter(|r| r.accepted).count() as f64 / n as f64
    }

    /// Index of the first post-burn-in record.
    pub fn burn_in_cut(&self, burn_in: f64) -> usize {
        (self.records.len() as f64 * burn_in).floor() as usize
    }

    pub fn post_burn_in(&self, burn_in: f64) -> &[ChainRecord] {
        &self.records[self.burn_in_cut(burn_in).min(self.records.len())..]
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lambda).collect()
    }
}

/// Runs the sampler with a generator seeded from `config.seed`.
pub fn run_seeded(tree: &Tree, config: &McmcConfig) -> Result<Chain> {
    let mut rng = crate::rng_from_seed(config.seed);
    run(tree, config, &mut rng)
}

pub fn run<R: Rng + ?Sized>(tree: &Tree, config: &McmcConfig, rng: &mut R) -> Result<Chain> {
    config.validate()?;
    if tree.num_observations() == 0 {
        return Err(Error::Config("tree carries no observations".into()));
    }
    let started = Instant::now();
    let work = config.prepare_tree(tree);
    let total_length = work.total_length();
    let rate = config.rate.resolve(total_length)?;
    let base = BaseMeasure::uniform(work.alphabet());
    let proposer = JumpProposer::new(&work);
    let mut filter = ParticleFilter::new(SmcConfig {
        particles: config.particles,
        resampling: config.resampling,
    })?;

    let mut lambda = match rate {
        ResolvedRate::Fixed { lambda } => lambda,
        ResolvedRate::Learned { rho } => Exp::new(rho).expect("positive rho").sample(rng),
    };
    let mut current = jumps::sample_jumps(lambda, &work, rng);
    let mut log_lik = filter.log_likelihood(&work, &current, config.discount, &base, rng)?;
    let mut smc_calls = 1u64;

    let mut records = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        if let ResolvedRate::Learned { rho } = rate {
            lambda = jumps::sample_rate_posterior(&current, rho, &work, rng);
        }
        let proposal = proposer.propose(&current, lambda, rng);
        let accepted = if !proposal.changed {
            true
        } else {
            let proposed_ll = filter.log_likelihood(&work, &proposal.jumps, config.discount, &base, rng)?;
            smc_calls += 1;
            let log_ratio = proposed_ll - log_lik
                + jumps::prior_log_pmf(&proposal.jumps, lambda, &work)
                - jumps::prior_log_pmf(&current, lambda, &work)
                + proposal.log_q_ratio;
            let accept = proposed_ll > f64::NEG_INFINITY
                && !log_ratio.is_nan()
                && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio);
            if accept {
                current = proposal.jumps;
                log_lik = proposed_ll;
            }
            accept
        };
        records.push(ChainRecord {
            iteration,
            lambda,
            jumps: current.clone(),
            log_lik,
            accepted,
            kind: proposal.kind,
        });
    }

    Ok(Chain {
        records,
        config: config.clone(),
        rescaled_lengths: work.branch_lengths(),
        smc_calls,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}

const CHAIN_HEADER: &str = "#iteration\tlambda\tjumps\tlog_lik\taccepted\tmove";

/// Writes records as tab-separated lines with a commented header.
pub fn write_chain<W: Write>(records: &[ChainRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CHAIN_HEADER}")?;
    let mut jumps = String::new();
    for r in records {
        jumps.clear();
        for (i, b) in r.jumps.0.iter().enumerate() {
            if i > 0 {
                jumps.push(',');
            }
            jumps.push_str(&b.to_string());
        }
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.iteration,
            r.lambda,
            jumps,
            r.log_lik,
            u8::from(r.accepted),
            r.kind.as_str()
        )?;
    }
    Ok(())
}

/// Reads records written by [`write_chain`]. Every record must list exactly
/// `branches` jump counts, and iterations must be consecutive from zero.
pub fn read_chain<R: BufRead>(input: R, branches: usize) -> Result<Vec<ChainRecord>> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| Error::Parse {
            line: lineno,
            message: message.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(bad("expected 6 tab-separated columns"));
        }
        let iteration: usize = cols[0].parse().map_err(|_| bad("bad iteration"))?;
        if iteration != records.len() {
            return Err(bad("iterations are not consecutive"));
        }
        let lambda: f64 = cols[1].parse().map_err(|_| bad("bad lambda"))?;
        let jumps: Vec<u32> = if cols[2].is_empty() {
            Vec::new()
        } else {
            cols[2]
                .split(',')
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad jump count"))?
        };
        if jumps.len() != branches {
            return Err(bad("jump vector length differs from the branch count"));
        }
        let log_lik: f64 = cols[3].parse().map_err(|_| bad("bad log likelihood"))?;
        let accepted = match cols[4] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("bad accepted flag")),
        };
        let kind = MoveKind::parse(cols[5]).ok_or_else(|| bad("bad move kind"))?;
        records.push(ChainRecord {
            iteration,
            lambda,
            jumps: JumpVector(jumps),
            log_lik,
            accepted,
            kind,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_newick;

    fn small_tree() -> Tree {
        parse_newick("((A:1,B:1):1,(C:1,D:1):1);")
            .unwrap()
            .attach_observations(&[("A", 1), ("B", 1), ("C", 0), ("D", 0)])
            .unwrap()
    }

    fn quick_config() -> McmcConfig {
        McmcConfig {
            iterations: 300,
            particles: 10,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn records_every_iteration_with_positive_rate() {
        let chain = run_seeded(&small_tree(), &quick_config()).unwrap();
        assert_eq!(chain.records.len(), 300);
        assert!(chain.records.iter().all(|r| r.lambda > 0.0));
        assert!(chain.records.iter().enumerate().all(|(i, r)| r.iteration == i));
    }

    #[test]
    fn one_filter_run_per_changed_proposal() {
        let chain = run_seeded(&small_tree(), &quick_config()).unwrap();
        // Unchanged proposals are accepted without a filter run; every other
        // iteration runs the filter exactly once.
        let mut changed = 0;
        let mut prev = None::<&JumpVector>;
        for r in &chain.records {
            if r.accepted {
                if let Some(p) = prev {
                    if p != &r.jumps {
                        changed += 1;
                    }
                }
            }
            prev = Some(&r.jumps);
        }
        assert!(chain.smc_calls as usize > changed);
        assert!(chain.smc_calls as usize <= 1 + chain.records.len());
        // Log-likelihood changes only on accepted moves.
        for w in chain.records.windows(2) {
            if !w[1].accepted {
                assert_eq!(w[0].log_lik.to_bits(), w[1].log_lik.to_bits());
                assert_eq!(w[0].jumps, w[1].jumps);
            }
        }
    }

    #[test]
    fn identical_seeds_identical_chains() {
        let a = run_seeded(&small_tree(), &quick_config()).unwrap();
        let b = run_seeded(&small_tree(), &quick_config()).unwrap();
        assert_eq!(a.records, b.records);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        write_chain(&a.records, &mut bytes_a).unwrap();
        write_chain(&b.records, &mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn chain_file_round_trip() {
        let chain = run_seeded(&small_tree(), &quick_config()).unwrap();
        let mut bytes = Vec::new();
        write_chain(&chain.records, &mut bytes).unwrap();
        let back = read_chain(&bytes[..], 6).unwrap();
        assert_eq!(back, chain.records);
        assert!(read_chain(&bytes[..], 5).is_err());
        let text = String::from_utf8(bytes).unwrap();
        let truncated = &text[..text.len() - 9];
        assert!(read_chain(truncated.as_bytes(), 6).is_err());
    }

    #[test]
    fn invalid_configs() {
        let t = small_tree();
        for cfg in [
            McmcConfig { iterations: 1, ..quick_config() },
            McmcConfig { burn_in: 1.0, ..quick_config() },
            McmcConfig { discount: 0.0, ..quick_config() },
            McmcConfig { particles: 0, ..quick_config() },
        ] {
            assert!(matches!(run_seeded(&t, &cfg), Err(Error::Config(_))));
        }
        let bare = parse_newick("(A,B);").unwrap();
        assert!(run_seeded(&bare, &quick_config()).is_err());
    }

    #[test]
    fn single_node_tree_samples_rate_prior() {
        use statrs::distribution::{ContinuousCDF, Exp};
        let t = parse_newick("A;").unwrap().attach_observations(&[("A", 1), ("A", 0)]).unwrap();
        let cfg = McmcConfig {
            iterations: 10_000,
            particles: 2,
            seed: 17,
            rate: RateConfig::learned(0.5),
            ..Default::default()
        };
        let chain = run_seeded(&t, &cfg).unwrap();
        assert!(chain.records.iter().all(|r| r.jumps.is_empty() && r.accepted));
        assert_eq!(chain.smc_calls, 1);
        // No branches: rho = 1 / prior_mean_jumps = 2.
        let mut xs = chain.lambdas();
        xs.sort_by(f64::total_cmp);
        let dist = Exp::new(2.0).unwrap();
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = dist.cdf(x);
                (c - i as f64 / n).abs().max((i as f64 + 1.0) / n - c)
            })
            .fold(0.0, f64::max);
        // Kolmogorov critical value at alpha = 0.001.
        assert!(d < 1.95 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn fixed_rate_is_constant() {
        let cfg = McmcConfig {
            rate: RateConfig::fixed(0.3),
            ..quick_config()
        };
        let chain = run_seeded(&small_tree(), &cfg).unwrap();
        assert!(chain.records.iter().all(|r| r.lambda == 0.3));
    }

    #[test]
    fn normalized_branches_sum_to_branch_count() {
        let cfg = McmcConfig {
            normalize_branches: true,
            ..quick_config()
        };
        let chain = run_seeded(&small_tree(), &cfg).unwrap();
        let total: f64 = chain.rescaled_lengths.iter().sum();
        assert!((total - 6.0).abs() < 1e-12);
    }
}
