//! Chinese restaurant franchise on a pruned tree.
//!
//! Each pruned-tree group owns a restaurant. A customer seated at a new
//! cluster in a child restaurant becomes a customer of the parent restaurant;
//! a new cluster at the root restaurant takes its label from the base measure.
//! The concentration parameter is fixed at zero, so each restaurant is fully
//! described by its clusters and an effective discount: `d` at the root group
//! and `d^b` below a pruned edge carrying `b` jumps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tree::{GroupId, PrunedTree};

/// Discrete base distribution over the alphabet `0..V`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMeasure {
    probs: Vec<f64>,
}

impl BaseMeasure {
    pub fn uniform(alphabet: usize) -> Self {
        assert!(alphabet > 0, "alphabet must be non-empty");
        BaseMeasure {
            probs: vec![1.0 / alphabet as f64; alphabet],
        }
    }

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config("base measure needs non-negative finite masses".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("base measure sums to {total}, not 1")));
        }
        Ok(BaseMeasure { probs })
    }

    pub fn alphabet(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn prob(&self, value: u32) -> f64 {
        self.probs[value as usize]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let mut u: f64 = rng.random();
        for (v, &p) in self.probs.iter().enumerate() {
            if u < p {
                return v as u32;
            }
            u -= p;
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
    }
}

/// Static structure shared by all restaurant states on one pruned tree.
#[derive(Debug, Clone, PartialEq)]
pub struct FranchiseLayout {
    parent: Vec<Option<GroupId>>,
    discount: Vec<f64>,
    lineage: Vec<Vec<GroupId>>,
    base: BaseMeasure,
    global_discount: f64,
}

impl FranchiseLayout {
    pub fn new(pruned: &PrunedTree, discount: f64, base: BaseMeasure) -> Result<Self> {
        let parents = pruned.groups.iter().map(|g| g.parent).collect();
        let jumps = pruned.groups.iter().map(|g| g.jumps).collect();
        Self::from_parts(parents, jumps, discount, base)
    }

    /// Builds a layout from parent links and per-group edge jump counts.
    /// Parents must precede children in id order.
    pub fn from_parts(
        parent: Vec<Option<GroupId>>,
        jumps: Vec<u32>,
        discount: f64,
        base: BaseMeasure,
    ) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Config(format!("discount {discount} must lie in (0, 1)")));
        }
        if parent.len() != jumps.len() || parent.is_empty() || parent[0].is_some() {
            return Err(Error::Config("group 0 must be the only root".into()));
        }
        let mut lineage: Vec<Vec<GroupId>> = Vec::with_capacity(parent.len());
        let mut eff = Vec::with_capacity(parent.len());
        for (g, p) in parent.iter().enumerate() {
            match *p {
                None if g == 0 => {
                    lineage.push(vec![0]);
                    eff.push(discount);
                }
                Some(p) if p < g && jumps[g] >= 1 => {
                    let mut path = vec![g];
                    path.extend_from_slice(&lineage[p]);
                    lineage.push(path);
                    eff.push(discount.powi(jumps[g] as i32).max(f64::MIN_POSITIVE));
                }
                _ => {
                    return Err(Error::Config(format!(
                        "group {g} needs an earlier parent and at least one jump"
                    )))
                }
            }
        }
        Ok(FranchiseLayout {
            parent,
            discount: eff,
            lineage,
            base,
            global_discount: discount,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, group: GroupId) -> Option<GroupId> {
        self.parent[group]
    }

    /// Effective discount of a group's restaurant.
    pub fn effective_discount(&self, group: GroupId) -> f64 {
        self.discount[group]
    }

    pub fn global_discount(&self) -> f64 {
        self.global_discount
    }

    pub fn base(&self) -> &BaseMeasure {
        &self.base
    }

    /// The group followed by its ancestors up to the root group.
    pub fn lineage(&self, group: GroupId) -> &[GroupId] {
        &self.lineage[group]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cluster {
    pub label: u32,
    pub count: u32,
}

/// One restaurant. Clusters keep insertion order.
#[derive(Debug, PartialEq, Eq)]
pub struct Restaurant {
    clusters: Vec<Cluster>,
    customers: u32,
    // Per label: customers, clusters, and customers that are observations
    // of this group (as opposed to clusters opened by child restaurants).
    tallies: Vec<u32>,
    alphabet: usize,
}

impl Clone for Restaurant {
    fn clone(&self) -> Self {
        Restaurant {
            clusters: self.clusters.clone(),
            customers: self.customers,
            tallies: self.tallies.clone(),
            alphabet: self.alphabet,
        }
    }

    fn clone_from(&mut self, source: &Self) {
        self.clusters.clone_from(&source.clusters);
        self.customers = source.customers;
        self.tallies.clone_from(&source.tallies);
        self.alphabet = source.alphabet;
    }
}

impl Restaurant {
    fn empty(alphabet: usize) -> Self {
        Restaurant {
            clusters: Vec::new(),
            customers: 0,
            tallies: vec![0; 3 * alphabet],
            alphabet,
        }
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn customers(&self) -> u32 {
        self.customers
    }

    pub fn num_clusters(&self) -> u32 {
        self.clusters.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.customers == 0
    }

    #[inline]
    pub fn customers_with(&self, label: u32) -> u32 {
        self.tallies[label as usize]
    }

    #[inline]
    pub fn clusters_with(&self, label: u32) -> u32 {
        self.tallies[self.alphabet + label as usize]
    }

    #[inline]
    pub fn direct_customers_with(&self, label: u32) -> u32 {
        self.tallies[2 * self.alphabet + label as usize]
    }

    /// Predictive mass of `label` given this restaurant's discount and the
    /// parent's predictive mass for the same label.
    #[inline]
    fn predictive(&self, label: u32, discount: f64, parent_prob: f64) -> f64 {
        if self.customers == 0 {
            return parent_prob;
        }
        let n = self.customers as f64;
        let existing = self.customers_with(label) as f64 - discount * self.clusters_with(label) as f64;
        let new = self.clusters.len() as f64 * discount * parent_prob;
        (existing + new) / n
    }

    fn open(&mut self, label: u32, direct: bool) -> usize {
        self.clusters.push(Cluster { label, count: 1 });
        self.customers += 1;
        self.tallies[label as usize] += 1;
        self.tallies[self.alphabet + label as usize] += 1;
        if direct {
            self.tallies[2 * self.alphabet + label as usize] += 1;
        }
        self.clusters.len() - 1
    }

    fn join(&mut self, index: usize, direct: bool) {
        let label = self.clusters[index].label;
        self.clusters[index].count += 1;
        self.customers += 1;
        self.tallies[label as usize] += 1;
        if direct {
            self.tallies[2 * self.alphabet + label as usize] += 1;
        }
    }

    /// Picks an existing cluster labelled `label` with weight `count - discount`.
    fn pick_existing<R: Rng + ?Sized>(&self, label: u32, discount: f64, rng: &mut R) -> usize {
        let total = self.customers_with(label) as f64 - discount * self.clusters_with(label) as f64;
        let mut u = rng.random::<f64>() * total;
        let mut last = usize::MAX;
        for (i, c) in self.clusters.iter().enumerate() {
            if c.label == label {
                let w = c.count as f64 - discount;
                if u < w {
                    return i;
                }
                u -= w;
                last = i;
            }
        }
        debug_assert!(last != usize::MAX);
        last
    }
}

/// One entry of a seating path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seating {
    pub group: GroupId,
    pub cluster: usize,
    pub created: bool,
}

/// Seating path of one observation: from its own group upward, ending at the
/// first existing cluster joined or at a new root-level cluster.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterConfiguration {
    pub path: Vec<Seating>,
}

/// Restaurants for every group of one pruned tree; one particle of the filter.
#[derive(Debug, PartialEq)]
pub struct CrfState<'a> {
    layout: &'a FranchiseLayout,
    restaurants: Vec<Restaurant>,
}

impl Clone for CrfState<'_> {
    fn clone(&self) -> Self {
        CrfState {
            layout: self.layout,
            restaurants: self.restaurants.clone(),
        }
    }

    fn clone_from(&mut self, source: &Self) {
        self.layout = source.layout;
        self.restaurants.clone_from(&source.restaurants);
    }
}

impl<'a> CrfState<'a> {
    pub fn new(layout: &'a FranchiseLayout) -> Self {
        let v = layout.base.alphabet();
        CrfState {
            layout,
            restaurants: (0..layout.num_groups()).map(|_| Restaurant::empty(v)).collect(),
        }
    }

    pub fn layout(&self) -> &'a FranchiseLayout {
        self.layout
    }

    pub fn restaurants(&self) -> &[Restaurant] {
        &self.restaurants
    }

    pub fn restaurant(&self, group: GroupId) -> &Restaurant {
        &self.restaurants[group]
    }

    fn check(&self, group: GroupId, value: u32) -> Result<()> {
        if group >= self.restaurants.len() {
            return Err(Error::UnknownGroup(group));
        }
        if value as usize >= self.layout.base.alphabet() {
            return Err(Error::ValueOutOfRange {
                value,
                alphabet: self.layout.base.alphabet(),
            });
        }
        Ok(())
    }

    /// Fills `parent_probs[i]` with the predictive mass of `value` at the
    /// parent of `lineage[i]` (the base measure above the root) and returns
    /// the predictive mass at `group` itself.
    #[inline]
    fn lineage_probs(&self, group: GroupId, value: u32, parent_probs: &mut Vec<f64>) -> f64 {
        let lineage = self.layout.lineage(group);
        parent_probs.clear();
        parent_probs.resize(lineage.len(), 0.0);
        let mut p = self.layout.base.prob(value);
        for (i, &g) in lineage.iter().enumerate().rev() {
            parent_probs[i] = p;
            p = self.restaurants[g].predictive(value, self.layout.discount[g], p);
        }
        p
    }

    /// Predictive probability of `value` for the next observation at `group`.
    pub fn predictive(&self, group: GroupId, value: u32) -> Result<f64> {
        self.check(group, value)?;
        let mut p = self.layout.base.prob(value);
        for &g in self.layout.lineage(group).iter().rev() {
            p = self.restaurants[g].predictive(value, self.layout.discount[g], p);
        }
        Ok(p)
    }

    /// Samples a seating path for an observed `value` at `group` from its
    /// exact conditional and applies it.
    pub fn seat<R: Rng + ?Sized>(
        &mut self,
        group: GroupId,
        value: u32,
        rng: &mut R,
    ) -> Result<ClusterConfiguration> {
        self.check(group, value)?;
        let mut scratch = Vec::new();
        let mut path = Vec::new();
        let p = self.seat_inner(group, value, rng, &mut scratch, Some(&mut path));
        if p > 0.0 {
            Ok(ClusterConfiguration { path })
        } else {
            Err(Error::ZeroProbability(value))
        }
    }

    /// Hot-path variant of [`seat`](Self::seat) for the particle filter:
    /// returns the predictive mass of `value` and, if positive, seats it.
    /// Inputs are trusted.
    #[inline]
    pub fn seat_weighted<R: Rng + ?Sized>(
        &mut self,
        group: GroupId,
        value: u32,
        rng: &mut R,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        self.seat_inner(group, value, rng, scratch, None)
    }

    fn seat_inner<R: Rng + ?Sized>(
        &mut self,
        group: GroupId,
        value: u32,
        rng: &mut R,
        parent_probs: &mut Vec<f64>,
        mut path: Option<&mut Vec<Seating>>,
    ) -> f64 {
        let p = self.lineage_probs(group, value, parent_probs);
        if !(p > 0.0) {
            return 0.0;
        }
        let lineage = self.layout.lineage(group);
        for (i, &g) in lineage.iter().enumerate() {
            let discount = self.layout.discount[g];
            let direct = i == 0;
            let r = &mut self.restaurants[g];
            let join = if r.is_empty() {
                None
            } else {
                let existing = r.customers_with(value) as f64 - discount * r.clusters_with(value) as f64;
                let new = r.clusters.len() as f64 * discount * parent_probs[i];
                let u = rng.random::<f64>() * (existing + new);
                (u < existing).then(|| r.pick_existing(value, discount, rng))
            };
            match join {
                Some(k) => {
                    r.join(k, direct);
                    if let Some(path) = path.as_deref_mut() {
                        path.push(Seating { group: g, cluster: k, created: false });
                    }
                    return p;
                }
                None => {
                    let k = r.open(value, direct);
                    if let Some(path) = path.as_deref_mut() {
                        path.push(Seating { group: g, cluster: k, created: true });
                    }
                }
            }
        }
        p
    }

    /// Draws a fresh value at `group` from the franchise, seating it.
    pub fn draw<R: Rng + ?Sized>(&mut self, group: GroupId, rng: &mut R) -> u32 {
        let lineage = self.layout.lineage(group);
        let mut opened = 0;
        let mut label = None;
        for &g in lineage {
            let discount = self.layout.discount[g];
            let r = &mut self.restaurants[g];
            if !r.is_empty() {
                let mut u = rng.random::<f64>() * r.customers as f64;
                for (k, c) in r.clusters.iter().enumerate() {
                    let w = c.count as f64 - discount;
                    if u < w {
                        label = Some((k, c.label));
                        break;
                    }
                    u -= w;
                }
            }
            if let Some((k, _)) = label {
                r.join(k, opened == 0);
                break;
            }
            opened += 1;
        }
        let value = match label {
            Some((_, l)) => l,
            None => self.layout.base.sample(rng),
        };
        for (i, &g) in lineage.iter().enumerate().take(opened) {
            self.restaurants[g].open(value, i == 0);
        }
        value
    }

    /// Every non-root restaurant has as many clusters per label as it has
    /// contributed customers with that label to its parent.
    pub fn is_consistent(&self) -> bool {
        let v = self.layout.base.alphabet();
        let mut expected: Vec<Vec<u32>> = self
            .restaurants
            .iter()
            .map(|r| (0..v as u32).map(|l| r.direct_customers_with(l)).collect())
            .collect();
        for (g, r) in self.restaurants.iter().enumerate() {
            if let Some(p) = self.layout.parent[g] {
                for l in 0..v as u32 {
                    expected[p][l as usize] += r.clusters_with(l);
                }
            }
        }
        self.restaurants.iter().zip(&expected).all(|(r, exp)| {
            let counts_ok = r.clusters.iter().all(|c| c.count >= 1)
                && r.clusters.iter().map(|c| c.count).sum::<u32>() == r.customers;
            let labels_ok = (0..v as u32).all(|l| {
                r.customers_with(l) == exp[l as usize]
                    && r.clusters_with(l) == r.clusters.iter().filter(|c| c.label == l).count() as u32
                    && r.clusters.iter().filter(|c| c.label == l).map(|c| c.count).sum::<u32>()
                        == r.customers_with(l)
            });
            counts_ok && labels_ok
        })
    }

    /// Removes the most recently seated path.
    #[cfg(test)]
    fn unseat(&mut self, config: &ClusterConfiguration) {
        for (i, s) in config.path.iter().enumerate().rev() {
            let direct = i == 0;
            let r = &mut self.restaurants[s.group];
            let label = r.clusters[s.cluster].label;
            if s.created {
                assert_eq!(s.cluster, r.clusters.len() - 1);
                r.clusters.pop();
                r.tallies[r.alphabet + label as usize] -= 1;
            } else {
                r.clusters[s.cluster].count -= 1;
            }
            r.customers -= 1;
            r.tallies[label as usize] -= 1;
            if direct {
                r.tallies[2 * r.alphabet + label as usize] -= 1;
            }
        }
    }

    /// All seating outcomes for `value` at `group`, each paired with its
    /// joint probability (seating path and value together).
    #[cfg(test)]
    fn seat_outcomes(&self, group: GroupId, value: u32) -> Vec<(f64, CrfState<'a>)> {
        let mut parent_probs = Vec::new();
        self.lineage_probs(group, value, &mut parent_probs);
        let lineage = self.layout.lineage(group);
        let mut out = Vec::new();
        let mut carry = 1.0;
        let mut state = self.clone();
        for (i, &g) in lineage.iter().enumerate() {
            let d = self.layout.discount[g];
            let r = &self.restaurants[g];
            let n = r.customers as f64;
            if !r.is_empty() {
                for (k, c) in r.clusters.iter().enumerate() {
                    if c.label == value {
                        let mut s = state.clone();
                        s.restaurants[g].join(k, i == 0);
                        out.push((carry * (c.count as f64 - d) / n, s));
                    }
                }
                carry *= r.clusters.len() as f64 * d / n;
            }
            state.restaurants[g].open(value, i == 0);
        }
        out.push((carry * self.layout.base.prob(value), state));
        out
    }
}

/// Generates observations per group by sequentially drawing customers from
/// the franchise, groups in id order.
pub fn generate<R: Rng + ?Sized>(
    pruned: &PrunedTree,
    discount: f64,
    base: &BaseMeasure,
    counts: &[usize],
    rng: &mut R,
) -> Result<Vec<Vec<u32>>> {
    if counts.len() != pruned.num_groups() {
        return Err(Error::Config("one observation count per group expected".into()));
    }
    let layout = FranchiseLayout::new(pruned, discount, base.clone())?;
    let mut state = CrfState::new(&layout);
    Ok(counts
        .iter()
        .enumerate()
        .map(|(g, &c)| (0..c).map(|_| state.draw(g, rng)).collect())
        .collect())
}
