//! Immune-inspired signature lookup table: negative-selection training,
//! clonal refinement and a priority stack of detectors.

mod bundle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::signature::{Signature, SignatureVector, DIM};

pub use bundle::{MAGIC as BUNDLE_MAGIC, VERSION as BUNDLE_VERSION};

/// Draw budget of negative selection before giving up.
pub const MAX_DRAWS: usize = 1_000_000;
/// Priority added on every promotion.
pub const PRIORITY_STEP: f64 = 1.0;
const CENSOR_BATCH: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AisParams {
    pub antibody_count: usize,
    pub clone_count: usize,
    /// Mutation grid resolution per component.
    pub genes: u32,
    pub mutation_cycle: u64,
    pub remove_threshold: f64,
    pub selection_threshold: f64,
    pub diversity: f64,
    pub tp: f64,
}

impl Default for AisParams {
    fn default() -> Self {
        Self {
            antibody_count: 50,
            clone_count: 25,
            genes: 255,
            mutation_cycle: 83,
            remove_threshold: 0.3,
            selection_threshold: 0.01,
            diversity: 0.64,
            tp: 0.09,
        }
    }
}

impl AisParams {
    pub fn validate(&self) -> Result<()> {
        if self.antibody_count == 0 || self.clone_count == 0 || self.genes == 0 || self.mutation_cycle == 0 {
            return Err(Error::Validation("AIS counts must be positive".into()));
        }
        if !(self.selection_threshold > 0.0 && self.remove_threshold > self.selection_threshold) {
            return Err(Error::Validation(format!(
                "need 0 < selection threshold {} < remove threshold {}",
                self.selection_threshold, self.remove_threshold
            )));
        }
        if !(self.diversity > 0.0 && self.diversity <= 1.0) {
            return Err(Error::Validation(format!("diversity {} outside (0, 1]", self.diversity)));
        }
        if !(self.tp > 0.0 && self.tp < 1.0) {
            return Err(Error::Validation(format!("tp {} outside (0, 1)", self.tp)));
        }
        Ok(())
    }
}

/// Squared Euclidean distance.
pub fn affinity(s: &SignatureVector, d: &SignatureVector) -> f64 {
    s.0.iter().zip(&d.0).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// [`affinity`] over slices of any length.
pub fn affinity_slices(s: &[f64], d: &[f64]) -> Result<f64> {
    if s.len() != d.len() {
        return Err(Error::DimensionMismatch { left: s.len(), right: d.len() });
    }
    Ok(s.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Snaps a vector to the representable signature grid.
pub fn canonical(v: &SignatureVector) -> SignatureVector {
    let sig = v.quantize();
    sig.dequantize().unwrap_or(SignatureVector([0.0; DIM]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Antibody {
    pub vector: SignatureVector,
    pub priority: f64,
    pub age_windows: u64,
    pub wins: u64,
    /// Most recent antigen this antibody won.
    pub last_antigen: Option<SignatureVector>,
}

impl Antibody {
    pub fn new(vector: SignatureVector) -> Self {
        Self { vector, priority: 0.0, age_windows: 0, wins: 0, last_antigen: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Stack index of the closest antibody.
    pub winner: usize,
    pub min_affinity: f64,
    /// `1 / (1 + min_affinity)`.
    pub score: f64,
    /// `score > tp` and the winner lies inside the remove threshold.
    pub fired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AppendOutcome {
    Appended { evicted: bool },
    /// The vector sits inside the self region and would break tolerance.
    RejectedSelf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClonalOutcome {
    pub source: usize,
    pub source_affinity: f64,
    pub best_clone_affinity: Option<f64>,
    pub replaced: bool,
}

/// The signature lookup table. Index 0 is the top of the stack.
#[derive(Debug, Clone)]
pub struct Population {
    pub slt: Vec<Antibody>,
    pub self_set: Vec<SignatureVector>,
    pub params: AisParams,
    pub rng_seed: u64,
    rng: ChaCha8Rng,
    /// Consecutive windows in which the top antibody won.
    pub top_streak: u32,
    exec: Execution,
}

impl PartialEq for Population {
    /// Execution strategy is not part of the state.
    fn eq(&self, other: &Self) -> bool {
        self.slt == other.slt
            && self.self_set == other.self_set
            && self.params == other.params
            && self.rng_seed == other.rng_seed
            && self.rng == other.rng
            && self.top_streak == other.top_streak
    }
}

fn random_vector(rng: &mut ChaCha8Rng, genes: u32) -> SignatureVector {
    let mut v = [0.0; DIM];
    for c in &mut v {
        *c = rng.random_range(0..=genes) as f64 / genes as f64;
    }
    canonical(&SignatureVector(v))
}

fn binds_self(v: &SignatureVector, self_set: &[SignatureVector], remove: f64) -> bool {
    self_set.iter().any(|s| affinity(v, s) < remove)
}

/// Trains detectors that avoid every member of `self_set`.
pub fn negative_selection_train(self_set: &[SignatureVector], params: &AisParams, seed: u64) -> Result<Population> {
    negative_selection_train_with(self_set, params, seed, Execution::default())
}

/// [`negative_selection_train`] with an explicit execution strategy. Both
/// strategies produce the same population.
pub fn negative_selection_train_with(
    self_set: &[SignatureVector],
    params: &AisParams,
    seed: u64,
    exec: Execution,
) -> Result<Population> {
    params.validate()?;
    if self_set.is_empty() {
        return Err(Error::Validation("self set is empty".into()));
    }
    let mut pop = Population {
        slt: Vec::with_capacity(params.antibody_count),
        self_set: self_set.iter().map(canonical).collect(),
        params: params.clone(),
        rng_seed: seed,
        rng: ChaCha8Rng::seed_from_u64(seed),
        top_streak: 0,
        exec,
    };
    let mut draws = 0;
    while pop.slt.len() < params.antibody_count {
        if draws >= MAX_DRAWS {
            return Err(Error::Coverage { accepted: pop.slt.len(), draws });
        }
        let batch = CENSOR_BATCH.min(MAX_DRAWS - draws);
        let candidates: Vec<SignatureVector> =
            (0..batch).map(|_| random_vector(&mut pop.rng, params.genes)).collect();
        let ok = par::map(exec, &candidates, |c| !binds_self(c, &pop.self_set, params.remove_threshold));
        for (c, ok) in candidates.into_iter().zip(ok) {
            draws += 1;
            if ok {
                pop.slt.push(Antibody::new(c));
                if pop.slt.len() == params.antibody_count {
                    break;
                }
            }
        }
    }
    Ok(pop)
}

impl Population {
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn len(&self) -> usize {
        self.slt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slt.is_empty()
    }

    /// Closest antibody in stack order; ties go to the lower index.
    pub fn match_vector(&self, incoming: &SignatureVector) -> Result<MatchResult> {
        let mut best: Option<(usize, f64)> = None;
        for (i, ab) in self.slt.iter().enumerate() {
            let a = affinity(incoming, &ab.vector);
            if best.is_none_or(|(_, b)| a < b) {
                best = Some((i, a));
            }
        }
        let (winner, min_affinity) = best.ok_or(Error::NotTrained)?;
        let score = 1.0 / (1.0 + min_affinity);
        let fired = score > self.params.tp && min_affinity < self.params.remove_threshold;
        Ok(MatchResult { winner, min_affinity, score, fired })
    }

    /// Moves `winner` to the top, counting the win.
    pub fn promote(&mut self, winner: usize) -> Result<()> {
        if winner >= self.slt.len() {
            return Err(Error::Validation(format!("antibody {winner} out of {}", self.slt.len())));
        }
        let mut ab = self.slt.remove(winner);
        ab.wins += 1;
        ab.priority += PRIORITY_STEP;
        self.slt.insert(0, ab);
        Ok(())
    }

    /// Promotes the winner of `antigen` and tracks the top-of-stack streak.
    pub fn record_win(&mut self, winner: usize, antigen: SignatureVector) -> Result<()> {
        self.top_streak = if winner == 0 { self.top_streak + 1 } else { 1 };
        self.promote(winner)?;
        self.slt[0].last_antigen = Some(antigen);
        Ok(())
    }

    /// Breaks the top-of-stack streak.
    pub fn record_miss(&mut self) {
        self.top_streak = 0;
    }

    fn eviction_index(&self, protect: &[usize]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, ab) in self.slt.iter().enumerate() {
            if protect.contains(&i) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let cur = &self.slt[b];
                    let worse = ab.priority < cur.priority
                        || (ab.priority == cur.priority && ab.age_windows >= cur.age_windows);
                    Some(if worse { i } else { b })
                }
            };
        }
        best
    }

    /// Lowest priority, then oldest, then deepest in the stack.
    pub fn eviction_candidate(&self) -> Option<usize> {
        self.eviction_index(&[])
    }

    /// Appends `incoming` at the bottom with zero priority, evicting one
    /// antibody if the table overflows. The newcomer itself is never evicted.
    pub fn append_new(&mut self, incoming: SignatureVector) -> AppendOutcome {
        let v = canonical(&incoming);
        if binds_self(&v, &self.self_set, self.params.remove_threshold) {
            return AppendOutcome::RejectedSelf;
        }
        self.slt.push(Antibody::new(v));
        let mut evicted = false;
        while self.slt.len() > self.params.antibody_count {
            let newcomer = self.slt.len() - 1;
            match self.eviction_index(&[newcomer]) {
                Some(i) => {
                    self.slt.remove(i);
                    evicted = true;
                }
                None => break,
            }
        }
        AppendOutcome::Appended { evicted }
    }

    /// Clones the antibody closest to `antigen`, mutates the clones in
    /// inverse proportion to their parent's affinity and keeps the best clone
    /// if it improves on the parent by more than the selection threshold.
    pub fn clonal_step(&mut self, antigen: &SignatureVector) -> Result<ClonalOutcome> {
        let m = self.match_vector(antigen)?;
        let source = m.winner;
        let genes = self.params.genes as f64;
        let step = (m.min_affinity / DIM as f64).sqrt().max(1.0 / genes);
        let parent = self.slt[source].vector;
        let clones: Vec<SignatureVector> = (0..self.params.clone_count)
            .map(|_| {
                let mut v = parent.0;
                for c in &mut v {
                    let delta = self.rng.random_range(-step..=step);
                    *c = ((*c + delta).clamp(0.0, 1.0) * genes).round() / genes;
                }
                canonical(&SignatureVector(v))
            })
            .collect();
        let remove = self.params.remove_threshold;
        let self_set = &self.self_set;
        let scored = par::map(self.exec, &clones, |c| {
            (!binds_self(c, self_set, remove)).then(|| affinity(c, antigen))
        });
        let best = scored
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|a| (i, a)))
            .fold(None, |acc: Option<(usize, f64)>, (i, a)| match acc {
                Some((_, b)) if b <= a => acc,
                _ => Some((i, a)),
            });
        let mut out = ClonalOutcome {
            source,
            source_affinity: m.min_affinity,
            best_clone_affinity: best.map(|(_, a)| a),
            replaced: false,
        };
        if let Some((i, a)) = best {
            if m.min_affinity - a > self.params.selection_threshold {
                if let Some(worst) = self.eviction_index(&[source]) {
                    let mut ab = Antibody::new(clones[i]);
                    ab.last_antigen = Some(*antigen);
                    self.slt[worst] = ab;
                    out.replaced = true;
                }
            }
        }
        Ok(out)
    }

    /// Runs the scheduled or streak-triggered maintenance pass. Returns
    /// whether it fired.
    pub fn mutation_tick(&mut self, window_id: u64, duration_required: u32) -> Result<bool> {
        if self.slt.is_empty() {
            return Err(Error::NotTrained);
        }
        let scheduled = window_id.is_multiple_of(self.params.mutation_cycle);
        let sustained = self.top_streak >= duration_required.max(1);
        if !scheduled && !sustained {
            return Ok(false);
        }
        if let Some(antigen) = self.slt[0].last_antigen {
            self.clonal_step(&antigen)?;
        }
        if sustained {
            self.top_streak = 0;
        }
        let max = self.slt.iter().map(|a| a.priority).fold(0.0, f64::max);
        if max > 0.0 {
            self.slt.iter_mut().for_each(|a| a.priority /= max);
        }
        self.maintain_diversity();
        Ok(true)
    }

    /// Slots whose vector differs from every other slot by more than the
    /// selection threshold.
    pub fn distinct_mask(&self) -> Vec<bool> {
        let t = self.params.selection_threshold;
        let n = self.slt.len();
        (0..n)
            .map(|i| (0..n).all(|j| i == j || affinity(&self.slt[i].vector, &self.slt[j].vector) > t))
            .collect()
    }

    pub fn distinct_fraction(&self) -> f64 {
        if self.slt.is_empty() {
            return 1.0;
        }
        self.distinct_mask().iter().filter(|d| **d).count() as f64 / self.slt.len() as f64
    }

    /// Replaces low-priority near-duplicates with fresh censored detectors
    /// until the distinct fraction reaches the diversity target.
    pub fn maintain_diversity(&mut self) -> usize {
        let mut replaced = 0;
        let mut budget = 10_000;
        while self.distinct_fraction() < self.params.diversity && budget > 0 {
            let mask = self.distinct_mask();
            let Some(victim) = (0..self.slt.len())
                .filter(|&i| !mask[i])
                .min_by(|&a, &b| {
                    let (x, y) = (&self.slt[a], &self.slt[b]);
                    x.priority.total_cmp(&y.priority).then(b.cmp(&a))
                })
            else {
                break;
            };
            loop {
                budget -= 1;
                let cand = random_vector(&mut self.rng, self.params.genes);
                let clear_self = !binds_self(&cand, &self.self_set, self.params.remove_threshold);
                let clear_slt = self
                    .slt
                    .iter()
                    .enumerate()
                    .all(|(j, ab)| j == victim || affinity(&cand, &ab.vector) > self.params.selection_threshold);
                if clear_self && clear_slt {
                    self.slt[victim] = Antibody::new(cand);
                    replaced += 1;
                    break;
                }
                if budget == 0 {
                    break;
                }
            }
        }
        replaced
    }

    pub fn tick_age(&mut self) {
        self.slt.iter_mut().for_each(|a| a.age_windows += 1);
    }

    /// Number of (antibody, self) pairs closer than the remove threshold.
    pub fn self_tolerance_violations(&self) -> usize {
        let remove = self.params.remove_threshold;
        par::count(self.exec, &self.slt, |ab| {
            self.self_set.iter().filter(|s| affinity(&ab.vector, s) < remove).count()
        })
    }

    /// Packed signature words of the stack, top first.
    pub fn signatures(&self) -> Vec<Signature> {
        self.slt.iter().map(|a| a.vector.quantize()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(i: usize) -> SignatureVector {
        let mut v = [0.0; DIM];
        v[i] = 1.0;
        SignatureVector(v)
    }

    fn small_params(n: usize) -> AisParams {
        AisParams { antibody_count: n, ..AisParams::default() }
    }

    #[test]
    fn affinity_closed_forms() {
        assert_eq!(affinity(&unit(0), &unit(0)), 0.0);
        assert_eq!(affinity(&unit(0), &unit(1)), 2.0);
        assert!(matches!(affinity_slices(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_self_repels_detectors() {
        let zero = SignatureVector([0.0; DIM]);
        let pop = negative_selection_train(&[zero], &AisParams::default(), 1).unwrap();
        assert_eq!(pop.len(), 50);
        assert!(pop.slt.iter().all(|a| a.vector.0.iter().map(|x| x * x).sum::<f64>() >= 0.3));
    }

    #[test]
    fn saturated_space_is_a_coverage_error() {
        let centre = SignatureVector([0.5; DIM]);
        let params = AisParams { remove_threshold: 100.0, ..AisParams::default() };
        assert!(matches!(
            negative_selection_train(&[centre], &params, 1),
            Err(Error::Coverage { accepted: 0, .. })
        ));
    }

    #[test]
    fn exact_match_wins_and_far_query_does_not_fire() {
        let zero = SignatureVector([0.0; DIM]);
        let pop = negative_selection_train(&[zero], &small_params(20), 4).unwrap();
        let target = pop.slt[7].vector;
        let m = pop.match_vector(&target).unwrap();
        assert_eq!((m.winner, m.min_affinity, m.score), (7, 0.0, 1.0));
        assert!(m.fired);
        let far = pop.match_vector(&zero).unwrap();
        assert!(far.min_affinity >= 0.3 && !far.fired);
    }

    #[test]
    fn promote_is_a_stack_move() {
        let zero = SignatureVector([0.0; DIM]);
        let mut pop = negative_selection_train(&[zero], &small_params(6), 2).unwrap();
        let before: Vec<_> = pop.slt.iter().map(|a| a.vector).collect();
        pop.promote(5).unwrap();
        let after: Vec<_> = pop.slt.iter().map(|a| a.vector).collect();
        assert_eq!(after[0], before[5]);
        assert_eq!(&after[1..], &before[..5]);
        pop.promote(0).unwrap();
        pop.promote(0).unwrap();
        assert_eq!(pop.slt[0].priority, 3.0);
        assert_eq!(pop.slt[0].wins, 3);
        assert!(pop.promote(6).is_err());
    }

    #[test]
    fn append_respects_capacity_and_self() {
        let zero = SignatureVector([0.0; DIM]);
        let mut pop = negative_selection_train(&[zero], &small_params(5), 3).unwrap();
        let fresh = canonical(&SignatureVector([0.9; DIM]));
        assert_eq!(pop.append_new(fresh), AppendOutcome::Appended { evicted: true });
        assert_eq!(pop.len(), 5);
        let m = pop.match_vector(&fresh).unwrap();
        assert_eq!(m.min_affinity, 0.0);
        assert_eq!(pop.append_new(SignatureVector([0.01; DIM])), AppendOutcome::RejectedSelf);
    }

    #[test]
    fn mutation_schedule() {
        let zero = SignatureVector([0.0; DIM]);
        let mut pop = negative_selection_train(&[zero], &AisParams::default(), 9).unwrap();
        let snapshot = pop.clone();
        assert!(!pop.mutation_tick(82, 3).unwrap());
        assert_eq!(pop, snapshot);
        pop.promote(3).unwrap();
        assert!(pop.mutation_tick(83, 3).unwrap());
        assert!(pop.slt.iter().all(|a| (0.0..=1.0).contains(&a.priority)));
        assert_eq!(pop.slt[0].priority, 1.0);
    }
}
