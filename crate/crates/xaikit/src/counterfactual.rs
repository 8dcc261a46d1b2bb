//! Metaheuristic counterfactual search over bounded feature domains.
//!
//! Candidates are ranked by a lexicographic (hard, soft) score pair. The
//! hard level sums the validity, actionability and confidence penalties and
//! must reach zero for a feasible solution; the soft level ranks feasible
//! solutions by weighted distance and sparsity. A construction phase seeds
//! the search with random in-bound mutations, then tabu search or hill
//! climbing refines locally. The iteration budget counts model evaluations.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    predict_checked, BlackBoxModel, DomainKind, FeatureDomain, FeatureValue, FeatureVector,
    OutputVector,
};

/// Numeric changes below this are treated as "unchanged" for sparsity.
const CHANGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    Tabu { tenure: usize },
    HillClimbing,
}

impl Default for SearchStrategy {
    fn default() -> Self {
        SearchStrategy::Tabu { tenure: 7 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub strategy: SearchStrategy,
    /// Budget counted in model evaluations (the dominant cost).
    pub max_evaluations: usize,
    pub construction_candidates: usize,
    pub moves_per_step: usize,
    /// Numeric nudge magnitude as a fraction of the feature's domain range.
    pub numeric_step_fraction: f64,
    /// Terminate once a valid candidate stops improving for this many
    /// evaluations.
    pub stall_window: usize,
    /// Epoch length in evaluations; epochs alternate between a fresh
    /// construction batch (diversification across basins) and resuming from
    /// the best valid candidate (intensification).
    pub restart_interval: usize,
    pub soft_distance_weight: f64,
    pub soft_sparsity_weight: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            strategy: SearchStrategy::default(),
            max_evaluations: 200_000,
            construction_candidates: 20,
            moves_per_step: 40,
            numeric_step_fraction: 0.05,
            stall_window: 2000,
            restart_interval: 1000,
            soft_distance_weight: 1.0,
            soft_sparsity_weight: 1.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// Desk-scale budget for tests and quick experiments.
    pub fn desk() -> Self {
        SolverConfig {
            max_evaluations: 10_000,
            ..SolverConfig::default()
        }
    }

    pub fn with_seed(seed: u64) -> Self {
        SolverConfig {
            seed,
            ..SolverConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_evaluations == 0
            || self.moves_per_step == 0
            || self.stall_window == 0
            || self.restart_interval == 0
            || self.numeric_step_fraction <= 0.0
        {
            return Err(Error::InvalidConfig(
                "solver knobs must all be positive".into(),
            ));
        }
        if let SearchStrategy::Tabu { tenure } = self.strategy {
            if tenure == 0 {
                return Err(Error::InvalidConfig("tabu tenure must be positive".into()));
            }
        }
        Ok(())
    }
}

/// The search target: desired outputs, per-output confidence thresholds
/// (a threshold of exactly 1 bypasses the confidence penalty for that
/// output), and the validity tolerance on the output distance.
#[derive(Debug, Clone, Serialize)]
pub struct CfGoal {
    pub desired: OutputVector,
    pub thresholds: Vec<f64>,
    pub epsilon: f64,
}

impl CfGoal {
    /// Thresholds default to all ones, which disables the confidence
    /// penalty.
    pub fn new(desired: OutputVector, epsilon: f64) -> Self {
        let thresholds = vec![1.0; desired.len()];
        CfGoal {
            desired,
            thresholds,
            epsilon,
        }
    }

    pub fn with_thresholds(mut self, thresholds: Vec<f64>) -> Self {
        self.thresholds = thresholds;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::InvalidConfig("epsilon must be >= 0".into()));
        }
        if self.thresholds.len() != self.desired.len() {
            return Err(Error::InvalidConfig(format!(
                "{} thresholds for {} outputs",
                self.thresholds.len(),
                self.desired.len()
            )));
        }
        if self.thresholds.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("thresholds must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Lexicographic (hard, soft) score with the individual components kept.
/// Greater hard wins; ties break by greater soft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateScore {
    pub hard: f64,
    pub soft: f64,
    /// Negated squared Euclidean distance between outputs and the goal.
    pub h1: f64,
    /// Negated count of immutable features changed.
    pub h2: f64,
    /// Negated count of outputs with confidence below their threshold.
    pub h3: f64,
    /// Feature distance (L1 per numeric feature, 1 per changed symbol),
    /// optionally MAD-scaled.
    pub s1: f64,
    /// Negated count of changed features.
    pub s2: f64,
}

impl CandidateScore {
    pub fn better_than(&self, other: &CandidateScore) -> bool {
        if self.hard != other.hard {
            return self.hard > other.hard;
        }
        self.soft > other.soft
    }

    /// Ordering among candidates that are already feasible: the hard level
    /// has served its purpose, so the soft level ranks them (ties broken by
    /// hard).
    pub fn better_valid_than(&self, other: &CandidateScore) -> bool {
        if self.soft != other.soft {
            return self.soft > other.soft;
        }
        self.hard > other.hard
    }

    /// Feasibility: no actionability or confidence penalty, and the output
    /// distance within `epsilon`.
    pub fn is_valid(&self, epsilon: f64) -> bool {
        self.h2 == 0.0 && self.h3 == 0.0 && self.h1 >= -(epsilon * epsilon)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CfResult {
    pub original: FeatureVector,
    pub counterfactual: FeatureVector,
    pub score: CandidateScore,
    pub valid: bool,
    /// Model evaluations consumed.
    pub iterations_used: usize,
    pub changed_features: Vec<String>,
}

fn value_changed(a: &FeatureValue, b: &FeatureValue) -> bool {
    match (a, b) {
        (FeatureValue::Numeric(x), FeatureValue::Numeric(y)) => (x - y).abs() > CHANGE_TOLERANCE,
        (FeatureValue::Categorical(x), FeatureValue::Categorical(y)) => x != y,
        _ => true,
    }
}

fn changed_indices(x: &FeatureVector, candidate: &FeatureVector) -> Vec<usize> {
    (0..x.len())
        .filter(|&i| value_changed(x.value(i), candidate.value(i)))
        .collect()
}

fn score_outputs(
    outputs: &OutputVector,
    x: &FeatureVector,
    candidate: &FeatureVector,
    domain: &FeatureDomain,
    goal: &CfGoal,
    mad: Option<&[f64]>,
    w_dist: f64,
    w_sparse: f64,
) -> Result<CandidateScore> {
    domain.check(candidate)?;
    if outputs.len() != goal.desired.len() {
        return Err(Error::SchemaMismatch(format!(
            "model emits {} outputs, goal declares {}",
            outputs.len(),
            goal.desired.len()
        )));
    }

    let h1 = -outputs
        .outputs()
        .iter()
        .zip(goal.desired.outputs())
        .map(|(got, want)| (got.value - want.value) * (got.value - want.value))
        .sum::<f64>();

    let changed = changed_indices(x, candidate);
    let h2 = -(changed
        .iter()
        .filter(|&&i| !domain.spec(i).mutable)
        .count() as f64);

    let mut h3 = 0.0;
    for (i, out) in outputs.outputs().iter().enumerate() {
        let threshold = goal.thresholds[i];
        if threshold >= 1.0 {
            continue; // bypass
        }
        if let Some(conf) = out.confidence {
            if conf < threshold {
                h3 -= 1.0;
            }
        }
    }

    let mut s1 = 0.0;
    for i in 0..x.len() {
        match (x.value(i), candidate.value(i)) {
            (FeatureValue::Numeric(a), FeatureValue::Numeric(b)) => {
                let mut d = (a - b).abs();
                if let Some(scale) = mad {
                    d /= scale[i];
                }
                s1 += d;
            }
            (FeatureValue::Categorical(a), FeatureValue::Categorical(b)) => {
                if a != b {
                    s1 += 1.0;
                }
            }
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "candidate feature '{}' changed kind",
                    x.name(i)
                )))
            }
        }
    }

    let s2 = -(changed.len() as f64);

    Ok(CandidateScore {
        hard: h1 + h2 + h3,
        soft: -w_dist * s1 + w_sparse * s2,
        h1,
        h2,
        h3,
        s1,
        s2,
    })
}

/// Scores a candidate against the goal (one model evaluation). Supply the
/// per-feature MAD to scale the distance component when training data is
/// available.
pub fn score(
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    candidate: &FeatureVector,
    domain: &FeatureDomain,
    goal: &CfGoal,
    mad: Option<&[f64]>,
) -> Result<CandidateScore> {
    goal.validate()?;
    let outputs = predict_checked(model, std::slice::from_ref(candidate))?;
    score_outputs(&outputs[0], x, candidate, domain, goal, mad, 1.0, 1.0)
}

fn random_mutation<R: Rng>(
    x: &FeatureVector,
    domain: &FeatureDomain,
    mutables: &[usize],
    rng: &mut R,
) -> FeatureVector {
    let k = rng.random_range(1..=mutables.len());
    let picks = rand::seq::index::sample(rng, mutables.len(), k);
    let mut candidate = x.clone();
    for slot in picks.iter() {
        let i = mutables[slot];
        match &domain.spec(i).kind {
            DomainKind::Numeric { lower, upper } => {
                candidate =
                    candidate.with_value(i, FeatureValue::Numeric(rng.random_range(*lower..*upper)));
            }
            DomainKind::Categorical { values } => {
                let current = match x.value(i) {
                    FeatureValue::Categorical(c) => c.clone(),
                    _ => String::new(),
                };
                let others: Vec<&String> = values.iter().filter(|v| **v != current).collect();
                if !others.is_empty() {
                    let pick = others[rng.random_range(0..others.len())].clone();
                    candidate = candidate.with_value(i, FeatureValue::Categorical(pick));
                }
            }
        }
    }
    candidate
}

struct Evaluator<'a> {
    model: &'a dyn BlackBoxModel,
    x: &'a FeatureVector,
    domain: &'a FeatureDomain,
    goal: &'a CfGoal,
    mad: Option<&'a [f64]>,
    w_dist: f64,
    w_sparse: f64,
    evaluations: usize,
}

impl Evaluator<'_> {
    fn score_batch(&mut self, candidates: &[FeatureVector]) -> Result<Vec<CandidateScore>> {
        let outputs = predict_checked(self.model, candidates)?;
        self.evaluations += candidates.len();
        outputs
            .iter()
            .zip(candidates)
            .map(|(out, cand)| {
                score_outputs(
                    out,
                    self.x,
                    cand,
                    self.domain,
                    self.goal,
                    self.mad,
                    self.w_dist,
                    self.w_sparse,
                )
            })
            .collect()
    }
}

/// Argmax with the construction tie rules: score first, then fewest changed
/// features, then lexicographic changed-index order.
fn pick_best(
    x: &FeatureVector,
    candidates: &[FeatureVector],
    scores: &[CandidateScore],
) -> usize {
    let mut best = 0;
    let mut best_changed = changed_indices(x, &candidates[0]);
    for i in 1..candidates.len() {
        let better = if scores[i].better_than(&scores[best]) {
            true
        } else if scores[best].better_than(&scores[i]) {
            false
        } else {
            let changed = changed_indices(x, &candidates[i]);
            let tie = match changed.len().cmp(&best_changed.len()) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => changed < best_changed,
            };
            if tie {
                best_changed = changed;
            }
            tie
        };
        if better {
            best = i;
            best_changed = changed_indices(x, &candidates[i]);
        }
    }
    best
}

/// Construction heuristic: scores the original input plus
/// `construction_candidates` random in-bound mutations and returns the
/// best-scoring candidate.
pub fn construct(
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    domain: &FeatureDomain,
    goal: &CfGoal,
    config: &SolverConfig,
    mad: Option<&[f64]>,
) -> Result<(FeatureVector, CandidateScore)> {
    goal.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut evaluator = Evaluator {
        model,
        x,
        domain,
        goal,
        mad,
        w_dist: config.soft_distance_weight,
        w_sparse: config.soft_sparsity_weight,
        evaluations: 0,
    };
    construct_phase(x, domain, config, &mut evaluator, &mut rng)
}

fn construct_phase(
    x: &FeatureVector,
    domain: &FeatureDomain,
    config: &SolverConfig,
    evaluator: &mut Evaluator<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<(FeatureVector, CandidateScore)> {
    let mutables = domain.mutable_indices();
    let mut candidates = vec![x.clone()];
    if !mutables.is_empty() {
        for _ in 0..config.construction_candidates {
            candidates.push(random_mutation(x, domain, &mutables, rng));
        }
    }
    let scores = evaluator.score_batch(&candidates)?;
    let best = pick_best(x, &candidates, &scores);
    Ok((candidates[best].clone(), scores[best]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Nudge,
    Swap,
    Revert,
}

/// A candidate move, keyed by `(feature, kind)` for tabu bookkeeping.
#[derive(Debug, Clone)]
pub struct Move {
    pub key: (usize, MoveKind),
    pub candidate: FeatureVector,
}

/// Generates up to `moves_per_step` candidates around `current`, mixing
/// numeric nudges, categorical swaps, and reverts of changed features back
/// to their original values. A revert is proposed for every changed feature
/// on every step (the sparsity-seeking move must always be on the table);
/// the remainder are random nudges and swaps. No-op moves are filtered out;
/// all candidates respect the domain bounds.
pub fn neighborhood<R: Rng>(
    current: &FeatureVector,
    x: &FeatureVector,
    domain: &FeatureDomain,
    config: &SolverConfig,
    rng: &mut R,
) -> Result<Vec<Move>> {
    let mutables = domain.mutable_indices();
    if mutables.is_empty() {
        return Err(Error::NothingToSearch);
    }
    let mut moves = Vec::with_capacity(config.moves_per_step);
    for &i in &mutables {
        if moves.len() >= config.moves_per_step {
            break;
        }
        if value_changed(current.value(i), x.value(i)) {
            moves.push(Move {
                key: (i, MoveKind::Revert),
                candidate: current.with_value(i, x.value(i).clone()),
            });
        }
    }
    let mut attempts = 0;
    while moves.len() < config.moves_per_step && attempts < config.moves_per_step * 10 {
        attempts += 1;
        let i = mutables[rng.random_range(0..mutables.len())];
        match &domain.spec(i).kind {
            DomainKind::Numeric { lower, upper } => {
                let v = match current.value(i) {
                    FeatureValue::Numeric(v) => *v,
                    _ => continue,
                };
                let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let step = dir * rng.random::<f64>() * config.numeric_step_fraction * (upper - lower);
                let moved = domain.clamp_numeric(i, v + step);
                if moved == v {
                    continue;
                }
                moves.push(Move {
                    key: (i, MoveKind::Nudge),
                    candidate: current.with_value(i, FeatureValue::Numeric(moved)),
                });
            }
            DomainKind::Categorical { values } => {
                let v = match current.value(i) {
                    FeatureValue::Categorical(v) => v.clone(),
                    _ => continue,
                };
                let others: Vec<&String> = values.iter().filter(|c| **c != v).collect();
                if others.is_empty() {
                    continue;
                }
                let pick = others[rng.random_range(0..others.len())].clone();
                moves.push(Move {
                    key: (i, MoveKind::Swap),
                    candidate: current.with_value(i, FeatureValue::Categorical(pick)),
                });
            }
        }
    }
    Ok(moves)
}

/// Runs construction followed by local search until the evaluation budget
/// is exhausted or a valid candidate stops improving for `stall_window`
/// evaluations. Returns the best valid candidate found, otherwise the
/// best-scoring invalid one with `valid = false`.
pub fn search(
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    domain: &FeatureDomain,
    goal: &CfGoal,
    config: &SolverConfig,
    mad: Option<&[f64]>,
) -> Result<CfResult> {
    goal.validate()?;
    config.validate()?;
    domain.check(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut evaluator = Evaluator {
        model,
        x,
        domain,
        goal,
        mad,
        w_dist: config.soft_distance_weight,
        w_sparse: config.soft_sparsity_weight,
        evaluations: 0,
    };

    let (constructed, constructed_score) =
        construct_phase(x, domain, config, &mut evaluator, &mut rng)?;
    let mut current = constructed.clone();
    let mut current_score = constructed_score;
    let mut best = (constructed.clone(), constructed_score);
    let mut best_valid: Option<(FeatureVector, CandidateScore)> =
        if constructed_score.is_valid(goal.epsilon) {
            Some((constructed, constructed_score))
        } else {
            None
        };
    let mut last_valid_improvement = evaluator.evaluations;
    let mut last_restart = evaluator.evaluations;
    let mut episode = 0usize;

    let mut tabu_until: HashMap<(usize, MoveKind), usize> = HashMap::new();
    let mut step = 0usize;

    while evaluator.evaluations < config.max_evaluations {
        if let Some((_, s)) = &best_valid {
            // A zero soft score cannot be improved upon.
            if s.soft == 0.0 {
                break;
            }
        }
        if evaluator.evaluations - last_restart >= config.restart_interval {
            // Epochs cycle through three walk origins: the original input
            // (cheap single-change basins), the best valid candidate found
            // so far (intensification), and a fresh construction batch
            // (diversification).
            episode += 1;
            match episode % 3 {
                1 => {
                    let scores = evaluator.score_batch(std::slice::from_ref(x))?;
                    current = x.clone();
                    current_score = scores[0];
                }
                2 if best_valid.is_some() => {
                    let (cand, sc) = best_valid.clone().unwrap();
                    current = cand;
                    current_score = sc;
                }
                _ => {
                    let (cand, sc) = construct_phase(x, domain, config, &mut evaluator, &mut rng)?;
                    if sc.better_than(&best.1) {
                        best = (cand.clone(), sc);
                    }
                    if sc.is_valid(goal.epsilon) {
                        let improves = match &best_valid {
                            None => true,
                            Some((_, held)) => sc.better_valid_than(held),
                        };
                        if improves {
                            best_valid = Some((cand.clone(), sc));
                            last_valid_improvement = evaluator.evaluations;
                        }
                    }
                    current = cand;
                    current_score = sc;
                }
            }
            tabu_until.clear();
            last_restart = evaluator.evaluations;
            continue;
        }
        let moves = match neighborhood(&current, x, domain, config, &mut rng) {
            Ok(m) => m,
            Err(Error::NothingToSearch) => break,
            Err(e) => return Err(e),
        };
        if moves.is_empty() {
            break;
        }
        let budget = config.max_evaluations - evaluator.evaluations;
        let moves = &moves[..moves.len().min(budget)];
        let candidates: Vec<FeatureVector> =
            moves.iter().map(|m| m.candidate.clone()).collect();
        let best_before = best.1;
        let scores = evaluator.score_batch(&candidates)?;

        let mut valid_improved = false;
        for (mv, sc) in moves.iter().zip(&scores) {
            if sc.better_than(&best.1) {
                best = (mv.candidate.clone(), *sc);
            }
            if sc.is_valid(goal.epsilon) {
                let improves = match &best_valid {
                    None => true,
                    Some((_, held)) => sc.better_valid_than(held),
                };
                if improves {
                    best_valid = Some((mv.candidate.clone(), *sc));
                    last_valid_improvement = evaluator.evaluations;
                    valid_improved = true;
                }
            }
        }
        if valid_improved {
            // Sparsity polish: try reverting each changed feature of the
            // fresh best valid candidate while it stays feasible.
            loop {
                let (cand, _) = best_valid.clone().unwrap();
                let changed = changed_indices(x, &cand);
                if changed.len() <= 1 || evaluator.evaluations >= config.max_evaluations {
                    break;
                }
                let reverts: Vec<FeatureVector> = changed
                    .iter()
                    .map(|&i| cand.with_value(i, x.value(i).clone()))
                    .collect();
                let revert_scores = evaluator.score_batch(&reverts)?;
                let mut improved = false;
                for (candidate, sc) in reverts.iter().zip(&revert_scores) {
                    let better = sc.is_valid(goal.epsilon)
                        && sc.better_valid_than(&best_valid.as_ref().unwrap().1);
                    if better {
                        best_valid = Some((candidate.clone(), *sc));
                        last_valid_improvement = evaluator.evaluations;
                        improved = true;
                    }
                    if sc.better_than(&best.1) {
                        best = (candidate.clone(), *sc);
                    }
                }
                if !improved {
                    break;
                }
            }
        }

        let chosen = match config.strategy {
            SearchStrategy::Tabu { tenure } => {
                let allowed: Vec<usize> = (0..moves.len())
                    .filter(|&i| {
                        let active = tabu_until
                            .get(&moves[i].key)
                            .is_some_and(|&until| until > step);
                        !active || scores[i].better_than(&best_before)
                    })
                    .collect();
                let pool: Vec<usize> = if allowed.is_empty() {
                    (0..moves.len()).collect()
                } else {
                    allowed
                };
                let mut pick = pool[0];
                for &i in &pool[1..] {
                    if scores[i].better_than(&scores[pick]) {
                        pick = i;
                    }
                }
                tabu_until.insert(moves[pick].key, step + tenure);
                Some(pick)
            }
            SearchStrategy::HillClimbing => {
                let mut pick = 0;
                for i in 1..moves.len() {
                    if scores[i].better_than(&scores[pick]) {
                        pick = i;
                    }
                }
                if scores[pick].better_than(&current_score) {
                    Some(pick)
                } else {
                    None
                }
            }
        };
        if let Some(pick) = chosen {
            current = moves[pick].candidate.clone();
            current_score = scores[pick];
        }

        if best_valid.is_some()
            && evaluator.evaluations - last_valid_improvement >= config.stall_window
        {
            break;
        }
        step += 1;
    }

    let (counterfactual, score, valid) = match best_valid {
        Some((c, s)) => (c, s, true),
        None => (best.0, best.1, false),
    };
    let changed_features = changed_indices(x, &counterfactual)
        .into_iter()
        .map(|i| x.name(i).to_string())
        .collect();
    Ok(CfResult {
        original: x.clone(),
        counterfactual,
        score,
        valid,
        iterations_used: evaluator.evaluations,
        changed_features,
    })
}
