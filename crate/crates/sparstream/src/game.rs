//! Exact simulator for the adversarial doubling game on an isotropic row
//! family.
//!
//! All weights start at one. The adversary repeatedly picks a live row
//! whose doubled contribution would still be small (`2 w a^T a <= 1/c`),
//! and a fair coin either doubles the weight or deletes the row. The
//! adversary wins if the weighted Gram ever leaves the `(1 +- eps)` band
//! around the identity; it loses when no legal move remains.
//!
//! Alongside the engine, [`MonitorReadings`] tracks the quantities the
//! concentration analysis of the game cares about: the total-variation
//! matrix built from running maximum weights, the predictable quadratic
//! variation of the move martingale, and the martingale deviation itself.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    spectral_check, spectral_norm_symmetric, GramAccumulator, LinalgError, RowVector,
};

/// Isotropy tolerance for game inputs (Frobenius distance from identity).
pub const ISOTROPY_TOLERANCE: f64 = 1e-6;

/// Moves between full Gram recomputation audits.
const GRAM_AUDIT_INTERVAL: usize = 1024;

/// Allowed relative Frobenius drift between the incremental Gram and a
/// full recomputation.
const GRAM_DRIFT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("rows are not isotropic: Frobenius deviation from identity is {deviation:e}")]
    NotIsotropic { deviation: f64 },
    #[error("row index {index} out of range (have {len} rows)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("illegal move on row {index}: row is dead or too heavy to double")]
    IllegalMove { index: usize },
    #[error("move budget of {max_moves} exceeded; the game should have terminated")]
    MoveBudgetExceeded { max_moves: usize },
    #[error("epsilon must lie strictly inside (0, 1/2), got {epsilon}")]
    InvalidEpsilon { epsilon: f64 },
    #[error("c must be positive and finite, got {c}")]
    InvalidC { c: f64 },
    #[error("incremental Gram drifted {drift:e} from recomputation (tolerance {tolerance:e})")]
    GramDrift { drift: f64, tolerance: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Default sampling constant `100 ln(max(d,2)) / eps^2`.
pub fn default_c(dim: usize, epsilon: f64) -> f64 {
    100.0 * (dim.max(2) as f64).ln() / (epsilon * epsilon)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameConfig {
    pub epsilon: f64,
    pub c: f64,
    pub rng_seed: u64,
    /// Safety cap on total moves; 0 derives `sum(B_i + 1) + 1` at start.
    pub max_moves: usize,
    /// Capacity of the per-move monitor history ring; 0 disables it.
    pub history_capacity: usize,
}

impl GameConfig {
    pub fn new(dim: usize, epsilon: f64, rng_seed: u64) -> Result<Self, GameError> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(GameError::InvalidEpsilon { epsilon });
        }
        Ok(Self {
            epsilon,
            c: default_c(dim, epsilon),
            rng_seed,
            max_moves: 0,
            history_capacity: 0,
        })
    }

    pub fn with_c(mut self, c: f64) -> Result<Self, GameError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(GameError::InvalidC { c });
        }
        self.c = c;
        Ok(self)
    }
}

/// One row of the game: current weight, its running maximum, and the
/// doubling budget `B` (largest integer with `2^B a^T a <= 1/c`; `None`
/// marks rows too large to ever play, which sit at weight one forever).
#[derive(Debug, Clone)]
pub struct GameRow {
    row: RowVector,
    norm_sq: f64,
    weight: f64,
    max_weight: f64,
    max_doublings: Option<u32>,
}

impl GameRow {
    pub fn row(&self) -> &RowVector {
        &self.row
    }

    pub fn norm_squared(&self) -> f64 {
        self.norm_sq
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    pub fn max_doublings(&self) -> Option<u32> {
        self.max_doublings
    }

    pub fn is_ignored(&self) -> bool {
        self.max_doublings.is_none()
    }
}

fn doubling_budget(norm_sq: f64, c: f64) -> Option<u32> {
    let bound = 1.0 / c;
    if norm_sq > bound {
        return None;
    }
    // Zero rows get no budget so the termination bound stays finite.
    if norm_sq <= 0.0 {
        return Some(0);
    }
    let mut b = 0u32;
    let mut t = norm_sq;
    // Doubling an f64 only bumps the exponent, so this loop is exact.
    while 2.0 * t <= bound {
        t *= 2.0;
        b += 1;
    }
    Some(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameStatus {
    Running,
    AdversaryWon,
    AdversaryLost,
}

/// One realized coin flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveRecord {
    pub row: usize,
    pub weight_before: f64,
    pub heads: bool,
}

/// Per-move monitor snapshot kept in the optional history ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveReading {
    pub move_index: usize,
    pub row: usize,
    pub weight_before: f64,
    pub heads: bool,
    pub martingale_norm: f64,
    pub quadratic_variation_norm: f64,
}

/// Spectral norms of the tracked concentration quantities:
/// `variation_norm = ||sum w'_i^2 (a_i a_i^T)^2||` over running maxima,
/// `quadratic_variation_norm = ||W_k||` summed over realized moves, and
/// `martingale_norm` for the deviation of the Gram from its start.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReadings {
    pub variation_norm: f64,
    pub quadratic_variation_norm: f64,
    pub martingale_norm: f64,
    pub history: Vec<MoveReading>,
}

pub struct GameState {
    rows: Vec<GameRow>,
    config: GameConfig,
    gram: GramAccumulator,
    initial_gram: DMatrix<f64>,
    identity: GramAccumulator,
    move_count: usize,
    move_log: Vec<MoveRecord>,
    status: GameStatus,
    won_at_move: Option<usize>,
    rng: ChaCha8Rng,
    variation_matrix: DMatrix<f64>,
    qv_matrix: DMatrix<f64>,
    history: VecDeque<MoveReading>,
    max_moves: usize,
    moves_since_audit: usize,
}

impl GameState {
    /// Start a game on an isotropic family: all weights one, monitors at
    /// their initial values. Rows with `a^T a > 1/c` are admitted but
    /// ignored.
    pub fn new_game(rows: Vec<RowVector>, config: GameConfig) -> Result<Self, GameError> {
        if !(config.epsilon > 0.0 && config.epsilon < 0.5) {
            return Err(GameError::InvalidEpsilon {
                epsilon: config.epsilon,
            });
        }
        if !(config.c > 0.0 && config.c.is_finite()) {
            return Err(GameError::InvalidC { c: config.c });
        }
        let dim = rows.first().map(|r| r.dim()).unwrap_or(1).max(1);
        let mut gram = GramAccumulator::zeros(dim)?;
        for r in &rows {
            gram.add_outer(r, 1.0)?;
        }
        let deviation = (gram.matrix() - DMatrix::identity(dim, dim)).norm();
        if deviation > ISOTROPY_TOLERANCE {
            return Err(GameError::NotIsotropic { deviation });
        }

        let game_rows: Vec<GameRow> = rows
            .into_iter()
            .map(|row| {
                let norm_sq = row.norm_squared();
                GameRow {
                    row,
                    norm_sq,
                    weight: 1.0,
                    max_weight: 1.0,
                    max_doublings: doubling_budget(norm_sq, config.c),
                }
            })
            .collect();

        let mut variation_matrix = DMatrix::zeros(dim, dim);
        for gr in &game_rows {
            add_sym_outer(&mut variation_matrix, &gr.row, gr.norm_sq);
        }

        let total_budget: usize = game_rows
            .iter()
            .map(|r| r.max_doublings.map(|b| b as usize + 1).unwrap_or(0))
            .sum();
        let max_moves = if config.max_moves > 0 {
            config.max_moves
        } else {
            total_budget + 1
        };

        let mut identity = GramAccumulator::identity(dim)?;
        identity.factorize();

        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let initial_gram = gram.matrix().clone();
        let history_capacity = config.history_capacity;

        let mut state = Self {
            rows: game_rows,
            config,
            gram,
            initial_gram,
            identity,
            move_count: 0,
            move_log: Vec::new(),
            status: GameStatus::Running,
            won_at_move: None,
            rng,
            variation_matrix,
            qv_matrix: DMatrix::zeros(dim, dim),
            history: VecDeque::with_capacity(history_capacity.min(1 << 16)),
            max_moves,
            moves_since_audit: 0,
        };

        // The opening position can already be lost (no legal moves) and,
        // for inputs at the isotropy tolerance edge, in principle won.
        if !spectral_check(&state.gram, &state.identity, state.config.epsilon)?.passed {
            state.status = GameStatus::AdversaryWon;
            state.won_at_move = Some(0);
        } else if state.eligible_indices().is_empty() {
            state.status = GameStatus::AdversaryLost;
        }
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.gram.dim()
    }

    pub fn rows(&self) -> &[GameRow] {
        &self.rows
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn gram(&self) -> &GramAccumulator {
        &self.gram
    }

    pub fn status(&self) -> GameStatus {
        self.status
    }

    pub fn move_count(&self) -> usize {
        self.move_count
    }

    pub fn move_log(&self) -> &[MoveRecord] {
        &self.move_log
    }

    /// Move index at which the adversary first won, if it ever did.
    pub fn won_at_move(&self) -> Option<usize> {
        self.won_at_move
    }

    /// A move on row `i` is legal iff the row is alive and doubling keeps
    /// its contribution within `1/c` (boundary inclusive).
    pub fn eligible(&self, i: usize) -> Result<bool, GameError> {
        if i >= self.rows.len() {
            return Err(GameError::IndexOutOfRange {
                index: i,
                len: self.rows.len(),
            });
        }
        Ok(self.eligible_unchecked(i))
    }

    fn eligible_unchecked(&self, i: usize) -> bool {
        let r = &self.rows[i];
        r.weight != 0.0 && 2.0 * r.weight * r.norm_sq <= 1.0 / self.config.c
    }

    /// Indices of all currently legal moves, ascending.
    pub fn eligible_indices(&self) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.eligible_unchecked(i))
            .collect()
    }

    /// Flip the coin for row `i`: heads doubles the weight, tails deletes
    /// the row. The Gram and monitor matrices move by rank-1 updates and
    /// the win status latches if the spectral band is violated.
    pub fn play_move(&mut self, i: usize) -> Result<MoveRecord, GameError> {
        if !self.eligible(i)? {
            return Err(GameError::IllegalMove { index: i });
        }
        let heads = self.rng.random::<bool>();
        let weight_before = self.rows[i].weight;
        let norm_sq = self.rows[i].norm_sq;
        let row = self.rows[i].row.clone();

        // The predictable quadratic variation gains w^2 (a a^T)^2 whatever
        // the coin shows; (a a^T)^2 = (a^T a) a a^T.
        add_sym_outer(
            &mut self.qv_matrix,
            &row,
            weight_before * weight_before * norm_sq,
        );

        if heads {
            let new_weight = 2.0 * weight_before;
            self.rows[i].weight = new_weight;
            if new_weight > self.rows[i].max_weight {
                let old_max = self.rows[i].max_weight;
                add_sym_outer(
                    &mut self.variation_matrix,
                    &row,
                    (new_weight * new_weight - old_max * old_max) * norm_sq,
                );
                self.rows[i].max_weight = new_weight;
            }
            self.gram.add_outer(&row, weight_before)?;
        } else {
            self.rows[i].weight = 0.0;
            self.gram.add_outer(&row, -weight_before)?;
        }

        let record = MoveRecord {
            row: i,
            weight_before,
            heads,
        };
        self.move_log.push(record);
        self.move_count += 1;
        self.moves_since_audit += 1;
        if self.moves_since_audit >= GRAM_AUDIT_INTERVAL {
            self.audit_gram()?;
        }

        if self.config.history_capacity > 0 {
            if self.history.len() == self.config.history_capacity {
                self.history.pop_front();
            }
            self.history.push_back(MoveReading {
                move_index: self.move_count,
                row: i,
                weight_before,
                heads,
                martingale_norm: spectral_norm_symmetric(
                    &(self.gram.matrix() - &self.initial_gram),
                ),
                quadratic_variation_norm: spectral_norm_symmetric(&self.qv_matrix),
            });
        }

        // Win check after every move; the win latch is sticky.
        if self.status != GameStatus::AdversaryWon {
            let report = spectral_check(&self.gram, &self.identity, self.config.epsilon)?;
            if !report.passed {
                self.status = GameStatus::AdversaryWon;
                self.won_at_move = Some(self.move_count);
            }
        }
        if self.status == GameStatus::Running && self.eligible_indices().is_empty() {
            self.status = GameStatus::AdversaryLost;
        }
        Ok(record)
    }

    fn recompute_gram(&self) -> Result<GramAccumulator, GameError> {
        let mut g = GramAccumulator::zeros(self.dim())?;
        for r in &self.rows {
            if r.weight > 0.0 {
                g.add_outer(&r.row, r.weight)?;
            }
        }
        Ok(g)
    }

    fn audit_gram(&mut self) -> Result<(), GameError> {
        let fresh = self.recompute_gram()?;
        let scale = fresh.matrix().norm().max(1.0);
        let drift = (fresh.matrix() - self.gram.matrix()).norm() / scale;
        if drift > GRAM_DRIFT_TOLERANCE {
            return Err(GameError::GramDrift {
                drift,
                tolerance: GRAM_DRIFT_TOLERANCE,
            });
        }
        self.gram = fresh;
        self.moves_since_audit = 0;
        Ok(())
    }

    /// Drive the game with `strategy` until it finishes. With `augmented`
    /// set, play continues past a win while legal moves remain, which is
    /// the variant whose final maximum weights are strategy-independent.
    pub fn run(
        &mut self,
        strategy: &mut dyn AdversaryStrategy,
        augmented: bool,
    ) -> Result<(), GameError> {
        loop {
            match self.status {
                GameStatus::AdversaryLost => return Ok(()),
                GameStatus::AdversaryWon if !augmented => return Ok(()),
                _ => {}
            }
            let eligible = self.eligible_indices();
            if eligible.is_empty() {
                if self.status == GameStatus::Running {
                    self.status = GameStatus::AdversaryLost;
                }
                return Ok(());
            }
            if self.move_count >= self.max_moves {
                return Err(GameError::MoveBudgetExceeded {
                    max_moves: self.max_moves,
                });
            }
            let pick = strategy.pick(self, &eligible);
            if !self.eligible(pick)? {
                return Err(GameError::IllegalMove { index: pick });
            }
            self.play_move(pick)?;
        }
    }

    /// Monitor readings recomputed exactly from the current state (not the
    /// incremental matrices), for audit purposes.
    pub fn monitor_report(&self) -> MonitorReadings {
        let dim = self.dim();
        let mut variation = DMatrix::zeros(dim, dim);
        for r in &self.rows {
            add_sym_outer(&mut variation, &r.row, r.max_weight * r.max_weight * r.norm_sq);
        }
        let mut qv = DMatrix::zeros(dim, dim);
        for m in &self.move_log {
            let r = &self.rows[m.row];
            add_sym_outer(&mut qv, &r.row, m.weight_before * m.weight_before * r.norm_sq);
        }
        let gram = self
            .recompute_gram()
            .expect("row dimensions validated at construction");
        let martingale = gram.matrix() - &self.initial_gram;
        MonitorReadings {
            variation_norm: spectral_norm_symmetric(&variation),
            quadratic_variation_norm: spectral_norm_symmetric(&qv),
            martingale_norm: spectral_norm_symmetric(&martingale),
            history: self.history.iter().copied().collect(),
        }
    }

    /// Monitor norms from the incrementally maintained matrices.
    pub fn monitor_incremental(&self) -> MonitorReadings {
        MonitorReadings {
            variation_norm: spectral_norm_symmetric(&self.variation_matrix),
            quadratic_variation_norm: spectral_norm_symmetric(&self.qv_matrix),
            martingale_norm: spectral_norm_symmetric(&(self.gram.matrix() - &self.initial_gram)),
            history: self.history.iter().copied().collect(),
        }
    }
}

/// `matrix += coeff * a a^T`, one triangle mirrored.
fn add_sym_outer(matrix: &mut DMatrix<f64>, row: &RowVector, coeff: f64) {
    let a = row.as_slice();
    let d = a.len();
    for i in 0..d {
        let cai = coeff * a[i];
        for j in i..d {
            let v = matrix[(i, j)] + cai * a[j];
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
}

/// An adversary: given the observed state and the set of legal moves
/// (ascending), return the row to flip. Must be a pure function of the
/// observed state plus any internal seeded randomness.
pub trait AdversaryStrategy {
    fn name(&self) -> &'static str;
    fn pick(&mut self, state: &GameState, eligible: &[usize]) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Lowest eligible index; drives each row to completion in turn.
    Sequential,
    /// Cycles through row indices, skipping ineligible rows.
    RoundRobin,
    /// Uniformly random eligible row from a seeded generator.
    UniformRandom,
    /// Largest current contribution `w a^T a`.
    GreedyWeight,
    /// Row most aligned with the top eigenvector of `Gram - I`.
    GreedySpectral,
}

impl StrategyKind {
    pub fn all() -> [StrategyKind; 5] {
        [
            StrategyKind::Sequential,
            StrategyKind::RoundRobin,
            StrategyKind::UniformRandom,
            StrategyKind::GreedyWeight,
            StrategyKind::GreedySpectral,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Sequential => "sequential",
            StrategyKind::RoundRobin => "round_robin",
            StrategyKind::UniformRandom => "uniform_random",
            StrategyKind::GreedyWeight => "greedy_weight",
            StrategyKind::GreedySpectral => "greedy_spectral",
        }
    }

    pub fn build(&self, seed: u64) -> Box<dyn AdversaryStrategy> {
        match self {
            StrategyKind::Sequential => Box::new(Sequential),
            StrategyKind::RoundRobin => Box::new(RoundRobin { cursor: None }),
            StrategyKind::UniformRandom => Box::new(UniformRandom {
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
            StrategyKind::GreedyWeight => Box::new(GreedyWeight),
            StrategyKind::GreedySpectral => Box::new(GreedySpectral),
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let names: Vec<&str> = StrategyKind::all().iter().map(|k| k.name()).collect();
        StrategyKind::all()
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('_', "-") == s)
            .ok_or_else(|| format!("unknown strategy `{s}`; built-ins: {}", names.join(", ")))
    }
}

/// The built-in adversary strategies, in canonical order.
pub fn builtin_strategies() -> Vec<StrategyKind> {
    StrategyKind::all().to_vec()
}

struct Sequential;

impl AdversaryStrategy for Sequential {
    fn name(&self) -> &'static str {
        "sequential"
    }
    fn pick(&mut self, _state: &GameState, eligible: &[usize]) -> usize {
        eligible[0]
    }
}

struct RoundRobin {
    cursor: Option<usize>,
}

impl AdversaryStrategy for RoundRobin {
    fn name(&self) -> &'static str {
        "round_robin"
    }
    fn pick(&mut self, _state: &GameState, eligible: &[usize]) -> usize {
        let pick = match self.cursor {
            Some(last) => eligible
                .iter()
                .copied()
                .find(|&i| i > last)
                .unwrap_or(eligible[0]),
            None => eligible[0],
        };
        self.cursor = Some(pick);
        pick
    }
}

struct UniformRandom {
    rng: ChaCha8Rng,
}

impl AdversaryStrategy for UniformRandom {
    fn name(&self) -> &'static str {
        "uniform_random"
    }
    fn pick(&mut self, _state: &GameState, eligible: &[usize]) -> usize {
        eligible[self.rng.random_range(0..eligible.len())]
    }
}

struct GreedyWeight;

impl AdversaryStrategy for GreedyWeight {
    fn name(&self) -> &'static str {
        "greedy_weight"
    }
    fn pick(&mut self, state: &GameState, eligible: &[usize]) -> usize {
        let rows = state.rows();
        let mut best = eligible[0];
        let mut best_val = f64::NEG_INFINITY;
        for &i in eligible {
            let v = rows[i].weight() * rows[i].norm_squared();
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        best
    }
}

struct GreedySpectral;

impl AdversaryStrategy for GreedySpectral {
    fn name(&self) -> &'static str {
        "greedy_spectral"
    }
    fn pick(&mut self, state: &GameState, eligible: &[usize]) -> usize {
        // Maximize the move's variance along the extreme eigendirection of
        // the current deviation from identity.
        let dim = state.dim();
        let deviation = state.gram().matrix() - DMatrix::identity(dim, dim);
        let eigen = nalgebra::SymmetricEigen::new(deviation);
        let mut top = 0;
        let mut top_abs = f64::NEG_INFINITY;
        for (k, &l) in eigen.eigenvalues.iter().enumerate() {
            if l.abs() > top_abs {
                top_abs = l.abs();
                top = k;
            }
        }
        let v = eigen.eigenvectors.column(top);
        let rows = state.rows();
        let mut best = eligible[0];
        let mut best_val = f64::NEG_INFINITY;
        for &i in eligible {
            let align = rows[i].row().dot(v.as_slice());
            let val = rows[i].weight() * align * align;
            if val > best_val {
                best_val = val;
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// `2m` rows: `m` copies each of `e_0/sqrt(m)` and `e_1/sqrt(m)`,
    /// exactly isotropic in d=2 up to rounding in `1/sqrt(m)`.
    fn duplicated_basis_rows(m: usize) -> Vec<RowVector> {
        let scale = 1.0 / (m as f64).sqrt();
        let mut rows = Vec::with_capacity(2 * m);
        for _ in 0..m {
            rows.push(RowVector::basis(2, 0, scale));
        }
        for _ in 0..m {
            rows.push(RowVector::basis(2, 1, scale));
        }
        rows
    }

    /// Exact-arithmetic family: k = 1024 copies per axis at scale 1/32,
    /// with c = 512 so `2 w a^T a == 1/c` exactly at weight one and every
    /// row has doubling budget B = 1.
    fn exact_boundary_game(seed: u64) -> GameState {
        let k = 1024usize;
        let scale = 1.0 / 32.0;
        let mut rows = Vec::with_capacity(2 * k);
        for _ in 0..k {
            rows.push(RowVector::basis(2, 0, scale));
        }
        for _ in 0..k {
            rows.push(RowVector::basis(2, 1, scale));
        }
        let config = GameConfig::new(2, 0.3, seed)
            .unwrap()
            .with_c(512.0)
            .unwrap();
        GameState::new_game(rows, config).unwrap()
    }

    #[test]
    fn unit_basis_rows_are_all_ignored_and_lose_instantly() {
        let rows = vec![RowVector::basis(2, 0, 1.0), RowVector::basis(2, 1, 1.0)];
        let config = GameConfig::new(2, 0.3, 1).unwrap();
        assert!(config.c > 1.0);
        let state = GameState::new_game(rows, config).unwrap();
        assert!(state.rows().iter().all(|r| r.is_ignored()));
        assert_eq!(state.status(), GameStatus::AdversaryLost);
        assert_eq!(state.move_count(), 0);
    }

    #[test]
    fn small_duplicated_basis_rows_are_all_eligible() {
        let config = GameConfig::new(2, 0.3, 1).unwrap();
        let m = (2.0 * config.c).ceil() as usize + 1;
        let state = GameState::new_game(duplicated_basis_rows(m), config).unwrap();
        assert_eq!(state.eligible_indices().len(), 2 * m);
        assert_eq!(state.status(), GameStatus::Running);
    }

    #[test]
    fn eligibility_boundary_is_inclusive() {
        // 2 * 1 * (1/1024) == 1/512 exactly: the move is legal.
        let state = exact_boundary_game(1);
        assert!(state.eligible(0).unwrap());
        assert_eq!(state.rows()[0].max_doublings(), Some(1));
    }

    #[test]
    fn one_doubling_exhausts_the_budget() {
        // After heads at the boundary the row is two steps over budget.
        for seed in 0..32u64 {
            let mut state = exact_boundary_game(seed);
            let record = state.play_move(0).unwrap();
            if record.heads {
                assert_eq!(state.rows()[0].weight(), 2.0);
            } else {
                assert_eq!(state.rows()[0].weight(), 0.0);
            }
            assert!(!state.eligible(0).unwrap());
        }
    }

    #[test]
    fn single_eligible_row_loses_in_at_most_one_move() {
        // One small row plus two ignored rows completing the identity.
        for seed in 0..16u64 {
            let c = 512.0;
            let s = 1.0 / 32.0; // s^2 = 1/1024 = 1/(2c)
            let big = (1.0f64 - s * s).sqrt();
            let rows = vec![
                RowVector::from_slice(&[s, 0.0]).unwrap(),
                RowVector::from_slice(&[big, 0.0]).unwrap(),
                RowVector::basis(2, 1, 1.0),
            ];
            let config = GameConfig::new(2, 0.3, seed).unwrap().with_c(c).unwrap();
            let mut state = GameState::new_game(rows, config).unwrap();
            assert_eq!(state.eligible_indices(), vec![0]);
            let mut strategy = StrategyKind::Sequential.build(0);
            state.run(strategy.as_mut(), false).unwrap();
            assert_eq!(state.status(), GameStatus::AdversaryLost);
            assert!(state.move_count() <= 1);
        }
    }

    #[test]
    fn index_out_of_range_is_an_error() {
        let state = exact_boundary_game(1);
        assert!(matches!(
            state.eligible(100_000),
            Err(GameError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn illegal_move_is_rejected() {
        let rows = vec![RowVector::basis(2, 0, 1.0), RowVector::basis(2, 1, 1.0)];
        let config = GameConfig::new(2, 0.3, 1).unwrap();
        let mut state = GameState::new_game(rows, config).unwrap();
        assert!(matches!(
            state.play_move(0),
            Err(GameError::IllegalMove { index: 0 })
        ));
    }

    #[test]
    fn heads_and_tails_update_gram_by_rank_one() {
        for seed in 0..16u64 {
            let mut state = exact_boundary_game(seed);
            let before = state.gram().matrix().clone();
            let norm_sq = state.rows()[0].norm_squared();
            let r = state.play_move(0).unwrap();
            let delta = state.gram().matrix() - &before;
            if r.heads {
                assert_abs_diff_eq!(delta[(0, 0)], norm_sq, epsilon = 1e-12);
            } else {
                assert_abs_diff_eq!(delta[(0, 0)], -norm_sq, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(delta[(1, 1)], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_move_expectation_audit() {
        // Mean post-move Gram over many seeds equals the pre-move Gram
        // within three standard errors: the move is a fair martingale step.
        let trials = 10_000u64;
        let base = exact_boundary_game(0);
        let before = base.gram().matrix()[(0, 0)];
        let norm_sq = base.rows()[0].norm_squared();

        let mut sum00 = 0.0;
        for seed in 0..trials {
            let mut state = exact_boundary_game(seed);
            state.play_move(0).unwrap();
            sum00 += state.gram().matrix()[(0, 0)];
        }
        let mean00 = sum00 / trials as f64;
        // Each flip moves entry (0,0) by +-norm_sq, so sd = norm_sq.
        let se = norm_sq / (trials as f64).sqrt();
        assert!(
            (mean00 - before).abs() <= 3.0 * se,
            "mean {mean00} vs {before} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn run_game_terminates_within_budget_for_all_strategies() {
        for kind in StrategyKind::all() {
            let config = GameConfig::new(2, 0.45, 11).unwrap();
            let m = (4.0 * config.c).ceil() as usize;
            let rows = duplicated_basis_rows(m);
            let budget: usize = {
                let probe = GameState::new_game(rows.clone(), config.clone()).unwrap();
                probe
                    .rows()
                    .iter()
                    .map(|r| r.max_doublings().map(|b| b as usize + 1).unwrap_or(0))
                    .sum()
            };
            let mut state = GameState::new_game(rows, config).unwrap();
            let mut strategy = kind.build(99);
            state.run(strategy.as_mut(), false).unwrap();
            assert_ne!(state.status(), GameStatus::Running);
            assert!(
                state.move_count() <= budget,
                "{}: {} moves > budget {budget}",
                kind.name(),
                state.move_count()
            );
        }
    }

    #[test]
    fn weights_stay_powers_of_two_within_cap() {
        let config = GameConfig::new(2, 0.45, 21).unwrap();
        let c = config.c;
        let m = (8.0 * c).ceil() as usize;
        let mut state = GameState::new_game(duplicated_basis_rows(m), config).unwrap();
        let mut strategy = StrategyKind::UniformRandom.build(7);
        state.run(strategy.as_mut(), false).unwrap();
        for r in state.rows() {
            let w = r.weight();
            assert!(w == 0.0 || w.log2().fract() == 0.0, "weight {w}");
            if !r.is_ignored() {
                assert!(w * r.norm_squared() <= 1.0 / c + 1e-15);
            }
            let mw = r.max_weight();
            assert!(mw >= 1.0 && mw.log2().fract() == 0.0);
            assert!(mw >= w);
        }
    }

    #[test]
    fn fresh_game_monitors_are_zero() {
        let state = exact_boundary_game(1);
        let monitors = state.monitor_report();
        assert_eq!(monitors.quadratic_variation_norm, 0.0);
        assert_eq!(monitors.martingale_norm, 0.0);
        assert!(monitors.variation_norm > 0.0);
    }

    #[test]
    fn incremental_monitors_match_exact_recomputation() {
        let config = GameConfig::new(2, 0.45, 2).unwrap();
        let m = (4.0 * config.c).ceil() as usize;
        let mut state = GameState::new_game(duplicated_basis_rows(m), config).unwrap();
        let mut strategy = StrategyKind::RoundRobin.build(0);
        state.run(strategy.as_mut(), true).unwrap();
        let exact = state.monitor_report();
        let incr = state.monitor_incremental();
        assert_abs_diff_eq!(exact.variation_norm, incr.variation_norm, epsilon = 1e-12);
        assert_abs_diff_eq!(
            exact.quadratic_variation_norm,
            incr.quadratic_variation_norm,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(exact.martingale_norm, incr.martingale_norm, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_variation_bounded_by_twice_variation() {
        for seed in 0..24u64 {
            let config = GameConfig::new(2, 0.45, seed).unwrap();
            let m = (4.0 * config.c).ceil() as usize;
            let mut state = GameState::new_game(duplicated_basis_rows(m), config).unwrap();
            let mut strategy = StrategyKind::Sequential.build(0);
            state.run(strategy.as_mut(), true).unwrap();
            let monitors = state.monitor_report();
            assert!(
                monitors.quadratic_variation_norm <= 2.0 * monitors.variation_norm + 1e-9,
                "seed {seed}: qv {} > 2 * variation {}",
                monitors.quadratic_variation_norm,
                monitors.variation_norm
            );
        }
    }

    #[test]
    fn every_realized_move_is_bounded_by_one_over_c() {
        let config = GameConfig::new(2, 0.45, 4).unwrap();
        let c = config.c;
        let m = (4.0 * c).ceil() as usize;
        let mut state = GameState::new_game(duplicated_basis_rows(m), config).unwrap();
        let mut strategy = StrategyKind::GreedyWeight.build(0);
        state.run(strategy.as_mut(), false).unwrap();
        assert!(state.move_count() > 0);
        for mv in state.move_log() {
            let norm = mv.weight_before * state.rows()[mv.row].norm_squared();
            assert!(norm <= 1.0 / c + 1e-15, "||X_j|| = {norm} > 1/c");
        }
    }

    #[test]
    fn non_isotropic_input_is_rejected() {
        let rows = vec![RowVector::basis(2, 0, 0.5), RowVector::basis(2, 1, 0.5)];
        let config = GameConfig::new(2, 0.3, 1).unwrap();
        match GameState::new_game(rows, config) {
            Err(GameError::NotIsotropic { .. }) => {}
            other => panic!("expected isotropy rejection, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn uniform_random_strategy_is_replay_deterministic() {
        let run = |seed: u64| {
            let config = GameConfig::new(2, 0.45, 17).unwrap();
            let m = (4.0 * config.c).ceil() as usize;
            let mut state = GameState::new_game(duplicated_basis_rows(m), config).unwrap();
            let mut strategy = StrategyKind::UniformRandom.build(seed);
            state.run(strategy.as_mut(), false).unwrap();
            (
                state.move_count(),
                state.move_log().to_vec(),
                state.status(),
            )
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn strategies_only_pick_eligible_rows() {
        for kind in StrategyKind::all() {
            let config = GameConfig::new(2, 0.45, 31).unwrap();
            let m = (4.0 * config.c).ceil() as usize;
            let mut state = GameState::new_game(duplicated_basis_rows(m), config).unwrap();
            let mut strategy = kind.build(3);
            let mut queried = 0usize;
            loop {
                let eligible = state.eligible_indices();
                if eligible.is_empty() {
                    break;
                }
                let pick = strategy.pick(&state, &eligible);
                assert!(
                    state.eligible(pick).unwrap(),
                    "{} picked ineligible row",
                    kind.name()
                );
                state.play_move(pick).unwrap();
                queried += 1;
            }
            assert!(queried > 0, "{} never moved", kind.name());
        }
    }

    #[test]
    fn sequential_reach_probabilities_follow_halving_law() {
        // In the augmented game each row's maximum weight is an
        // independent doubling chain: P(w' reaches 2^k) = 2^-k for
        // k <= B. Checked by Monte Carlo at 3 sigma.
        let mut reach1 = 0usize;
        let mut reach2 = 0usize;
        let mut total = 0usize;
        let trials = 40u64;
        for seed in 0..trials {
            let config = GameConfig::new(2, 0.45, seed).unwrap();
            // norm_sq = 1/m with m in [4c, 8c): B = 2 for every row.
            let m = (5.0 * config.c).ceil() as usize;
            let mut state = GameState::new_game(duplicated_basis_rows(m), config).unwrap();
            let mut strategy = StrategyKind::Sequential.build(0);
            state.run(strategy.as_mut(), true).unwrap();
            for r in state.rows() {
                assert_eq!(r.max_doublings(), Some(2));
                total += 1;
                if r.max_weight() >= 2.0 {
                    reach1 += 1;
                }
                if r.max_weight() >= 4.0 {
                    reach2 += 1;
                }
            }
        }
        let n = total as f64;
        for (count, p) in [(reach1, 0.5), (reach2, 0.25)] {
            let freq = count as f64 / n;
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "reach frequency {freq} vs {p} (3sigma = {})",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn unknown_strategy_name_lists_builtins() {
        let err = "does_not_exist".parse::<StrategyKind>().unwrap_err();
        assert!(err.contains("sequential"));
        assert!(err.contains("greedy_spectral"));
    }
}
