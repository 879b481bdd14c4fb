//! Continuous-time Markov chain over network modes.
//!
//! Modes are 0-based internally. A [`SwitchPath`] is sampled exactly
//! (event driven) in slow time `t`; the chain runs at `σ(t/α)`, so every
//! holding rate is divided by `α`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{self, Stream};

const GENERATOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("not a generator: matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("not a generator: entry ({row}, {col}) = {value} is a negative off-diagonal rate")]
    NegativeRate { row: usize, col: usize, value: f64 },
    #[error("not a generator: row {row} sums to {sum:e}")]
    RowSum { row: usize, sum: f64 },
    #[error("not a generator: entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("no unique stationary distribution: chain is reducible")]
    Reducible,
    #[error("stationary solve failed: {0}")]
    Solve(String),
    #[error("invalid path parameters: {0}")]
    BadParameter(String),
    #[error("time {t} outside path range [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
}

/// Validated transition-rate matrix (1-based indices in error messages).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    q: DMatrix<f64>,
}

impl Generator {
    pub fn new(q: DMatrix<f64>) -> Result<Self, ChainError> {
        validate_generator(q)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn modes(&self) -> usize {
        self.q.nrows()
    }

    /// Total exit rate `-q_ss`.
    pub fn exit_rate(&self, s: usize) -> f64 {
        -self.q[(s, s)]
    }

    /// Strong connectivity of the digraph with an arc `i -> j` whenever `q_ij > 0`.
    pub fn is_irreducible(&self) -> bool {
        let s = self.modes();
        let reach = |forward: bool| {
            let mut seen = vec![false; s];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..s {
                    let rate = if forward { self.q[(i, j)] } else { self.q[(j, i)] };
                    if i != j && rate > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|v| v)
        };
        s == 1 || (reach(true) && reach(false))
    }
}

pub fn validate_generator(q: DMatrix<f64>) -> Result<Generator, ChainError> {
    if q.nrows() != q.ncols() || q.nrows() == 0 {
        return Err(ChainError::NotSquare(q.nrows(), q.ncols()));
    }
    let s = q.nrows();
    for i in 0..s {
        let mut sum = 0.0;
        let mut scale: f64 = 1.0;
        for j in 0..s {
            let v = q[(i, j)];
            if !v.is_finite() {
                return Err(ChainError::NonFinite { row: i + 1, col: j + 1 });
            }
            if i != j && v < 0.0 {
                return Err(ChainError::NegativeRate {
                    row: i + 1,
                    col: j + 1,
                    value: v,
                });
            }
            sum += v;
            scale = scale.max(v.abs());
        }
        if sum.abs() > GENERATOR_TOL * scale {
            return Err(ChainError::RowSum { row: i + 1, sum });
        }
    }
    Ok(Generator { q })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pi: Vec<f64>,
}

impl StationaryDist {
    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn min(&self) -> f64 {
        self.pi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.pi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn point_mass() -> Self {
        Self { pi: vec![1.0] }
    }

    /// Draws a mode from the distribution.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.pi.len() - 1
    }

    /// `‖Qᵀπ‖∞`.
    pub fn residual(&self, q: &Generator) -> f64 {
        (q.matrix().transpose() * DVector::from_column_slice(&self.pi)).amax()
    }
}

/// Null vector of `Qᵀ` normalised to a probability vector.
pub fn stationary(q: &Generator) -> Result<StationaryDist, ChainError> {
    if !q.is_irreducible() {
        return Err(ChainError::Reducible);
    }
    let s = q.modes();
    // Replace the last balance equation by the normalisation row.
    let mut a = q.matrix().transpose();
    a.row_mut(s - 1).fill(1.0);
    let mut b = DVector::zeros(s);
    b[s - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu
        .solve(&b)
        .ok_or_else(|| ChainError::Solve("singular balance system".into()))?;
    // one step of iterative refinement
    let r = &b - &a * &pi;
    if let Some(d) = lu.solve(&r) {
        pi += d;
    }
    let total: f64 = pi.iter().sum();
    let pi: Vec<f64> = pi.iter().map(|v| v / total).collect();
    if pi.iter().any(|&v| !(v > 0.0)) {
        return Err(ChainError::Solve(format!("non-positive stationary mass {pi:?}")));
    }
    Ok(StationaryDist { pi })
}

/// Right-continuous piecewise-constant mode trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchPath {
    /// Segment start times; `times[0] = 0`.
    times: Vec<f64>,
    modes: Vec<usize>,
    alpha: f64,
    horizon: f64,
    /// The path entered a mode with zero exit rate.
    absorbed: bool,
}

impl SwitchPath {
    /// A path that never leaves `mode` (fixed network).
    pub fn constant(mode: usize, horizon: f64) -> Self {
        Self {
            times: vec![0.0],
            modes: vec![mode],
            alpha: 1.0,
            horizon,
            absorbed: false,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    /// Jump instants, excluding the start.
    pub fn jump_times(&self) -> &[f64] {
        &self.times[1..]
    }

    pub fn num_jumps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn absorbed(&self) -> bool {
        self.absorbed
    }

    pub fn initial_mode(&self) -> usize {
        self.modes[0]
    }

    pub fn mode_at(&self, t: f64) -> Result<usize, ChainError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(ChainError::OutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(self.modes[self.segment_at(t)])
    }

    /// Index of the segment containing `t` (right continuity at jumps).
    pub fn segment_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    /// Time spent in each mode over `[0, horizon]`, as fractions.
    pub fn occupation(&self, modes: usize) -> Vec<f64> {
        let mut occ = vec![0.0; modes];
        for (k, &m) in self.modes.iter().enumerate() {
            let end = self.times.get(k + 1).copied().unwrap_or(self.horizon);
            occ[m] += end - self.times[k];
        }
        occ.iter_mut().for_each(|v| *v /= self.horizon);
        occ
    }
}

/// Exact CTMC sampling: exponential holding times with rate `-q_ss/α`,
/// embedded-chain jumps with probabilities `q_sj / (-q_ss)`.
pub fn sample_path<R: Rng>(
    q: &Generator,
    s0: usize,
    alpha: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<SwitchPath, ChainError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ChainError::BadParameter(format!("alpha must be positive, got {alpha}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ChainError::BadParameter(format!("horizon must be positive, got {horizon}")));
    }
    if s0 >= q.modes() {
        return Err(ChainError::BadParameter(format!(
            "initial mode {} outside 1..={}",
            s0 + 1,
            q.modes()
        )));
    }
    let mut times = vec![0.0];
    let mut modes = vec![s0];
    let mut t = 0.0;
    let mut s = s0;
    let mut absorbed = false;
    loop {
        let rate = q.exit_rate(s);
        if rate <= 0.0 {
            absorbed = true;
            break;
        }
        let hold = Exp::new(rate / alpha)
            .map_err(|e| ChainError::BadParameter(e.to_string()))?
            .sample(rng);
        t += hold;
        if t >= horizon {
            break;
        }
        let u: f64 = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = s;
        for j in 0..q.modes() {
            if j == s {
                continue;
            }
            acc += q.matrix()[(s, j)];
            next = j;
            if u < acc {
                break;
            }
        }
        // Rounding can leave `next` on a zero-rate column; walk back to a real target.
        while next == s || q.matrix()[(s, next)] <= 0.0 {
            next = (next + q.modes() - 1) % q.modes();
        }
        s = next;
        times.push(t);
        modes.push(s);
    }
    Ok(SwitchPath {
        times,
        modes,
        alpha,
        horizon,
        absorbed,
    })
}

/// Path for ensemble member `index` under a root seed.
pub fn sample_member_path(
    q: &Generator,
    s0: usize,
    alpha: f64,
    horizon: f64,
    root_seed: u64,
    index: u64,
) -> Result<SwitchPath, ChainError> {
    let mut rng = seeding::rng(root_seed, Stream::Chain, index);
    sample_path(q, s0, alpha, horizon, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::six_mode_generator;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> Generator {
        Generator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0])).unwrap()
    }

    #[test]
    fn generator_validation() {
        assert!(Generator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -1.0])).is_err());
        assert!(matches!(
            Generator::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0])),
            Err(ChainError::NegativeRate { row: 1, col: 2, .. })
        ));
        assert!(matches!(
            Generator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -1.0])),
            Err(ChainError::RowSum { row: 1, .. })
        ));
        let zero = Generator::new(DMatrix::zeros(2, 2)).unwrap();
        assert!(!zero.is_irreducible());
        assert_eq!(stationary(&zero), Err(ChainError::Reducible));
        assert!(Generator::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn two_state_stationary() {
        let pi = stationary(&two_state()).unwrap();
        assert_relative_eq!(pi.as_slice()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(pi.as_slice()[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_generator_is_uniform() {
        let q = DMatrix::from_row_slice(3, 3, &[-3.0, 1.0, 2.0, 1.0, -1.5, 0.5, 2.0, 0.5, -2.5]);
        let pi = stationary(&Generator::new(q).unwrap()).unwrap();
        pi.as_slice().iter().for_each(|&p| assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-14));
    }

    #[test]
    fn six_mode_stationary_residual() {
        let q = Generator::new(six_mode_generator()).unwrap();
        let pi = stationary(&q).unwrap();
        assert!(pi.residual(&q) <= 1e-12);
        assert!((pi.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        assert!(pi.min() > 0.0);
    }

    #[test]
    fn two_state_occupation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let path = sample_path(&two_state(), 0, 1.0, 1e4, &mut rng).unwrap();
        let occ = path.occupation(2);
        assert!((occ[0] - 2.0 / 3.0).abs() <= 0.01, "{occ:?}");
    }

    #[test]
    fn path_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = Generator::new(six_mode_generator()).unwrap();
        let path = sample_path(&q, 2, 0.1, 20.0, &mut rng).unwrap();
        assert_eq!(path.mode_at(0.0).unwrap(), 2);
        assert!(path.times().windows(2).all(|w| w[0] < w[1]));
        assert!(path.modes().windows(2).all(|w| w[0] != w[1]));
        for (k, &t) in path.jump_times().iter().enumerate() {
            assert_eq!(path.mode_at(t).unwrap(), path.modes()[k + 1]);
            let mid = 0.5 * (path.times()[k] + t);
            assert_eq!(path.mode_at(mid).unwrap(), path.modes()[k]);
        }
        assert!(path.mode_at(20.5).is_err());
        assert!(path.mode_at(-0.1).is_err());
    }

    #[test]
    fn binary_search_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = Generator::new(six_mode_generator()).unwrap();
        let path = sample_path(&q, 0, 0.05, 50.0, &mut rng).unwrap();
        let scan = |t: f64| {
            let mut m = path.modes()[0];
            for (k, &s) in path.times().iter().enumerate() {
                if s <= t {
                    m = path.modes()[k];
                }
            }
            m
        };
        for _ in 0..100_000 {
            let t = rng.random::<f64>() * 50.0;
            assert_eq!(path.mode_at(t).unwrap(), scan(t));
        }
    }

    #[test]
    fn large_alpha_freezes_the_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = Generator::new(six_mode_generator()).unwrap();
        let jumps: usize = (0..200)
            .map(|_| sample_path(&q, 0, 1e6, 1.0, &mut rng).unwrap().num_jumps())
            .sum();
        assert!(jumps <= 1);
    }

    #[test]
    fn absorbing_mode_is_flagged() {
        let q = Generator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let path = sample_path(&q, 1, 1.0, 10.0, &mut rng).unwrap();
        assert!(path.absorbed());
        assert_eq!(path.num_jumps(), 0);
    }

    #[test]
    fn halving_alpha_doubles_jump_rate() {
        let q = Generator::new(six_mode_generator()).unwrap();
        let mean_jumps = |alpha: f64| {
            (0..1000u64)
                .map(|k| sample_member_path(&q, 0, alpha, 5.0, 77, k).unwrap().num_jumps() as f64)
                .sum::<f64>()
                / 1000.0
        };
        let ratio = mean_jumps(0.25) / mean_jumps(0.5);
        assert!((ratio - 2.0).abs() <= 0.1, "ratio {ratio}");
    }

    #[test]
    fn parameter_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sample_path(&two_state(), 0, 0.0, 1.0, &mut rng).is_err());
        assert!(sample_path(&two_state(), 0, 1.0, -1.0, &mut rng).is_err());
        assert!(sample_path(&two_state(), 3, 1.0, 1.0, &mut rng).is_err());
    }
}
