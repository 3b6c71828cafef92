//! Synthetic decision makers with Gumbel response errors.
//!
//! Random streams are split per purpose so that growing a dataset only
//! appends records: stream 0 draws the grid, stream 1 the lottery pairs and
//! stream 2 the response errors, all from ChaCha8 keyed by the seed.

use alloc::vec::Vec;

use rand::distr::{Distribution, Open01};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};
use crate::grid::BreakpointGrid;
use crate::lottery::{Choice, ComparisonRecord, Lottery, Outcome};
use crate::num::sigmoid;
use crate::utility::Utility;

pub const GRID_STREAM: u64 = 0;
pub const QUERY_STREAM: u64 = 1;
pub const ERROR_STREAM: u64 = 2;

/// ChaCha8 generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(domain(alloc::format!("Gumbel scale must be positive, got {sigma}")))
    }
}

/// CDF of the Gumbel(0, sigma) law, `exp(-exp(-x / sigma))`.
pub fn gumbel_cdf(x: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(libm::exp(-libm::exp(-x / sigma)))
}

/// Quantile `-sigma ln(-ln delta)` of the Gumbel(0, sigma) law.
pub fn gumbel_quantile(delta: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(alloc::format!("quantile level must lie in (0, 1), got {delta}")));
    }
    Ok(-sigma * libm::log(-libm::log(delta)))
}

/// One Gumbel(0, sigma) draw by inversion.
pub fn sample_gumbel<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    -sigma * libm::log(-libm::log(u))
}

/// Probability that `w` is chosen over `y` under the logit model.
pub fn choice_probability<U: Utility + ?Sized>(u: &U, w: &Lottery, y: &Lottery, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let gap = u.expected(w)? - u.expected(y)?;
    Ok(sigmoid(gap / sigma))
}

/// Normalised exponential utility `(1 - e^{-rate y}) / (1 - e^{-rate upper})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialUtility {
    pub rate: f64,
    pub upper: f64,
}

impl ExponentialUtility {
    /// Rate `6e-5` on `[0, 100000]`, the benchmark truth.
    pub const BENCHMARK: Self = Self { rate: 6e-5, upper: 100_000.0 };

    pub fn new(rate: f64, upper: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite() && upper > 0.0 && upper.is_finite()) {
            return Err(domain("exponential utility needs positive rate and upper bound"));
        }
        Ok(Self { rate, upper })
    }

    /// Slope at 0, the Lipschitz modulus of the utility.
    pub fn slope_at_zero(&self) -> f64 {
        self.rate / -libm::expm1(-self.rate * self.upper)
    }
}

impl Utility for ExponentialUtility {
    fn upper(&self) -> f64 {
        self.upper
    }

    fn value(&self, y: f64) -> Result<f64> {
        if !(0.0..=self.upper).contains(&y) {
            return Err(domain(alloc::format!("payoff {y} outside [0, {}]", self.upper)));
        }
        Ok(libm::expm1(-self.rate * y) / libm::expm1(-self.rate * self.upper))
    }
}

/// The benchmark truth evaluated at `y`.
pub fn true_utility_benchmark(y: f64) -> Result<f64> {
    ExponentialUtility::BENCHMARK.value(y)
}

/// A decision maker answering queries with true utility `utility` and
/// Gumbel(0, `sigma_star`) errors on each alternative.
#[derive(Debug, Clone)]
pub struct SimulatedDM<U> {
    utility: U,
    sigma_star: f64,
}

impl<U: Utility> SimulatedDM<U> {
    pub fn new(utility: U, sigma_star: f64) -> Result<Self> {
        check_sigma(sigma_star)?;
        Ok(Self { utility, sigma_star })
    }

    pub fn utility(&self) -> &U {
        &self.utility
    }

    pub fn sigma_star(&self) -> f64 {
        self.sigma_star
    }

    /// Draws a response: `First` iff `E[u(W)] + e1 >= E[u(Y)] + e2`.
    pub fn sample_choice<R: Rng + ?Sized>(&self, w: &Lottery, y: &Lottery, rng: &mut R) -> Result<Choice> {
        let vw = self.utility.expected(w)?;
        let vy = self.utility.expected(y)?;
        let e1 = sample_gumbel(self.sigma_star, rng);
        let e2 = sample_gumbel(self.sigma_star, rng);
        Ok(if vw + e1 >= vy + e2 { Choice::First } else { Choice::Second })
    }

    pub fn choice_probability(&self, w: &Lottery, y: &Lottery) -> Result<f64> {
        choice_probability(&self.utility, w, y, self.sigma_star)
    }
}

/// Grids of `n` points: `0`, `upper` and `n - 2` distinct interior
/// multiples of `step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub upper: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn benchmark(n: usize) -> Self {
        Self { n, upper: 100_000.0, step: 100.0 }
    }

    fn interior_count(&self) -> usize {
        (libm::round(self.upper / self.step) as usize).saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.upper > 0.0 && self.step > 0.0 && self.step < self.upper) {
            return Err(domain("grid spec needs 0 < step < upper"));
        }
        if self.n < 2 || self.n - 2 > self.interior_count() {
            return Err(domain(alloc::format!(
                "cannot place {} interior points on multiples of {} below {}",
                self.n.saturating_sub(2),
                self.step,
                self.upper
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BreakpointGrid> {
        self.validate()?;
        let mut idx = rand::seq::index::sample(rng, self.interior_count(), self.n - 2).into_vec();
        idx.sort_unstable();
        let mut points = Vec::with_capacity(self.n);
        points.push(0.0);
        points.extend(idx.into_iter().map(|i| (i + 1) as f64 * self.step));
        points.push(self.upper);
        BreakpointGrid::new(points, self.step / 2.0)
    }
}

/// Lottery of the form "p1 chance at y1, ..., otherwise the lowest pool point".
///
/// Between one and three further distinct points of `pool` are drawn
/// uniformly; the probabilities of all points are the spacings of sorted
/// uniform cuts, so the base point keeps the first spacing.
pub fn random_lottery<R: Rng + ?Sized>(pool: &[f64], rng: &mut R) -> Result<Lottery> {
    let Some((&base, rest)) = pool.split_first() else {
        return Err(domain("cannot draw a lottery from an empty support pool"));
    };
    if rest.is_empty() {
        return Lottery::dirac(base);
    }
    let size = rng.random_range(1..=3usize.min(rest.len()));
    let idx = rand::seq::index::sample(rng, rest.len(), size);
    let mut cuts: Vec<f64> = (0..size).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut outcomes = Vec::with_capacity(size + 1);
    outcomes.push(Outcome { payoff: base, prob: cuts[0] });
    for (n, i) in idx.iter().enumerate() {
        let hi = cuts.get(n + 1).copied().unwrap_or(1.0);
        outcomes.push(Outcome { payoff: rest[i], prob: hi - cuts[n] });
    }
    Lottery::new(outcomes)
}

/// Pair of independent random lotteries on `pool`.
pub fn random_pair<R: Rng + ?Sized>(pool: &[f64], rng: &mut R) -> Result<(Lottery, Lottery)> {
    Ok((random_lottery(pool, rng)?, random_lottery(pool, rng)?))
}

/// Endless, append-only stream of simulated records.
pub struct DatasetGenerator<U> {
    dm: SimulatedDM<U>,
    pool: Vec<f64>,
    queries: ChaCha8Rng,
    errors: ChaCha8Rng,
}

impl<U: Utility> DatasetGenerator<U> {
    /// Records whose lotteries draw their payoffs from `pool`.
    pub fn new(dm: SimulatedDM<U>, mut pool: Vec<f64>, seed: u64) -> Result<Self> {
        pool.sort_by(f64::total_cmp);
        pool.dedup();
        if pool.is_empty() {
            return Err(domain("support pool is empty"));
        }
        if let Some(bad) = pool.iter().find(|y| !(0.0..=dm.utility.upper()).contains(*y)) {
            return Err(domain(alloc::format!("support point {bad} outside the utility's domain")));
        }
        Ok(Self { dm, pool, queries: stream_rng(seed, QUERY_STREAM), errors: stream_rng(seed, ERROR_STREAM) })
    }

    pub fn next_record(&mut self) -> Result<ComparisonRecord> {
        let (w, y) = random_pair(&self.pool, &mut self.queries)?;
        let z = self.dm.sample_choice(&w, &y, &mut self.errors)?;
        Ok(ComparisonRecord { w, y, z })
    }

    pub fn take(&mut self, k: usize) -> Result<Vec<ComparisonRecord>> {
        (0..k).map(|_| self.next_record()).collect()
    }

    pub fn dm(&self) -> &SimulatedDM<U> {
        &self.dm
    }
}

/// `k` records on `grid` under `seed`.
pub fn generate_dataset<U: Utility + Clone>(
    dm: &SimulatedDM<U>,
    grid: &BreakpointGrid,
    k: usize,
    seed: u64,
) -> Result<Vec<ComparisonRecord>> {
    if k == 0 {
        return Err(Error::Domain("dataset size must be at least 1".into()));
    }
    DatasetGenerator::new(dm.clone(), grid.points().to_vec(), seed)?.take(k)
}

/// Draws the grid from `spec` and then `k` records on it.
pub fn simulate<U: Utility + Clone>(
    dm: &SimulatedDM<U>,
    spec: &GridSpec,
    k: usize,
    seed: u64,
) -> Result<(BreakpointGrid, Vec<ComparisonRecord>)> {
    let grid = spec.sample(&mut stream_rng(seed, GRID_STREAM))?;
    let data = generate_dataset(dm, &grid, k, seed)?;
    Ok((grid, data))
}
