//! Sweep schedules and the blocked Gibbs chain.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::blocking::{Block, BlockCover};
use crate::error::{Error, Result};
use crate::exact::sample_block_conditional;
use crate::hmm::{simulate_prior, FiniteStateModel, ObservationRecord, StateSpaceModel, Trajectory};
use crate::pg::{pg_block_step, Proposal};

/// Order in which blocks are visited during one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Schedule {
    LeftToRight,
    /// Odd blocks (1-based) in one phase, then even blocks.
    Parallel,
    /// Forward or exactly reversed left-to-right order with probability ½ each.
    ReversibleLeftToRight,
    /// Odd-then-even or even-then-odd with probability ½ each.
    ReversibleParallel,
}

impl Schedule {
    pub fn is_reversible(self) -> bool {
        matches!(self, Schedule::ReversibleLeftToRight | Schedule::ReversibleParallel)
    }

    pub fn is_parallel(self) -> bool {
        matches!(self, Schedule::Parallel | Schedule::ReversibleParallel)
    }

    pub fn needs_separated_blocks(self) -> bool {
        self.is_parallel()
    }

    /// Phases of the forward order. Blocks inside one phase are updated from a
    /// common snapshot.
    pub fn phases(self, num_blocks: usize) -> Vec<Vec<usize>> {
        if self.is_parallel() {
            let odd: Vec<usize> = (0..num_blocks).step_by(2).collect();
            let even: Vec<usize> = (1..num_blocks).step_by(2).collect();
            [odd, even].into_iter().filter(|p| !p.is_empty()).collect()
        } else {
            (0..num_blocks).map(|k| vec![k]).collect()
        }
    }

    /// Phases of the reversed order.
    pub fn reverse_phases(self, num_blocks: usize) -> Vec<Vec<usize>> {
        let mut phases = self.phases(num_blocks);
        phases.reverse();
        for p in &mut phases {
            p.reverse();
        }
        phases
    }

    pub fn forward_order(self, num_blocks: usize) -> Vec<usize> {
        self.phases(num_blocks).concat()
    }

    pub fn reverse_order(self, num_blocks: usize) -> Vec<usize> {
        self.reverse_phases(num_blocks).concat()
    }

    pub fn name(self) -> &'static str {
        match self {
            Schedule::LeftToRight => "lr",
            Schedule::Parallel => "par",
            Schedule::ReversibleLeftToRight => "reversible-lr",
            Schedule::ReversibleParallel => "reversible-par",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "l-r" | "left-to-right" => Ok(Schedule::LeftToRight),
            "par" | "parallel" => Ok(Schedule::Parallel),
            "reversible-lr" => Ok(Schedule::ReversibleLeftToRight),
            "reversible-par" => Ok(Schedule::ReversibleParallel),
            other => Err(Error::Config(format!(
                "unknown schedule '{other}' (expected lr, par, reversible-lr or reversible-par)"
            ))),
        }
    }
}

/// Stream id reserved for the reversible coin flip.
pub const COIN_STREAM: u64 = (1 << 24) - 1;
/// Stream id reserved for drawing the initial trajectory.
pub const INIT_STREAM: u64 = (1 << 24) - 2;

/// The independent generator for `(sweep, block)` under a root seed.
pub fn block_rng(seed: u64, sweep: u64, block: u64) -> ChaCha8Rng {
    debug_assert!(block < 1 << 24);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((sweep << 24) | block);
    rng
}

/// Root seed of replication `r` derived from a common root.
pub fn replication_seed(root: u64, r: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root ^ 0x5851_f42d_4c95_7f2d);
    rng.set_stream(r);
    rng.next_u64()
}

/// A per-block Markov kernel leaving the block conditional invariant.
pub trait BlockSampler<M: StateSpaceModel>: Sync {
    fn update(
        &self,
        model: &M,
        obs: &ObservationRecord<M::Obs>,
        x: &[M::State],
        block: Block,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<M::State>>;
}

/// Exact draws from the block conditional.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdealKernel;

impl<M: FiniteStateModel> BlockSampler<M> for IdealKernel {
    fn update(
        &self,
        model: &M,
        obs: &ObservationRecord<M::Obs>,
        x: &[usize],
        block: Block,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        sample_block_conditional(model, obs, x, block, rng)
    }
}

/// The conditional SMC kernel with `particles` particles.
#[derive(Debug, Clone)]
pub struct ParticleGibbs<P> {
    pub particles: usize,
    pub proposal: P,
}

impl<M: StateSpaceModel, P: Proposal<M>> BlockSampler<M> for ParticleGibbs<P> {
    fn update(
        &self,
        model: &M,
        obs: &ObservationRecord<M::Obs>,
        x: &[M::State],
        block: Block,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<M::State>> {
        pg_block_step(model, obs, x, block, self.particles, &self.proposal, rng)
    }
}

/// The state of a blocked Gibbs chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<X> {
    pub x: Trajectory<X>,
    pub sweep_count: u64,
    pub seed: u64,
}

impl<X> ChainState<X> {
    pub fn new(x: Trajectory<X>, seed: u64) -> Self {
        ChainState { x, sweep_count: 0, seed }
    }
}

/// Draws an initial trajectory from the prior using the reserved init stream.
pub fn prior_init<M: StateSpaceModel>(model: &M, len: usize, seed: u64) -> Trajectory<M::State> {
    let mut rng = block_rng(seed, 0, INIT_STREAM);
    simulate_prior(model, len, &mut rng)
}

/// Wall-clock seconds per executed phase of one sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTiming {
    pub phase_seconds: Vec<f64>,
    pub reversed: bool,
}

fn check_inputs<X>(chain: &ChainState<X>, obs_len: usize, cover: &BlockCover, schedule: Schedule) -> Result<()> {
    if chain.x.len() != obs_len || cover.len() != obs_len {
        return Err(Error::DimensionMismatch(format!(
            "trajectory length {}, cover length {}, observations {}",
            chain.x.len(),
            cover.len(),
            obs_len
        )));
    }
    if schedule.needs_separated_blocks() {
        cover.ensure_valid()?;
    }
    Ok(())
}

fn run_phase<M, K>(
    chain: &mut ChainState<M::State>,
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    sampler: &K,
    phase: &[usize],
    pool: Option<&ThreadPool>,
) -> Result<()>
where
    M: StateSpaceModel,
    K: BlockSampler<M>,
{
    let sweep = chain.sweep_count + 1;
    let seed = chain.seed;
    if phase.len() == 1 {
        let block = cover.blocks()[phase[0]];
        let mut rng = block_rng(seed, sweep, phase[0] as u64);
        let new = sampler.update(model, obs, chain.x.as_slice(), block, &mut rng)?;
        chain.x.0[block.first..=block.last].clone_from_slice(&new);
        return Ok(());
    }
    let snapshot = chain.x.as_slice();
    let update = |&k: &usize| -> Result<Vec<M::State>> {
        let mut rng = block_rng(seed, sweep, k as u64);
        sampler.update(model, obs, snapshot, cover.blocks()[k], &mut rng)
    };
    let results: Vec<Result<Vec<M::State>>> = match pool {
        Some(pool) => pool.install(|| phase.par_iter().map(update).collect()),
        None => phase.iter().map(update).collect(),
    };
    let mut updates = Vec::with_capacity(phase.len());
    for r in results {
        updates.push(r?);
    }
    for (&k, new) in phase.iter().zip(updates) {
        let block = cover.blocks()[k];
        chain.x.0[block.first..=block.last].clone_from_slice(&new);
    }
    Ok(())
}

fn run_phases<M, K>(
    chain: &mut ChainState<M::State>,
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    sampler: &K,
    phases: &[Vec<usize>],
    pool: Option<&ThreadPool>,
) -> Result<Vec<f64>>
where
    M: StateSpaceModel,
    K: BlockSampler<M>,
{
    let mut seconds = Vec::with_capacity(phases.len());
    for phase in phases {
        let start = Instant::now();
        run_phase(chain, model, obs, cover, sampler, phase, pool)?;
        seconds.push(start.elapsed().as_secs_f64());
    }
    chain.sweep_count += 1;
    Ok(seconds)
}

/// One complete sweep. Reversible schedules flip a seeded coin and run either the
/// forward or the reversed order.
pub fn sweep<M, K>(
    chain: &mut ChainState<M::State>,
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    schedule: Schedule,
    sampler: &K,
    pool: Option<&ThreadPool>,
) -> Result<SweepTiming>
where
    M: StateSpaceModel,
    K: BlockSampler<M>,
{
    if schedule.is_reversible() {
        return reversible_sweep(chain, model, obs, cover, schedule, sampler, pool);
    }
    check_inputs(chain, obs.len(), cover, schedule)?;
    let phases = schedule.phases(cover.num_blocks());
    let phase_seconds = run_phases(chain, model, obs, cover, sampler, &phases, pool)?;
    Ok(SweepTiming {
        phase_seconds,
        reversed: false,
    })
}

/// One sweep of the symmetrized kernel `½(forward + reversed)`.
pub fn reversible_sweep<M, K>(
    chain: &mut ChainState<M::State>,
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    schedule: Schedule,
    sampler: &K,
    pool: Option<&ThreadPool>,
) -> Result<SweepTiming>
where
    M: StateSpaceModel,
    K: BlockSampler<M>,
{
    check_inputs(chain, obs.len(), cover, schedule)?;
    let m = cover.num_blocks();
    let mut coin = block_rng(chain.seed, chain.sweep_count + 1, COIN_STREAM);
    let reversed = coin.random::<f64>() >= 0.5;
    let phases = if reversed {
        schedule.reverse_phases(m)
    } else {
        schedule.phases(m)
    };
    let phase_seconds = run_phases(chain, model, obs, cover, sampler, &phases, pool)?;
    Ok(SweepTiming {
        phase_seconds,
        reversed,
    })
}

/// A state summarized by the streaming collectors.
pub trait ChainValue: Clone + PartialEq {
    fn value(&self) -> f64;
    /// Category index for histogram collection, if the state is discrete.
    fn category(&self) -> Option<usize> {
        None
    }
}

impl ChainValue for usize {
    fn value(&self) -> f64 {
        *self as f64
    }
    fn category(&self) -> Option<usize> {
        Some(*self)
    }
}

impl ChainValue for f64 {
    fn value(&self) -> f64 {
        *self
    }
}

impl ChainValue for f32 {
    fn value(&self) -> f64 {
        *self as f64
    }
}

impl ChainValue for i64 {
    fn value(&self) -> f64 {
        *self as f64
    }
}

/// Pooled per-site autocorrelation accumulators.
///
/// Sums are pooled over all merged runs, so a site that never moves within a
/// run but differs across runs reports an autocorrelation near one.
#[derive(Debug, Clone, PartialEq)]
pub struct Autocorrelation {
    lags: Vec<usize>,
    count: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    cross: Vec<Vec<f64>>,
    head: Vec<Vec<f64>>,
    tail: Vec<Vec<f64>>,
    pairs: Vec<Vec<f64>>,
    history: Vec<Vec<f64>>,
}

impl Autocorrelation {
    pub fn new(len: usize, lags: &[usize]) -> Self {
        let zeros = vec![vec![0.0; len]; lags.len()];
        Autocorrelation {
            lags: lags.to_vec(),
            count: vec![0.0; len],
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
            cross: zeros.clone(),
            head: zeros.clone(),
            tail: zeros.clone(),
            pairs: zeros,
            history: Vec::new(),
        }
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    /// Feeds one post-sweep trajectory, projected to reals.
    pub fn push(&mut self, values: Vec<f64>) {
        for (i, &v) in values.iter().enumerate() {
            self.count[i] += 1.0;
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
        let n = self.history.len();
        for (l, &lag) in self.lags.iter().enumerate() {
            if lag == 0 || lag > n {
                continue;
            }
            let past = &self.history[n - lag];
            for (i, &v) in values.iter().enumerate() {
                self.cross[l][i] += past[i] * v;
                self.head[l][i] += past[i];
                self.tail[l][i] += v;
                self.pairs[l][i] += 1.0;
            }
        }
        self.history.push(values);
        let keep = self.lags.iter().copied().max().unwrap_or(0);
        if self.history.len() > keep {
            let drop = self.history.len() - keep;
            self.history.drain(..drop);
        }
    }

    /// Ends the current run: later pushes do not pair with earlier ones.
    pub fn end_run(&mut self) {
        self.history.clear();
    }

    /// Adds the sums of another accumulator over the same sites and lags.
    pub fn merge(&mut self, other: &Autocorrelation) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.count, &other.count);
        add(&mut self.sum, &other.sum);
        add(&mut self.sum_sq, &other.sum_sq);
        for l in 0..self.lags.len() {
            add(&mut self.cross[l], &other.cross[l]);
            add(&mut self.head[l], &other.head[l]);
            add(&mut self.tail[l], &other.tail[l]);
            add(&mut self.pairs[l], &other.pairs[l]);
        }
    }

    /// Autocorrelation at the `l`-th configured lag for `site`.
    pub fn acf(&self, l: usize, site: usize) -> f64 {
        let n = self.count[site];
        let np = self.pairs[l][site];
        if n == 0.0 || np == 0.0 {
            return f64::NAN;
        }
        let mean = self.sum[site] / n;
        let var = self.sum_sq[site] / n - mean * mean;
        if var <= 1e-300 {
            return 1.0;
        }
        let cov = (self.cross[l][site] - mean * (self.head[l][site] + self.tail[l][site])) / np + mean * mean;
        cov / var
    }

    /// Autocorrelation at an arbitrary configured lag value.
    pub fn acf_at_lag(&self, lag: usize, site: usize) -> Option<f64> {
        self.lags.iter().position(|&l| l == lag).map(|l| self.acf(l, site))
    }
}

/// Options for [`run_chain`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Sweeps excluded from statistics.
    pub burn_in: usize,
    pub lags: Vec<usize>,
    pub record_trace: bool,
    /// Maximum number of stored site values when tracing.
    pub trace_cap: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            burn_in: 0,
            lags: vec![1, 5],
            record_trace: false,
            trace_cap: 50_000_000,
        }
    }
}

/// Statistics collected over a run.
#[derive(Debug, Clone)]
pub struct ChainTrace<X> {
    pub init: Trajectory<X>,
    pub last: Trajectory<X>,
    pub sweeps: usize,
    /// Post-burn-in sweeps that contributed to the statistics.
    pub counted: usize,
    pub update_counts: Vec<u64>,
    pub marginal_counts: Vec<Vec<u64>>,
    pub autocorrelation: Autocorrelation,
    /// Post-sweep trajectories for sweeps `1..=sweeps` while under the cap.
    pub trace: Vec<Trajectory<X>>,
    pub trace_truncated: bool,
    pub phase_seconds: Vec<f64>,
    pub sweep_seconds: f64,
}

impl<X: ChainValue> ChainTrace<X> {
    fn new(init: Trajectory<X>, lags: &[usize]) -> Self {
        let len = init.len();
        ChainTrace {
            last: init.clone(),
            init,
            sweeps: 0,
            counted: 0,
            update_counts: vec![0; len],
            marginal_counts: vec![Vec::new(); len],
            autocorrelation: Autocorrelation::new(len, lags),
            trace: Vec::new(),
            trace_truncated: false,
            phase_seconds: Vec::new(),
            sweep_seconds: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.init.len()
    }

    pub fn is_empty(&self) -> bool {
        self.init.len() == 0
    }

    pub fn update_rate(&self, site: usize) -> f64 {
        if self.counted == 0 {
            return f64::NAN;
        }
        self.update_counts[site] as f64 / self.counted as f64
    }

    /// Empirical marginal of a discrete site.
    pub fn marginal(&self, site: usize) -> Vec<f64> {
        let total: u64 = self.marginal_counts[site].iter().sum();
        self.marginal_counts[site]
            .iter()
            .map(|&c| c as f64 / total.max(1) as f64)
            .collect()
    }

    /// Writes `sweep,site,value` for every recorded post-sweep state. Sites are 1-based.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["sweep", "site", "value"])?;
        for (s, traj) in self.trace.iter().enumerate() {
            for (i, x) in traj.iter().enumerate() {
                wtr.write_record(&[(s + 1).to_string(), (i + 1).to_string(), x.value().to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes `site,update_rate,acf1,acf5`. Sites are 1-based.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        write_summary_csv(w, self.len(), |i| self.update_rate(i), &self.autocorrelation)
    }
}

/// Writes a per-site summary table from pooled statistics.
pub fn write_summary_csv<W: Write>(
    w: W,
    len: usize,
    update_rate: impl Fn(usize) -> f64,
    acf: &Autocorrelation,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["site", "update_rate", "acf1", "acf5"])?;
    for i in 0..len {
        let a1 = acf.acf_at_lag(1, i).unwrap_or(f64::NAN);
        let a5 = acf.acf_at_lag(5, i).unwrap_or(f64::NAN);
        wtr.write_record(&[
            (i + 1).to_string(),
            format!("{:.6}", update_rate(i)),
            format!("{a1:.6}"),
            format!("{a5:.6}"),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Runs `sweeps` sweeps from `init`, feeding each post-sweep state to the collectors.
#[allow(clippy::too_many_arguments)]
pub fn run_chain<M, K>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    schedule: Schedule,
    sampler: &K,
    init: Trajectory<M::State>,
    sweeps: usize,
    seed: u64,
    options: &RunOptions,
    pool: Option<&ThreadPool>,
) -> Result<ChainTrace<M::State>>
where
    M: StateSpaceModel,
    M::State: ChainValue,
    K: BlockSampler<M>,
{
    let mut trace = ChainTrace::new(init.clone(), &options.lags);
    let mut chain = ChainState::new(init, seed);
    check_inputs(&chain, obs.len(), cover, schedule)?;
    let mut stored = 0usize;
    for s in 1..=sweeps {
        let prev = chain.x.clone();
        let start = Instant::now();
        let timing = sweep(&mut chain, model, obs, cover, schedule, sampler, pool)?;
        trace.sweep_seconds += start.elapsed().as_secs_f64();
        if trace.phase_seconds.len() < timing.phase_seconds.len() {
            trace.phase_seconds.resize(timing.phase_seconds.len(), 0.0);
        }
        for (acc, t) in trace.phase_seconds.iter_mut().zip(&timing.phase_seconds) {
            *acc += t;
        }
        if options.record_trace && !trace.trace_truncated {
            if stored + chain.x.len() <= options.trace_cap {
                stored += chain.x.len();
                trace.trace.push(chain.x.clone());
            } else {
                trace.trace_truncated = true;
            }
        }
        if s <= options.burn_in {
            continue;
        }
        trace.counted += 1;
        for (i, (a, b)) in prev.iter().zip(chain.x.iter()).enumerate() {
            if a != b {
                trace.update_counts[i] += 1;
            }
            if let Some(c) = b.category() {
                let counts = &mut trace.marginal_counts[i];
                if counts.len() <= c {
                    counts.resize(c + 1, 0);
                }
                counts[c] += 1;
            }
        }
        trace.autocorrelation.push(chain.x.iter().map(ChainValue::value).collect());
    }
    trace.autocorrelation.end_run();
    trace.sweeps = sweeps;
    trace.last = chain.x;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{config_index, smoothing_distribution, DEFAULT_STATE_CAP};
    use crate::hmm::{Emission, Observation, TabularHmm};
    use crate::pg::Bootstrap;
    use crate::scalar::inverse_cdf;
    use proptest::prelude::*;
    use rand::Rng;

    fn model() -> TabularHmm<f64> {
        TabularHmm::new(
            vec![0.4, 0.6],
            vec![vec![0.75, 0.25], vec![0.3, 0.7]],
            Emission::Table(vec![vec![0.7, 0.3], vec![0.2, 0.8]]),
        )
        .unwrap()
    }

    fn obs(v: &[usize]) -> ObservationRecord<Observation<f64>> {
        ObservationRecord::new(v.iter().map(|&s| Observation::Symbol(s)).collect()).unwrap()
    }

    #[test]
    fn schedule_orders() {
        assert_eq!(Schedule::LeftToRight.forward_order(4), vec![0, 1, 2, 3]);
        assert_eq!(Schedule::Parallel.phases(5), vec![vec![0, 2, 4], vec![1, 3]]);
        assert_eq!(Schedule::Parallel.forward_order(4), vec![0, 2, 1, 3]);
        assert_eq!(Schedule::ReversibleParallel.reverse_order(5), vec![3, 1, 4, 2, 0]);
        assert_eq!(Schedule::ReversibleLeftToRight.reverse_order(3), vec![2, 1, 0]);
        assert_eq!(Schedule::Parallel.phases(1), vec![vec![0]]);
        for m in 1..9 {
            let mut fwd = Schedule::ReversibleParallel.forward_order(m);
            fwd.reverse();
            assert_eq!(fwd, Schedule::ReversibleParallel.reverse_order(m));
        }
        assert_eq!("PAR".parse::<Schedule>().unwrap(), Schedule::Parallel);
        assert!("zigzag".parse::<Schedule>().is_err());
    }

    #[test]
    fn single_block_reversal_is_plain_sweep() {
        let m = model();
        let y = obs(&[0, 1, 1, 0]);
        let cover = BlockCover::common(4, 4, 0).unwrap();
        let init = Trajectory(vec![0, 0, 0, 0]);
        for seed in 0..5 {
            let mut a = ChainState::new(init.clone(), seed);
            let mut b = ChainState::new(init.clone(), seed);
            sweep(&mut a, &m, &y, &cover, Schedule::LeftToRight, &IdealKernel, None).unwrap();
            sweep(&mut b, &m, &y, &cover, Schedule::ReversibleLeftToRight, &IdealKernel, None).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn par_rejects_unseparated_cover() {
        let m = model();
        let y = obs(&[0; 6]);
        let cover =
            BlockCover::from_blocks(6, vec![Block::new(0, 2), Block::new(1, 3), Block::new(3, 5)]).unwrap();
        let mut chain = ChainState::new(Trajectory(vec![0; 6]), 1);
        let err = sweep(&mut chain, &m, &y, &cover, Schedule::Parallel, &IdealKernel, None).unwrap_err();
        assert!(matches!(err, Error::CoverViolations(_)));
    }

    #[test]
    fn par_threads_and_phase_order_do_not_matter() {
        let m = model();
        let y = obs(&[0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1]);
        let cover = BlockCover::common(13, 3, 1).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let pg = ParticleGibbs {
            particles: 5,
            proposal: Bootstrap,
        };
        let init = Trajectory(vec![1; 13]);
        let mut seq = ChainState::new(init.clone(), 77);
        let mut par = ChainState::new(init.clone(), 77);
        for _ in 0..5 {
            sweep(&mut seq, &m, &y, &cover, Schedule::Parallel, &pg, None).unwrap();
            sweep(&mut par, &m, &y, &cover, Schedule::Parallel, &pg, Some(&pool)).unwrap();
        }
        assert_eq!(seq, par);

        // permuted execution within each phase
        let mut perm = ChainState::new(init, 77);
        for _ in 0..5 {
            let sweep_id = perm.sweep_count + 1;
            for phase in Schedule::Parallel.phases(cover.num_blocks()) {
                let snapshot = perm.x.clone();
                for &k in phase.iter().rev() {
                    let mut rng = block_rng(77, sweep_id, k as u64);
                    let b = cover.blocks()[k];
                    let new = BlockSampler::<TabularHmm<f64>>::update(&pg, &m, &y, snapshot.as_slice(), b, &mut rng)
                        .unwrap();
                    perm.x.0[b.first..=b.last].clone_from_slice(&new);
                }
            }
            perm.sweep_count += 1;
        }
        assert_eq!(seq.x, perm.x);
    }

    #[test]
    fn zero_sweeps_keep_init() {
        let m = model();
        let y = obs(&[0, 1, 0]);
        let cover = BlockCover::common(3, 3, 0).unwrap();
        let init = Trajectory(vec![1, 0, 1]);
        let opts = RunOptions {
            record_trace: true,
            ..RunOptions::default()
        };
        let t = run_chain(&m, &y, &cover, Schedule::LeftToRight, &IdealKernel, init.clone(), 0, 3, &opts, None).unwrap();
        assert_eq!(t.init, init);
        assert_eq!(t.last, init);
        assert!(t.trace.is_empty());
        let mut buf = Vec::new();
        t.write_trace_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sweep,site,value\n");
    }

    #[test]
    fn uniform_model_update_rate() {
        let m = TabularHmm::<f64>::uniform(3);
        let y = obs(&[0; 8]);
        let cover = BlockCover::common(8, 4, 0).unwrap();
        let sweeps = 20_000;
        let t = run_chain(
            &m,
            &y,
            &cover,
            Schedule::LeftToRight,
            &IdealKernel,
            Trajectory(vec![0; 8]),
            sweeps,
            5,
            &RunOptions::default(),
            None,
        )
        .unwrap();
        let p = 2.0 / 3.0;
        let sd = (p * (1.0 - p) / sweeps as f64).sqrt();
        for i in 0..8 {
            assert!((t.update_rate(i) - p).abs() < 4.0 * sd, "site {i}: {}", t.update_rate(i));
        }
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let m = model();
        let y = obs(&[0, 1, 1, 0, 1, 0, 0]);
        let cover = BlockCover::common(7, 3, 1).unwrap();
        let pg = ParticleGibbs {
            particles: 4,
            proposal: Bootstrap,
        };
        let opts = RunOptions {
            record_trace: true,
            ..RunOptions::default()
        };
        let run = || {
            let t = run_chain(&m, &y, &cover, Schedule::Parallel, &pg, prior_init(&m, 7, 11), 30, 11, &opts, None)
                .unwrap();
            let mut buf = Vec::new();
            t.write_trace_csv(&mut buf).unwrap();
            t.write_summary_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ideal_sweep_from_phi_keeps_phi() {
        let m = model();
        let y = obs(&[0, 1, 1, 0]);
        let cover = BlockCover::common(4, 2, 0).unwrap();
        let phi = smoothing_distribution(&m, &y, DEFAULT_STATE_CAP).unwrap();
        let chains = 40_000;
        let mut counts = vec![0usize; phi.len()];
        let mut draw_rng = ChaCha8Rng::seed_from_u64(1);
        for c in 0..chains {
            let idx = inverse_cdf(&phi, draw_rng.random::<f64>());
            let x = crate::exact::config_from_index(idx, 2, 4);
            let mut chain = ChainState::new(Trajectory(x), c as u64);
            sweep(&mut chain, &m, &y, &cover, Schedule::ReversibleParallel, &IdealKernel, None).unwrap();
            counts[config_index(chain.x.as_slice(), 2)] += 1;
        }
        for (i, &p) in phi.iter().enumerate() {
            let sd = (p * (1.0 - p) / chains as f64).sqrt();
            assert!((counts[i] as f64 / chains as f64 - p).abs() < 5.0 * sd + 1e-9);
        }
    }

    #[test]
    fn autocorrelation_of_alternating_and_constant_series() {
        let mut acf = Autocorrelation::new(2, &[1, 2]);
        for t in 0..100 {
            let v = if t % 2 == 0 { 1.0 } else { -1.0 };
            acf.push(vec![v, 3.0]);
        }
        assert!((acf.acf(0, 0) + 1.0).abs() < 1e-9);
        assert!((acf.acf(1, 0) - 1.0).abs() < 1e-9);
        assert_eq!(acf.acf(0, 1), 1.0);
    }

    #[test]
    fn pooled_runs_that_never_move_have_unit_acf() {
        let mut pooled = Autocorrelation::new(1, &[1]);
        for r in 0..10 {
            let mut run = Autocorrelation::new(1, &[1]);
            for _ in 0..50 {
                run.push(vec![(r % 2) as f64]);
            }
            pooled.merge(&run);
        }
        assert!((pooled.acf(0, 0) - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn updates_touch_only_the_block(seed in 0u64..1000, first in 0usize..6, width in 0usize..3) {
            let m = model();
            let y = obs(&[0, 1, 1, 0, 1, 0, 1, 1]);
            let last = (first + width).min(7);
            let block = Block::new(first, last);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = crate::hmm::simulate_prior(&m, 8, &mut rng);
            let pg = ParticleGibbs { particles: 3, proposal: Bootstrap };
            for k in [&pg as &dyn BlockSampler<TabularHmm<f64>>, &IdealKernel] {
                let new = k.update(&m, &y, x.as_slice(), block, &mut rng).unwrap();
                prop_assert_eq!(new.len(), block.len());
            }
            let cover = BlockCover::from_blocks(8, vec![Block::new(0, first.max(1) - 1), Block::new(first.max(1), 7)]).unwrap();
            let mut chain = ChainState::new(x.clone(), seed);
            let mut copy = chain.clone();
            run_phase(&mut chain, &m, &y, &cover, &pg, &[1], None).unwrap();
            run_phase(&mut copy, &m, &y, &cover, &pg, &[1], None).unwrap();
            prop_assert_eq!(&chain.x, &copy.x);
            prop_assert_eq!(&chain.x.as_slice()[..first.max(1)], &x.as_slice()[..first.max(1)]);
        }
    }
}
