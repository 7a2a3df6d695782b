//! Desk-scale experiment drivers: invariance checks, mixing stability across
//! sequence lengths, and measured contraction against the rate envelope.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use rayon::ThreadPool;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::blocking::{Block, BlockCover};
use crate::error::{Error, Result};
use crate::exact::{config_from_index, sample_block_conditional, smoothing_distribution, sweep_operator, ExactKernel};
use crate::hmm::{FiniteStateModel, MixingProfile, ObservationRecord, StateSpaceModel};
use crate::rates::{alpha, envelope, ideal_cover_matrices, sweep_matrix, verify_a1};
use crate::scalar::Real;
use crate::sweeps::{
    block_rng, prior_init, replication_seed, run_chain, sweep, Autocorrelation, BlockSampler, ChainState, ChainValue,
    RunOptions, Schedule, INIT_STREAM,
};

/// Result of the exact fixed-point check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactInvariance {
    pub states: usize,
    pub residual: f64,
    pub row_sum_defect: f64,
}

pub fn exact_invariance<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    schedule: Schedule,
    kernel: ExactKernel,
    cap: usize,
) -> Result<ExactInvariance> {
    let op = sweep_operator(model, obs, cover, schedule, kernel, cap)?;
    Ok(ExactInvariance {
        states: op.size(),
        residual: op.invariance_residual().as_f64(),
        row_sum_defect: op.row_sum_defect().as_f64(),
    })
}

/// Pearson chi-square test of one site marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteChiSquare {
    pub site: usize,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Bonferroni-adjusted p-value, `min(1, T p)`.
    pub adjusted: f64,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatisticalInvariance {
    pub chains: usize,
    pub sites: Vec<SiteChiSquare>,
}

impl StatisticalInvariance {
    pub fn min_adjusted(&self) -> f64 {
        self.sites.iter().map(|s| s.adjusted).fold(1.0, f64::min)
    }

    pub fn passes(&self, level: f64) -> bool {
        self.sites.iter().all(|s| s.adjusted > level)
    }

    /// `site,statistic,dof,p_value,adjusted_p`. Sites are 1-based.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["site", "statistic", "dof", "p_value", "adjusted_p"])?;
        for s in &self.sites {
            wtr.write_record(&[
                (s.site + 1).to_string(),
                format!("{:.6}", s.statistic),
                s.dof.to_string(),
                format!("{:.6e}", s.p_value),
                format!("{:.6e}", s.adjusted),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Exact single-site marginals of the joint smoothing distribution.
pub fn exact_marginals<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cap: usize,
) -> Result<Vec<Vec<f64>>> {
    let k = model.num_states();
    let len = obs.len();
    let phi = smoothing_distribution(model, obs, cap)?;
    let mut out = vec![vec![0.0; k]; len];
    for (idx, p) in phi.iter().enumerate() {
        for (site, s) in config_from_index(idx, k, len).into_iter().enumerate() {
            out[site][s] += p.as_f64();
        }
    }
    Ok(out)
}

/// Pearson statistic and upper-tail p-value of `observed` against probabilities `probs`.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    let mut impossible = false;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * n as f64;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else if o > 0 {
            impossible = true;
        }
    }
    if impossible {
        return (f64::INFINITY, cells.saturating_sub(1), 0.0);
    }
    let dof = cells.saturating_sub(1);
    if dof == 0 {
        return (stat, 0, 1.0);
    }
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    (stat, dof, 1.0 - dist.cdf(stat))
}

/// Starts `chains` chains from exact draws of the joint smoothing distribution,
/// runs one sweep each, and tests every site marginal against the exact one.
#[allow(clippy::too_many_arguments)]
pub fn statistical_invariance<M, K>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    schedule: Schedule,
    sampler: &K,
    chains: usize,
    seed: u64,
    cap: usize,
    pool: Option<&ThreadPool>,
) -> Result<StatisticalInvariance>
where
    M: FiniteStateModel,
    K: BlockSampler<M>,
{
    let k = model.num_states();
    let len = obs.len();
    let marginals = exact_marginals(model, obs, cap)?;
    let whole = Block::new(0, len - 1);
    let run = |c: usize| -> Result<Vec<usize>> {
        let s = replication_seed(seed, c as u64);
        let mut rng = block_rng(s, 0, INIT_STREAM);
        let x = sample_block_conditional(model, obs, &vec![0usize; len], whole, &mut rng)?;
        let mut chain = ChainState::new(x.into(), s);
        sweep(&mut chain, model, obs, cover, schedule, sampler, None)?;
        Ok(chain.x.0)
    };
    let finals: Vec<Vec<usize>> = match pool {
        Some(p) => p.install(|| (0..chains).into_par_iter().map(run).collect::<Result<_>>())?,
        None => (0..chains).map(run).collect::<Result<_>>()?,
    };
    let mut counts = vec![vec![0u64; k]; len];
    for x in &finals {
        for (site, &s) in x.iter().enumerate() {
            counts[site][s] += 1;
        }
    }
    let sites = counts
        .into_iter()
        .zip(marginals)
        .enumerate()
        .map(|(site, (observed, probs))| {
            let (statistic, dof, p_value) = chi_square(&observed, &probs);
            SiteChiSquare {
                site,
                statistic,
                dof,
                p_value,
                adjusted: (p_value * len as f64).min(1.0),
                expected: probs.iter().map(|p| p * chains as f64).collect(),
                observed,
            }
        })
        .collect();
    Ok(StatisticalInvariance { chains, sites })
}

/// Settings of the stability experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    pub lengths: Vec<usize>,
    pub block_len: usize,
    pub overlap: usize,
    pub particles: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub replications: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

/// Pooled mixing statistics of one sampler at one sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub len: usize,
    pub kernel: &'static str,
    pub cover: String,
    pub particles: usize,
    pub median_acf1: f64,
    pub median_acf5: f64,
    pub mean_update_rate: f64,
    pub boundary_acf1: f64,
    pub interior_acf1: f64,
    pub boundary_update_rate: f64,
    pub interior_update_rate: f64,
    pub seconds: f64,
}

impl StabilityRow {
    pub const CSV_HEADER: [&'static str; 11] = [
        "T",
        "kernel",
        "cover",
        "N",
        "median_acf1",
        "median_acf5",
        "mean_update_rate",
        "boundary_acf1",
        "interior_acf1",
        "boundary_update_rate",
        "interior_update_rate",
    ];

    fn record(&self) -> Vec<String> {
        vec![
            self.len.to_string(),
            self.kernel.to_string(),
            self.cover.clone(),
            self.particles.to_string(),
            format!("{:.6}", self.median_acf1),
            format!("{:.6}", self.median_acf5),
            format!("{:.6}", self.mean_update_rate),
            format!("{:.6}", self.boundary_acf1),
            format!("{:.6}", self.interior_acf1),
            format!("{:.6}", self.boundary_update_rate),
            format!("{:.6}", self.interior_update_rate),
        ]
    }
}

/// Writes the stability table. Wall-clock times are excluded so that reruns are byte-identical.
pub fn write_stability_csv<W: Write>(w: W, rows: &[StabilityRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(StabilityRow::CSV_HEADER)?;
    for r in rows {
        wtr.write_record(r.record())?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs `replications` independent chains and pools their statistics.
#[allow(clippy::too_many_arguments)]
fn pooled_run<M, K>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    schedule: Schedule,
    sampler: &K,
    kernel: &'static str,
    particles: usize,
    cfg: &StabilityConfig,
    pool: Option<&ThreadPool>,
) -> Result<StabilityRow>
where
    M: StateSpaceModel,
    M::State: ChainValue,
    K: BlockSampler<M>,
{
    let len = obs.len();
    let start = Instant::now();
    let options = RunOptions {
        burn_in: cfg.burn_in,
        ..RunOptions::default()
    };
    let run = |r: usize| {
        let s = replication_seed(cfg.seed ^ (len as u64).rotate_left(32), r as u64);
        let init = prior_init(model, len, s);
        run_chain(model, obs, cover, schedule, sampler, init, cfg.sweeps, s, &options, None)
    };
    let traces: Vec<_> = match pool {
        Some(p) => p.install(|| (0..cfg.replications).into_par_iter().map(run).collect::<Result<Vec<_>>>())?,
        None => (0..cfg.replications).map(run).collect::<Result<Vec<_>>>()?,
    };
    let mut acf = Autocorrelation::new(len, &options.lags);
    let mut updates = vec![0u64; len];
    let mut counted = 0usize;
    for t in &traces {
        acf.merge(&t.autocorrelation);
        for (u, c) in updates.iter_mut().zip(&t.update_counts) {
            *u += c;
        }
        counted += t.counted;
    }
    let acf1: Vec<f64> = (0..len).map(|i| acf.acf_at_lag(1, i).unwrap_or(f64::NAN)).collect();
    let acf5: Vec<f64> = (0..len).map(|i| acf.acf_at_lag(5, i).unwrap_or(f64::NAN)).collect();
    let rate: Vec<f64> = updates.iter().map(|&u| u as f64 / counted.max(1) as f64).collect();
    let boundaries = cover.all_boundaries();
    let pick = |v: &[f64], on_boundary: bool| -> Vec<f64> {
        (0..len)
            .filter(|i| boundaries.contains(i) == on_boundary)
            .map(|i| v[i])
            .collect()
    };
    Ok(StabilityRow {
        len,
        kernel,
        cover: cover.to_string(),
        particles,
        median_acf1: median(&acf1),
        median_acf5: median(&acf5),
        mean_update_rate: mean(&rate),
        boundary_acf1: median(&pick(&acf1, true)),
        interior_acf1: median(&pick(&acf1, false)),
        boundary_update_rate: mean(&pick(&rate, true)),
        interior_update_rate: mean(&pick(&rate, false)),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Blocked sampler with a common cover against a single-block sampler, on prefixes
/// of `obs` of every length in the grid. Rows come in grid order, blocked first.
pub fn stability<M, K, F>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cfg: &StabilityConfig,
    make_sampler: F,
    pool: Option<&ThreadPool>,
) -> Result<Vec<StabilityRow>>
where
    M: StateSpaceModel,
    M::State: ChainValue,
    M::Obs: Clone,
    K: BlockSampler<M>,
    F: Fn(usize) -> K,
{
    let sampler = make_sampler(cfg.particles);
    let mut rows = Vec::with_capacity(2 * cfg.lengths.len());
    for &len in &cfg.lengths {
        let prefix = obs.prefix(len)?;
        let blocked = BlockCover::common(len, cfg.block_len, cfg.overlap)?;
        rows.push(pooled_run(
            model,
            &prefix,
            &blocked,
            cfg.schedule,
            &sampler,
            "blocked",
            cfg.particles,
            cfg,
            pool,
        )?);
        let single = BlockCover::from_blocks(len, vec![Block::new(0, len - 1)])?;
        rows.push(pooled_run(
            model,
            &prefix,
            &single,
            Schedule::LeftToRight,
            &sampler,
            "single",
            cfg.particles,
            cfg,
            pool,
        )?);
    }
    Ok(rows)
}

/// One row of a contraction curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionPoint {
    pub k: usize,
    pub tv: f64,
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub schedule: Schedule,
    pub alpha: f64,
    pub lambda: f64,
    pub a1_holds: bool,
    /// `‖𝒲‖_∞` of the composed ideal sweep matrix.
    pub sweep_norm: f64,
    pub points: Vec<ContractionPoint>,
    /// Geometric per-sweep decay of the measured TV over the second half of the curve.
    pub decay: f64,
}

impl ContractionReport {
    pub fn dominated(&self) -> bool {
        self.points.iter().all(|p| p.tv <= p.envelope + 1e-12)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_contraction_csv(w, std::slice::from_ref(self))
    }
}

/// `schedule,k,tv,envelope,lambda,sweep_norm`.
pub fn write_contraction_csv<W: Write>(w: W, reports: &[ContractionReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["schedule", "k", "tv", "envelope", "lambda", "sweep_norm"])?;
    for r in reports {
        for p in &r.points {
            wtr.write_record(&[
                r.schedule.name().to_string(),
                p.k.to_string(),
                format!("{:.9e}", p.tv),
                format!("{:.9e}", p.envelope),
                format!("{:.9}", r.lambda),
                format!("{:.9}", r.sweep_norm),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Worst-case total variation to the target over all point-mass starts, for `k = 0..=max_k`.
pub fn worst_case_tv<S: Real>(matrix: &Array2<S>, target: &[S], max_k: usize) -> Vec<f64> {
    let n = target.len();
    let mut power = Array2::<S>::eye(n);
    let mut out = Vec::with_capacity(max_k + 1);
    for k in 0..=max_k {
        if k > 0 {
            power = power.dot(matrix);
        }
        let worst = power
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(target)
                    .map(|(a, b)| (*a - *b).abs().as_f64())
                    .sum::<f64>()
                    * 0.5
            })
            .fold(0.0, f64::max);
        out.push(worst);
    }
    out
}

/// Geometric decay rate of `tv` over its second half, ignoring values at round-off level.
pub fn decay_factor(tv: &[f64]) -> f64 {
    let usable: Vec<(usize, f64)> = tv.iter().copied().enumerate().filter(|&(_, v)| v > 1e-12).collect();
    let Some(&(hi, v_hi)) = usable.last() else {
        return 0.0;
    };
    let lo_target = hi / 2;
    let Some(&(lo, v_lo)) = usable.iter().find(|&&(k, _)| k >= lo_target && k < hi) else {
        return 0.0;
    };
    (v_hi / v_lo).powf(1.0 / (hi - lo) as f64)
}

/// Measured worst-case TV of the ideal sweep against `T λ^{k−1} ‖𝒲‖_∞`.
pub fn contraction<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    schedule: Schedule,
    profile: &MixingProfile<M::Scalar>,
    max_k: usize,
    cap: usize,
) -> Result<ContractionReport> {
    if !matches!(schedule, Schedule::LeftToRight | Schedule::Parallel) {
        return Err(Error::Config(format!(
            "contraction envelopes are computed for lr and par schedules, not {schedule}"
        )));
    }
    let op = sweep_operator(model, obs, cover, schedule, ExactKernel::Ideal, cap)?;
    let a = alpha(profile);
    let mats = ideal_cover_matrices(a, profile.h, cover);
    let a1 = verify_a1(cover, &mats)?;
    let norm = sweep_matrix(&mats, schedule)?.norm_inf();
    let tv = worst_case_tv(&op.matrix, &op.target, max_k);
    let points = tv
        .iter()
        .enumerate()
        .map(|(k, &tv)| ContractionPoint {
            k,
            tv,
            envelope: envelope(cover.len(), a1.lambda, norm, k).as_f64(),
        })
        .collect();
    Ok(ContractionReport {
        schedule,
        alpha: a.as_f64(),
        lambda: a1.lambda.as_f64(),
        a1_holds: a1.holds,
        sweep_norm: norm.as_f64(),
        decay: decay_factor(&tv),
        points,
    })
}
