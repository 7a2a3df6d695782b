//! Exact oracles for finite-state models: block conditionals, exact draws from
//! them, and explicit transition matrices of complete sweeps.
//!
//! Trajectories of length `T` over `K` states are enumerated in mixed-radix
//! little-endian order: index `Σ_t x_t K^t`, so `x_1` varies fastest.

use std::collections::HashMap;
use std::io::Write;

use ndarray::Array2;
use num_traits::Zero;
use rand::Rng;

use crate::blocking::{Block, BlockCover};
use crate::error::{Error, Result};
use crate::hmm::{log_joint, FiniteStateModel, ObservationRecord};
use crate::pg;
use crate::scalar::{inverse_cdf, log_sum_exp, normalize_log_weights, Real};
use crate::sweeps::Schedule;

/// Default cap on `K^T` for explicit sweep operators.
pub const DEFAULT_STATE_CAP: usize = 4096;
/// Cap on `K^{|J|}` for block-conditional tables (`|J| log2 K <= 20`).
pub const BLOCK_TABLE_CAP: usize = 1 << 20;

/// Canonical index of a configuration.
pub fn config_index(states: &[usize], k: usize) -> usize {
    states.iter().rev().fold(0, |acc, &s| acc * k + s)
}

/// Inverse of [`config_index`].
pub fn config_from_index(mut idx: usize, k: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|_| {
            let d = idx % k;
            idx /= k;
            d
        })
        .collect()
}

fn checked_pow(k: usize, e: usize, cap: usize) -> Result<usize> {
    let size = (k as f64).powi(e as i32);
    if size > cap as f64 {
        return Err(Error::TableTooLarge { size, cap });
    }
    Ok(k.pow(e as u32))
}

/// The exact law of `X_J` given the rest of the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockConditional<S> {
    pub block: Block,
    /// Probabilities over block configurations in canonical order.
    pub table: Vec<S>,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

/// Log of the unnormalized block-conditional weight of `config` placed on `block`.
fn block_log_weight<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    left: Option<usize>,
    right: Option<usize>,
    block: Block,
    config: &[usize],
) -> M::Scalar {
    let mut acc = M::Scalar::zero();
    let mut prev = left;
    for (offset, &s) in config.iter().enumerate() {
        acc += model.log_prior_step(prev.as_ref(), &s) + model.log_emission(&s, obs.get(block.first + offset));
        prev = Some(s);
    }
    if let (Some(r), Some(last)) = (right, config.last()) {
        acc += model.log_transition(last, &r);
    }
    acc
}

fn check_block(len: usize, x_len: usize, block: Block) -> Result<()> {
    if x_len != len {
        return Err(Error::DimensionMismatch(format!(
            "trajectory has length {x_len}, observations {len}"
        )));
    }
    if block.last >= len {
        return Err(Error::DimensionMismatch(format!("block {block} exceeds T={len}")));
    }
    Ok(())
}

/// Tabulates `φ_x^J`. Depends on `x` only through the boundary sites of `block`.
pub fn block_conditional<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    x: &[usize],
    block: Block,
) -> Result<BlockConditional<M::Scalar>> {
    check_block(obs.len(), x.len(), block)?;
    let k = model.num_states();
    let size = checked_pow(k, block.len(), BLOCK_TABLE_CAP)?;
    let left = block.left_boundary().map(|i| x[i]);
    let right = block.right_boundary(obs.len()).map(|i| x[i]);
    let log_w: Vec<M::Scalar> = (0..size)
        .map(|idx| {
            let cfg = config_from_index(idx, k, block.len());
            block_log_weight(model, obs, left, right, block, &cfg)
        })
        .collect();
    let table = normalize_log_weights(&log_w).ok_or(Error::AllWeightsZero { site: block.first })?;
    Ok(BlockConditional {
        block,
        table,
        left,
        right,
    })
}

/// Exact draw from `φ_x^J` by forward filtering and backward sampling inside the
/// block, with the right boundary folded into the last filter step.
pub fn sample_block_conditional<M: FiniteStateModel, R: Rng + ?Sized>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    x: &[usize],
    block: Block,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_block(obs.len(), x.len(), block)?;
    let k = model.num_states();
    let left = block.left_boundary().map(|i| x[i]);
    let right = block.right_boundary(obs.len()).map(|i| x[i]);
    let n = block.len();

    let mut filter: Vec<Vec<M::Scalar>> = Vec::with_capacity(n);
    let mut terms = vec![M::Scalar::zero(); k];
    for offset in 0..n {
        let y = obs.get(block.first + offset);
        let row: Vec<M::Scalar> = (0..k)
            .map(|s| {
                let pred = match filter.last() {
                    None => model.log_prior_step(left.as_ref(), &s),
                    Some(prevf) => {
                        for (p, t) in terms.iter_mut().enumerate() {
                            *t = prevf[p] + model.log_transition(&p, &s);
                        }
                        log_sum_exp(&terms)
                    }
                };
                let mut v = pred + model.log_emission(&s, y);
                if offset + 1 == n {
                    if let Some(r) = right {
                        v += model.log_transition(&s, &r);
                    }
                }
                v
            })
            .collect();
        filter.push(row);
    }

    let mut out = vec![0usize; n];
    let draw = |log_w: &[M::Scalar], rng: &mut R, site: usize| -> Result<usize> {
        let probs = normalize_log_weights(log_w).ok_or(Error::AllWeightsZero { site })?;
        Ok(inverse_cdf(&probs, M::Scalar::lit(rng.random::<f64>())))
    };
    out[n - 1] = draw(&filter[n - 1], rng, block.last)?;
    for offset in (0..n - 1).rev() {
        let next = out[offset + 1];
        let log_w: Vec<M::Scalar> = (0..k)
            .map(|p| filter[offset][p] + model.log_transition(&p, &next))
            .collect();
        out[offset] = draw(&log_w, rng, block.first + offset)?;
    }
    Ok(out)
}

/// The joint smoothing distribution `φ` over all `K^T` trajectories.
pub fn smoothing_distribution<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cap: usize,
) -> Result<Vec<M::Scalar>> {
    let k = model.num_states();
    let size = checked_pow(k, obs.len(), cap)?;
    let log_w: Vec<M::Scalar> = (0..size)
        .map(|idx| log_joint(model, obs, &config_from_index(idx, k, obs.len())))
        .collect();
    normalize_log_weights(&log_w).ok_or(Error::AllWeightsZero { site: 0 })
}

/// Per-block kernel realized by an explicit operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactKernel {
    /// Exact draw from the block conditional.
    Ideal,
    /// Particle Gibbs with the bootstrap proposal, enumerated exhaustively.
    ParticleGibbs { particles: usize },
}

/// The explicit `K^T × K^T` transition matrix of one complete sweep.
#[derive(Debug, Clone)]
pub struct SweepOperator<S> {
    pub matrix: Array2<S>,
    /// The joint smoothing distribution in the same enumeration order.
    pub target: Vec<S>,
    pub num_states: usize,
    pub len: usize,
}

impl<S: Real> SweepOperator<S> {
    pub fn size(&self) -> usize {
        self.target.len()
    }

    /// `dist · matrix`.
    pub fn step(&self, dist: &[S]) -> Vec<S> {
        let v = ndarray::ArrayView1::from(dist);
        v.dot(&self.matrix).to_vec()
    }

    /// `‖φ P − φ‖_1`.
    pub fn invariance_residual(&self) -> S {
        l1(&self.step(&self.target), &self.target)
    }

    /// Largest `|row sum − 1|`.
    pub fn row_sum_defect(&self) -> S {
        self.matrix
            .rows()
            .into_iter()
            .map(|r| (r.sum() - S::one()).abs())
            .fold(S::zero(), S::max)
    }

    /// Dense CSV: header `index,0,1,...`, one labeled row per trajectory index.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string()];
        header.extend((0..self.size()).map(|i| i.to_string()));
        wtr.write_record(&header)?;
        for (i, row) in self.matrix.rows().into_iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn l1<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(x, y)| (*x - *y).abs()).sum()
}

/// Total-variation distance between `init · P^k` and the target.
pub fn tv_to_target<S: Real>(op: &SweepOperator<S>, init: &[S], k: usize) -> S {
    let mut d = init.to_vec();
    for _ in 0..k {
        d = op.step(&d);
    }
    l1(&d, &op.target) * S::lit(0.5)
}

/// TV distances for `k = 0..=max_k`.
pub fn tv_curve<S: Real>(op: &SweepOperator<S>, init: &[S], max_k: usize) -> Vec<S> {
    let mut d = init.to_vec();
    let mut out = Vec::with_capacity(max_k + 1);
    out.push(l1(&d, &op.target) * S::lit(0.5));
    for _ in 0..max_k {
        d = op.step(&d);
        out.push(l1(&d, &op.target) * S::lit(0.5));
    }
    out
}

/// Right-multiplies `m` in place by the block-update kernel `P^J`.
fn apply_block_kernel<M: FiniteStateModel>(
    m: &mut Array2<M::Scalar>,
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    block: Block,
    kernel: ExactKernel,
) -> Result<()> {
    let k = model.num_states();
    let len = obs.len();
    let size = m.ncols();
    let block_size = k.pow(block.len() as u32);
    let stride = k.pow(block.first as u32);
    let ext = block.extended(len);

    // the block law depends only on x restricted to J ∪ ∂J
    let mut cache: HashMap<Vec<usize>, Vec<M::Scalar>> = HashMap::new();
    let mut laws: Vec<usize> = Vec::with_capacity(size);
    let mut keyed: Vec<Vec<M::Scalar>> = Vec::new();
    let mut index_of: HashMap<Vec<usize>, usize> = HashMap::new();
    for a in 0..size {
        let x = config_from_index(a, k, len);
        let key: Vec<usize> = match kernel {
            ExactKernel::Ideal => [block.left_boundary(), block.right_boundary(len)]
                .into_iter()
                .flatten()
                .map(|i| x[i])
                .collect(),
            ExactKernel::ParticleGibbs { .. } => x[ext.first..=ext.last].to_vec(),
        };
        if let Some(&slot) = index_of.get(&key) {
            laws.push(slot);
            continue;
        }
        let law = match kernel {
            ExactKernel::Ideal => block_conditional(model, obs, &x, block)?.table,
            ExactKernel::ParticleGibbs { particles } => pg::exact_kernel_law(model, obs, &x, block, particles)?,
        };
        cache.insert(key.clone(), law.clone());
        index_of.insert(key, keyed.len());
        laws.push(keyed.len());
        keyed.push(law);
    }

    let mut out = Array2::<M::Scalar>::zeros(m.raw_dim());
    for (mut out_row, in_row) in out.rows_mut().into_iter().zip(m.rows()) {
        for (a, &mass) in in_row.iter().enumerate() {
            if mass == M::Scalar::zero() {
                continue;
            }
            let base = a - ((a / stride) % block_size) * stride;
            for (c, &p) in keyed[laws[a]].iter().enumerate() {
                if p != M::Scalar::zero() {
                    out_row[base + c * stride] += mass * p;
                }
            }
        }
    }
    *m = out;
    Ok(())
}

/// Explicit operator for updating the given blocks in sequence.
pub fn ordered_operator<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    blocks: &[Block],
    kernel: ExactKernel,
    cap: usize,
) -> Result<SweepOperator<M::Scalar>> {
    let k = model.num_states();
    let size = checked_pow(k, obs.len(), cap)?;
    let mut matrix = Array2::<M::Scalar>::eye(size);
    for &b in blocks {
        apply_block_kernel(&mut matrix, model, obs, b, kernel)?;
    }
    Ok(SweepOperator {
        matrix,
        target: smoothing_distribution(model, obs, cap)?,
        num_states: k,
        len: obs.len(),
    })
}

/// Explicit operator of one complete sweep under `schedule`.
///
/// A reversible schedule yields `½(forward + reversed)`.
pub fn sweep_operator<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    cover: &BlockCover,
    schedule: Schedule,
    kernel: ExactKernel,
    cap: usize,
) -> Result<SweepOperator<M::Scalar>> {
    if cover.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "cover spans {} sites, observations {}",
            cover.len(),
            obs.len()
        )));
    }
    if schedule.needs_separated_blocks() {
        cover.ensure_valid()?;
    }
    let visit = |order: Vec<usize>| -> Vec<Block> { order.into_iter().map(|i| cover.blocks()[i]).collect() };
    let forward = ordered_operator(model, obs, &visit(schedule.forward_order(cover.num_blocks())), kernel, cap)?;
    if !schedule.is_reversible() {
        return Ok(forward);
    }
    let reverse = ordered_operator(model, obs, &visit(schedule.reverse_order(cover.num_blocks())), kernel, cap)?;
    let half = M::Scalar::lit(0.5);
    Ok(SweepOperator {
        matrix: (&forward.matrix + &reverse.matrix) * half,
        ..forward
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{Emission, Observation, TabularHmm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> TabularHmm<f64> {
        TabularHmm::new(
            vec![0.3, 0.7],
            vec![vec![0.8, 0.2], vec![0.35, 0.65]],
            Emission::Table(vec![vec![0.6, 0.3, 0.1], vec![0.15, 0.25, 0.6]]),
        )
        .unwrap()
    }

    fn obs(v: &[usize]) -> ObservationRecord<Observation<f64>> {
        ObservationRecord::new(v.iter().map(|&s| Observation::Symbol(s)).collect()).unwrap()
    }

    #[test]
    fn config_index_is_little_endian() {
        assert_eq!(config_index(&[1, 0, 0], 2), 1);
        assert_eq!(config_index(&[0, 0, 1], 2), 4);
        assert_eq!(config_from_index(5, 3, 3), vec![2, 1, 0]);
        for i in 0..27 {
            assert_eq!(config_index(&config_from_index(i, 3, 3), 3), i);
        }
    }

    #[test]
    fn uniform_model_has_uniform_conditionals() {
        let m = TabularHmm::<f64>::uniform(3);
        let y = obs(&[0; 5]);
        let bc = block_conditional(&m, &y, &[2, 1, 0, 1, 2], Block::new(1, 3)).unwrap();
        assert!(bc.table.iter().all(|p| (p - 1.0 / 27.0).abs() < 1e-14));
    }

    #[test]
    fn middle_site_conditional_matches_joint_enumeration() {
        let m = model();
        let y = obs(&[2, 0, 1]);
        let phi = smoothing_distribution(&m, &y, DEFAULT_STATE_CAP).unwrap();
        for x1 in 0..2 {
            for x3 in 0..2 {
                // condition the enumerated joint on (x1, x3)
                let joint: Vec<f64> = (0..2).map(|x2| phi[config_index(&[x1, x2, x3], 2)]).collect();
                let z: f64 = joint.iter().sum();
                let bc = block_conditional(&m, &y, &[x1, 0, x3], Block::new(1, 1)).unwrap();
                for x2 in 0..2 {
                    assert!((bc.table[x2] - joint[x2] / z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn first_block_uses_initial_law() {
        let m = model();
        let y = obs(&[2, 0, 1]);
        let phi = smoothing_distribution(&m, &y, DEFAULT_STATE_CAP).unwrap();
        for x3 in 0..2 {
            let bc = block_conditional(&m, &y, &[0, 0, x3], Block::new(0, 1)).unwrap();
            let joint: Vec<f64> = (0..4).map(|c| phi[c + 4 * x3]).collect();
            let z: f64 = joint.iter().sum();
            for c in 0..4 {
                assert!((bc.table[c] - joint[c] / z).abs() < 1e-12);
            }
            assert!((bc.table.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn conditional_ignores_non_boundary_sites() {
        let m = model();
        let y = obs(&[2, 0, 1, 1, 0, 2]);
        let block = Block::new(2, 3);
        let a = block_conditional(&m, &y, &[0, 1, 0, 0, 1, 0], block).unwrap();
        let b = block_conditional(&m, &y, &[1, 1, 1, 1, 1, 1], block).unwrap();
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn table_cap_is_enforced() {
        let m = TabularHmm::<f64>::uniform(2);
        let y = obs(&[0; 22]);
        let err = block_conditional(&m, &y, &[0; 22], Block::new(0, 20)).unwrap_err();
        assert!(matches!(err, Error::TableTooLarge { .. }));
        assert!(err.to_string().contains("sampling mode"));
    }

    #[test]
    fn ffbs_matches_table_frequencies() {
        let m = model();
        let y = obs(&[2, 0, 1, 1]);
        let x = [1, 0, 0, 1];
        let block = Block::new(1, 2);
        let table = block_conditional(&m, &y, &x, block).unwrap().table;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let c = sample_block_conditional(&m, &y, &x, block, &mut rng).unwrap();
            counts[config_index(&c, 2)] += 1;
        }
        for c in 0..4 {
            let p = table[c];
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            let f = counts[c] as f64 / draws as f64;
            assert!((f - p).abs() < 4.0 * sd + 1e-12, "cell {c}: {f} vs {p}");
        }
    }

    #[test]
    fn single_state_sampling_is_deterministic() {
        let m = TabularHmm::<f64>::uniform(1);
        let y = obs(&[0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_block_conditional(&m, &y, &[0; 4], Block::new(0, 3), &mut rng).unwrap(), vec![0; 4]);
    }

    #[test]
    fn ideal_operators_preserve_target() {
        let m = model();
        let y = obs(&[2, 0, 1, 1, 0]);
        let cover = BlockCover::common(5, 3, 1).unwrap();
        for schedule in [
            Schedule::LeftToRight,
            Schedule::Parallel,
            Schedule::ReversibleLeftToRight,
            Schedule::ReversibleParallel,
        ] {
            let op = sweep_operator(&m, &y, &cover, schedule, ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
            assert!(op.row_sum_defect() < 1e-12);
            assert!(op.invariance_residual() < 1e-9, "{schedule:?}");
        }
    }

    #[test]
    fn par_is_product_of_phases_and_odd_phase_commutes() {
        let m = model();
        let y = obs(&[2, 0, 1, 1, 0, 2, 1]);
        let cover = BlockCover::common(7, 3, 1).unwrap(); // [1-3][3-5][5-7]
        let b = cover.blocks();
        let par = sweep_operator(&m, &y, &cover, Schedule::Parallel, ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        let odd = ordered_operator(&m, &y, &[b[0], b[2]], ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        let odd_swapped = ordered_operator(&m, &y, &[b[2], b[0]], ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        let even = ordered_operator(&m, &y, &[b[1]], ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        let product = odd.matrix.dot(&even.matrix);
        let diff = (&par.matrix - &product).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-12);
        let swap = (&odd.matrix - &odd_swapped.matrix).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(swap <= 1e-12);
    }

    #[test]
    fn lr_and_par_differ() {
        let m = model();
        let y = obs(&[2, 0, 1, 1, 0]);
        let cover = BlockCover::from_blocks(5, vec![Block::new(0, 2), Block::new(2, 4)]).unwrap();
        // with two blocks PAR visits J1 then J2 as well; reversal distinguishes orders
        let lr = sweep_operator(&m, &y, &cover, Schedule::LeftToRight, ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        let rev = ordered_operator(&m, &y, &[cover.blocks()[1], cover.blocks()[0]], ExactKernel::Ideal, DEFAULT_STATE_CAP)
            .unwrap();
        let diff = (&lr.matrix - &rev.matrix).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff > 1e-6);
        // three blocks: LR = J1 J2 J3, PAR = J1 J3 J2
        let y7 = obs(&[2, 0, 1, 1, 0, 2, 1]);
        let c3 = BlockCover::common(7, 3, 1).unwrap();
        let lr = sweep_operator(&m, &y7, &c3, Schedule::LeftToRight, ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        let par = sweep_operator(&m, &y7, &c3, Schedule::Parallel, ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        let diff = (&lr.matrix - &par.matrix).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff > 1e-6);
    }

    #[test]
    fn tv_curve_behaviour() {
        let m = model();
        let y = obs(&[2, 0, 1, 1, 0]);
        let cover = BlockCover::common(5, 3, 1).unwrap();
        let op = sweep_operator(&m, &y, &cover, Schedule::LeftToRight, ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        assert!(tv_to_target(&op, &op.target, 0).abs() < 1e-15);
        let mut init = vec![0.0; op.size()];
        init[0] = 1.0;
        let curve = tv_curve(&op, &init, 40);
        assert!(curve[0] <= 1.0);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        assert!(curve[40] < 1e-6);
        assert!((tv_to_target(&op, &init, 7) - curve[7]).abs() < 1e-15);
    }

    #[test]
    fn state_cap_is_enforced() {
        let m = TabularHmm::<f64>::uniform(2);
        let y = obs(&[0; 13]);
        let cover = BlockCover::common(13, 13, 0).unwrap();
        let err = sweep_operator(&m, &y, &cover, Schedule::LeftToRight, ExactKernel::Ideal, DEFAULT_STATE_CAP);
        assert!(err.is_err());
    }

    #[test]
    fn csv_export_has_labeled_rows() {
        let m = TabularHmm::<f64>::uniform(2);
        let y = obs(&[0; 2]);
        let cover = BlockCover::common(2, 1, 0).unwrap();
        let op = sweep_operator(&m, &y, &cover, Schedule::LeftToRight, ExactKernel::Ideal, DEFAULT_STATE_CAP).unwrap();
        let mut buf = Vec::new();
        op.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,0,1,2,3");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("2,2.5e-1"));
    }
}
