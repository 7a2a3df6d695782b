//! The conditional SMC (Particle Gibbs) block kernel and its minorisation constant.

use std::io::Write;

use num_traits::{Float, One, Zero};
use rand::{Rng, RngCore};

use crate::blocking::Block;
use crate::error::{Error, Result};
use crate::exact::{block_conditional, config_index, config_from_index};
use crate::hmm::{FiniteStateModel, MixingProfile, ObservationRecord, StateSpaceModel};
use crate::scalar::{inverse_cdf, normalize_log_weights, Real};

/// Cap on the number of enumerated particle-system outcomes.
pub const PG_ENUMERATION_CAP: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    Bootstrap,
    Custom,
}

/// Proposal kernel `r_t` of the conditional SMC pass.
///
/// `right` is the fixed state after the block and is only supplied at the
/// block's last site.
pub trait Proposal<M: StateSpaceModel>: Sync {
    fn kind(&self) -> ProposalKind;

    fn sample(
        &self,
        model: &M,
        site: usize,
        prev: Option<&M::State>,
        right: Option<&M::State>,
        rng: &mut dyn RngCore,
    ) -> M::State;

    fn log_density(
        &self,
        model: &M,
        site: usize,
        prev: Option<&M::State>,
        x: &M::State,
        right: Option<&M::State>,
    ) -> M::Scalar;
}

/// Proposes from the model's own dynamics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bootstrap;

impl<M: StateSpaceModel> Proposal<M> for Bootstrap {
    fn kind(&self) -> ProposalKind {
        ProposalKind::Bootstrap
    }

    fn sample(
        &self,
        model: &M,
        _site: usize,
        prev: Option<&M::State>,
        _right: Option<&M::State>,
        rng: &mut dyn RngCore,
    ) -> M::State {
        model.sample_prior_step(prev, rng)
    }

    fn log_density(
        &self,
        model: &M,
        _site: usize,
        prev: Option<&M::State>,
        x: &M::State,
        _right: Option<&M::State>,
    ) -> M::Scalar {
        model.log_prior_step(prev, x)
    }
}

/// Proposes uniformly over the states of a finite model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UniformProposal;

impl<M: FiniteStateModel> Proposal<M> for UniformProposal {
    fn kind(&self) -> ProposalKind {
        ProposalKind::Custom
    }

    fn sample(
        &self,
        model: &M,
        _site: usize,
        _prev: Option<&usize>,
        _right: Option<&usize>,
        rng: &mut dyn RngCore,
    ) -> usize {
        rng.random_range(0..model.num_states())
    }

    fn log_density(&self, model: &M, _site: usize, _prev: Option<&usize>, _x: &usize, _right: Option<&usize>) -> M::Scalar {
        -M::Scalar::from_usize_lossy(model.num_states()).ln()
    }
}

/// All particles, weights and ancestors of one conditional SMC pass.
///
/// Storage is time-major: `particles[t][i]` is particle `i` at the `t`-th site
/// of the block. The reference occupies the last slot.
#[derive(Debug, Clone)]
pub struct ParticleSystem<X, S> {
    pub block: Block,
    pub particles: Vec<Vec<X>>,
    pub log_weights: Vec<Vec<S>>,
    /// `ancestors[t][i]` is the parent at step `t` of particle `i` at step `t + 1`.
    pub ancestors: Vec<Vec<usize>>,
}

impl<X: Clone + std::fmt::Debug, S: Real> ParticleSystem<X, S> {
    pub fn num_particles(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    pub fn reference_index(&self) -> usize {
        self.num_particles() - 1
    }

    /// Traces particle `i` at the last site back through its ancestry.
    pub fn trajectory(&self, mut i: usize) -> Vec<X> {
        let n = self.particles.len();
        let mut out = Vec::with_capacity(n);
        for t in (0..n).rev() {
            out.push(self.particles[t][i].clone());
            if t > 0 {
                i = self.ancestors[t - 1][i];
            }
        }
        out.reverse();
        out
    }

    /// Normalized final weights used for the selection draw.
    pub fn selection_probabilities(&self) -> Result<Vec<S>> {
        let last = self.log_weights.last().expect("non-empty block");
        normalize_log_weights(last).ok_or(Error::AllWeightsZero { site: self.block.last })
    }

    /// Writes `site,particle,state,log_weight,ancestor` rows. Sites and particles
    /// are 1-based; the ancestor column is empty at the block's first site.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["site", "particle", "state", "log_weight", "ancestor"])?;
        for (t, row) in self.particles.iter().enumerate() {
            for (i, x) in row.iter().enumerate() {
                let anc = if t == 0 {
                    String::new()
                } else {
                    (self.ancestors[t - 1][i] + 1).to_string()
                };
                wtr.write_record(&[
                    (self.block.first + t + 1).to_string(),
                    (i + 1).to_string(),
                    format!("{x:?}"),
                    self.log_weights[t][i].to_string(),
                    anc,
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_reference<X>(reference: &[X], obs_len: usize, block: Block, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewParticles(n));
    }
    if reference.len() != obs_len {
        return Err(Error::DimensionMismatch(format!(
            "reference has length {}, observations {obs_len}",
            reference.len()
        )));
    }
    if block.last >= obs_len {
        return Err(Error::DimensionMismatch(format!("block {block} exceeds T={obs_len}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn log_weight<M: StateSpaceModel, P: Proposal<M> + ?Sized>(
    model: &M,
    proposal: &P,
    obs: &ObservationRecord<M::Obs>,
    block: Block,
    site: usize,
    prev: Option<&M::State>,
    x: &M::State,
    right: Option<&M::State>,
) -> M::Scalar {
    let is_last = site == block.last;
    let mut lw = model.log_emission(x, obs.get(site));
    if proposal.kind() == ProposalKind::Custom {
        let r = if is_last { right } else { None };
        lw += model.log_prior_step(prev, x) - proposal.log_density(model, site, prev, x, r);
    }
    if is_last {
        if let Some(r) = right {
            lw += model.log_transition(x, r);
        }
    }
    lw
}

/// Runs the conditional SMC pass of the kernel on `block` with `reference`
/// pinned in the last slot.
pub fn conditional_smc<M, P, R>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    reference: &[M::State],
    block: Block,
    n: usize,
    proposal: &P,
    rng: &mut R,
) -> Result<ParticleSystem<M::State, M::Scalar>>
where
    M: StateSpaceModel,
    P: Proposal<M> + ?Sized,
    R: RngCore,
{
    check_reference(reference, obs.len(), block, n)?;
    let left = block.left_boundary().map(|i| &reference[i]);
    let right = block.right_boundary(obs.len()).map(|i| &reference[i]);
    let free = n - 1;
    let steps = block.len();
    let mut particles: Vec<Vec<M::State>> = Vec::with_capacity(steps);
    let mut log_weights: Vec<Vec<M::Scalar>> = Vec::with_capacity(steps);
    let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(steps.saturating_sub(1));

    for t in 0..steps {
        let site = block.first + t;
        let hook = if site == block.last { right } else { None };
        let mut xs: Vec<M::State> = Vec::with_capacity(n);
        let mut parents: Vec<Option<&M::State>> = Vec::with_capacity(n);
        if t == 0 {
            for _ in 0..free {
                xs.push(proposal.sample(model, site, left, hook, rng));
            }
            parents.resize(n, left);
        } else {
            let probs = normalize_log_weights(&log_weights[t - 1]).ok_or(Error::AllWeightsZero { site: site - 1 })?;
            let mut anc: Vec<usize> = (0..free)
                .map(|_| inverse_cdf(&probs, M::Scalar::lit(rng.random::<f64>())))
                .collect();
            anc.push(free);
            let prev_row = &particles[t - 1];
            for &a in &anc[..free] {
                xs.push(proposal.sample(model, site, Some(&prev_row[a]), hook, rng));
            }
            parents.extend(anc.iter().map(|&a| Some(&prev_row[a])));
            ancestors.push(anc);
        }
        xs.push(reference[site].clone());
        let lw: Vec<M::Scalar> = xs
            .iter()
            .zip(&parents)
            .map(|(x, prev)| log_weight(model, proposal, obs, block, site, *prev, x, right))
            .collect();
        drop(parents);
        particles.push(xs);
        log_weights.push(lw);
    }
    Ok(ParticleSystem {
        block,
        particles,
        log_weights,
        ancestors,
    })
}

/// One draw from the Particle Gibbs kernel: a new configuration for `block`.
pub fn pg_block_step<M, P, R>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    reference: &[M::State],
    block: Block,
    n: usize,
    proposal: &P,
    rng: &mut R,
) -> Result<Vec<M::State>>
where
    M: StateSpaceModel,
    P: Proposal<M> + ?Sized,
    R: RngCore,
{
    let system = conditional_smc(model, obs, reference, block, n, proposal, rng)?;
    let probs = system.selection_probabilities()?;
    let k = inverse_cdf(&probs, M::Scalar::lit(rng.random::<f64>()));
    Ok(system.trajectory(k))
}

/// Odometer over `digits` positions with `base` values each.
fn advance(odometer: &mut [usize], base: usize) -> bool {
    for d in odometer.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

struct LawEnumerator<'a, M: FiniteStateModel> {
    model: &'a M,
    obs: &'a ObservationRecord<M::Obs>,
    reference: &'a [usize],
    block: Block,
    right: Option<usize>,
    n: usize,
    out: Vec<M::Scalar>,
}

impl<M: FiniteStateModel> LawEnumerator<'_, M> {
    fn weight(&self, site: usize, prev: Option<usize>, x: usize) -> M::Scalar {
        log_weight(self.model, &Bootstrap, self.obs, self.block, site, prev.as_ref(), &x, self.right.as_ref())
    }

    fn descend(&mut self, t: usize, paths: Vec<Vec<usize>>, log_w: Vec<M::Scalar>, prob: M::Scalar) -> Result<()> {
        let k = self.model.num_states();
        if t == self.block.len() {
            let sel = normalize_log_weights(&log_w).ok_or(Error::AllWeightsZero { site: self.block.last })?;
            for (path, w) in paths.iter().zip(sel) {
                self.out[config_index(path, k)] += prob * w;
            }
            return Ok(());
        }
        let site = self.block.first + t;
        let probs = normalize_log_weights(&log_w).ok_or(Error::AllWeightsZero { site: site - 1 })?;
        let mut moves: Vec<(usize, usize, M::Scalar)> = Vec::new();
        for (a, &pa) in probs.iter().enumerate() {
            for x in 0..k {
                let p = pa * self.model.log_transition(paths[a].last().unwrap(), &x).exp();
                if p > M::Scalar::zero() {
                    moves.push((a, x, p));
                }
            }
        }
        let free = self.n - 1;
        let mut odo = vec![0usize; free];
        loop {
            let mut p = prob;
            let mut new_paths = Vec::with_capacity(self.n);
            let mut new_w = Vec::with_capacity(self.n);
            for &c in &odo {
                let (a, x, q) = moves[c];
                p *= q;
                let mut path = paths[a].clone();
                new_w.push(self.weight(site, path.last().copied(), x));
                path.push(x);
                new_paths.push(path);
            }
            let mut ref_path = paths[free].clone();
            let r = self.reference[site];
            new_w.push(self.weight(site, ref_path.last().copied(), r));
            ref_path.push(r);
            new_paths.push(ref_path);
            self.descend(t + 1, new_paths, new_w, p)?;
            if !advance(&mut odo, moves.len()) {
                break;
            }
        }
        Ok(())
    }
}

/// Number of outcomes of the kernel's randomness enumerated by [`exact_kernel_law`].
pub fn enumeration_size(num_states: usize, block_len: usize, n: usize) -> f64 {
    let k = num_states as f64;
    let free = (n - 1) as f64;
    k.powf(free) * (n as f64 * k).powf(free * (block_len as f64 - 1.0))
}

/// The exact output law of the bootstrap Particle Gibbs kernel on `block`, over
/// block configurations in canonical order, obtained by enumerating every
/// initial draw, ancestor draw and selection draw.
pub fn exact_kernel_law<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    reference: &[usize],
    block: Block,
    n: usize,
) -> Result<Vec<M::Scalar>> {
    check_reference(reference, obs.len(), block, n)?;
    let k = model.num_states();
    let size = enumeration_size(k, block.len(), n);
    if size > PG_ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            size,
            cap: PG_ENUMERATION_CAP,
        });
    }
    let left = block.left_boundary().map(|i| reference[i]);
    let mut en = LawEnumerator {
        model,
        obs,
        reference,
        block,
        right: block.right_boundary(obs.len()).map(|i| reference[i]),
        n,
        out: vec![M::Scalar::zero(); k.pow(block.len() as u32)],
    };
    let site = block.first;
    let free = n - 1;
    let mut odo = vec![0usize; free];
    loop {
        let prob: M::Scalar = odo
            .iter()
            .map(|x| model.log_prior_step(left.as_ref(), x).exp())
            .fold(M::Scalar::one(), |a, b| a * b);
        if prob > M::Scalar::zero() {
            let mut paths: Vec<Vec<usize>> = odo.iter().map(|&x| vec![x]).collect();
            paths.push(vec![reference[site]]);
            let log_w = paths.iter().map(|p| en.weight(site, left, p[0])).collect();
            en.descend(1, paths, log_w, prob)?;
        }
        if !advance(&mut odo, k) {
            break;
        }
    }
    Ok(en.out)
}

/// Minorisation constants of the bootstrap kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinorisationBound<S> {
    pub c: S,
    pub epsilon: S,
}

/// `ε(N, L) = 1 − (1 − 1/(c(N−1)+1))^L`.
pub fn epsilon<S: Real>(c: S, n: usize, l: usize) -> S {
    if l == 0 {
        return S::zero();
    }
    let q = S::one() / (c * S::from_usize_lossy(n - 1) + S::one());
    S::one() - (S::one() - q).powi(l as i32)
}

/// `c = (2δσ+/σ− − 1)^{-1}` and `ε(N, L)` for the given profile.
pub fn minorisation_bound<S: Real>(profile: &MixingProfile<S>, n: usize, l: usize) -> MinorisationBound<S> {
    let two = S::lit(2.0);
    let c = S::one() / (two * profile.delta * profile.sigma_plus / profile.sigma_minus - S::one());
    MinorisationBound {
        c,
        epsilon: epsilon(c, n, l),
    }
}

/// The largest `γ` with `Q_N^J(x_{J+}, ·) ≥ γ φ_x^J` over all boundary and
/// reference configurations, by exact enumeration.
pub fn minorisation_empirical<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    block: Block,
    n: usize,
) -> Result<M::Scalar> {
    let len = obs.len();
    check_reference(&vec![0usize; len], len, block, n)?;
    let k = model.num_states();
    let lefts: Vec<Option<usize>> = match block.left_boundary() {
        Some(_) => (0..k).map(Some).collect(),
        None => vec![None],
    };
    let rights: Vec<Option<usize>> = match block.right_boundary(len) {
        Some(_) => (0..k).map(Some).collect(),
        None => vec![None],
    };
    let configs = k.pow(block.len() as u32);
    let mut gamma = M::Scalar::infinity();
    let mut x = vec![0usize; len];
    for &l in &lefts {
        for &r in &rights {
            if let (Some(l), Some(i)) = (l, block.left_boundary()) {
                x[i] = l;
            }
            if let (Some(r), Some(i)) = (r, block.right_boundary(len)) {
                x[i] = r;
            }
            let target = block_conditional(model, obs, &x, block)?.table;
            for c in 0..configs {
                x[block.first..=block.last].copy_from_slice(&config_from_index(c, k, block.len()));
                let law = exact_kernel_law(model, obs, &x, block, n)?;
                for (q, p) in law.iter().zip(&target) {
                    if *p > M::Scalar::zero() {
                        gamma = gamma.min(*q / *p);
                    }
                }
            }
        }
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{block_conditional, config_index};
    use crate::hmm::{mixing_profile, Emission, Observation, TabularHmm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn model() -> TabularHmm<f64> {
        TabularHmm::new(
            vec![0.45, 0.55],
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            Emission::Table(vec![vec![0.8, 0.2], vec![0.3, 0.7]]),
        )
        .unwrap()
    }

    fn obs(v: &[usize]) -> ObservationRecord<Observation<f64>> {
        ObservationRecord::new(v.iter().map(|&s| Observation::Symbol(s)).collect()).unwrap()
    }

    /// Hand-marginalized law of the kernel for a single-site block with N = 2.
    ///
    /// One free particle ξ ~ m(x_l, ·); weights w(z) = g(z) m(z, x_r); the output is
    /// ξ with probability w(ξ)/(w(ξ)+w(x*)) and x* otherwise.
    fn single_site_law(m: &TabularHmm<f64>, y: usize, xl: usize, xr: usize, xref: usize) -> Vec<f64> {
        let p = m.transition();
        let g = |z: usize| match m.emission() {
            Emission::Table(t) => t[z][y],
            _ => unreachable!(),
        };
        let w = |z: usize| g(z) * p[[z, xr]];
        let mut law = vec![0.0; 2];
        for xi in 0..2 {
            let q = p[[xl, xi]];
            let s = w(xi) + w(xref);
            law[xi] += q * w(xi) / s;
            law[xref] += q * w(xref) / s;
        }
        law
    }

    #[test]
    fn enumerated_law_matches_hand_marginalization() {
        let m = model();
        let y = obs(&[0, 1, 0]);
        for xl in 0..2 {
            for xr in 0..2 {
                for xref in 0..2 {
                    let law = exact_kernel_law(&m, &y, &[xl, xref, xr], Block::new(1, 1), 2).unwrap();
                    let hand = single_site_law(&m, 1, xl, xr, xref);
                    for c in 0..2 {
                        assert!((law[c] - hand[c]).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn enumerated_law_leaves_conditional_invariant() {
        let m = model();
        let y = obs(&[0, 1, 1, 0, 1]);
        for (block, n) in [(Block::new(1, 1), 2), (Block::new(1, 2), 2), (Block::new(0, 1), 3), (Block::new(3, 4), 2)] {
            let mut x = vec![1, 0, 1, 1, 0];
            let phi = block_conditional(&m, &y, &x, block).unwrap().table;
            let mut mixed = vec![0.0; phi.len()];
            for (c, &pc) in phi.iter().enumerate() {
                x[block.first..=block.last].copy_from_slice(&config_from_index(c, 2, block.len()));
                let law = exact_kernel_law(&m, &y, &x, block, n).unwrap();
                assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (d, q) in law.iter().enumerate() {
                    mixed[d] += pc * q;
                }
            }
            let l1: f64 = mixed.iter().zip(&phi).map(|(a, b)| (a - b).abs()).sum();
            assert!(l1 < 1e-12, "{block}: {l1}");
        }
    }

    #[test]
    fn single_state_returns_reference() {
        let m = TabularHmm::<f64>::uniform(1);
        let y = obs(&[0; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let out = pg_block_step(&m, &y, &[0; 5], Block::new(1, 3), 4, &Bootstrap, &mut rng).unwrap();
            assert_eq!(out, vec![0; 3]);
        }
    }

    #[test]
    fn too_few_particles() {
        let m = model();
        let y = obs(&[0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = pg_block_step(&m, &y, &[0, 0], Block::new(0, 1), 1, &Bootstrap, &mut rng).unwrap_err();
        assert!(matches!(err, Error::TooFewParticles(1)));
    }

    #[test]
    fn zero_weights_are_reported() {
        let m = TabularHmm::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            Emission::Table(vec![vec![1.0, 0.0], vec![1.0, 0.0]]),
        )
        .unwrap();
        let y = obs(&[0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = pg_block_step(&m, &y, &[0, 0], Block::new(0, 1), 3, &Bootstrap, &mut rng).unwrap_err();
        assert!(matches!(err, Error::AllWeightsZero { site: 1 }));
    }

    #[test]
    fn reference_is_pinned_and_bootstrap_weights_are_emissions() {
        let m = model();
        let y = obs(&[0, 1, 1, 0, 1, 1]);
        let reference = [1, 0, 0, 1, 1, 0];
        let block = Block::new(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = conditional_smc(&m, &y, &reference, block, 6, &Bootstrap, &mut rng).unwrap();
        for t in 0..block.len() {
            let site = block.first + t;
            assert_eq!(sys.particles[t][5], reference[site]);
            if t > 0 {
                assert_eq!(sys.ancestors[t - 1][5], 5);
            }
            for i in 0..6 {
                let x = sys.particles[t][i];
                let g = m.log_emission(&x, y.get(site));
                if site < block.last {
                    assert_eq!(sys.log_weights[t][i], g);
                } else {
                    assert_eq!(sys.log_weights[t][i], g + m.log_transition(&x, &reference[5]));
                }
            }
        }
        assert_eq!(sys.trajectory(5), reference[1..5].to_vec());
        let mut buf = Vec::new();
        sys.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 6);
        assert!(text.starts_with("site,particle,state,log_weight,ancestor\n2,1,"));
    }

    #[test]
    fn output_ignores_sites_outside_extended_block() {
        let m = model();
        let y = obs(&[0, 1, 1, 0, 1, 1, 0]);
        let block = Block::new(2, 4);
        let a = [0, 1, 0, 1, 1, 0, 0];
        let b = [1, 1, 0, 1, 1, 0, 1];
        for seed in 0..20 {
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(
                pg_block_step(&m, &y, &a, block, 4, &Bootstrap, &mut r1).unwrap(),
                pg_block_step(&m, &y, &b, block, 4, &Bootstrap, &mut r2).unwrap()
            );
        }
    }

    fn chi_square_pvalue(counts: &[usize], probs: &[f64]) -> f64 {
        let total: usize = counts.iter().sum();
        let stat: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&o, &p)| {
                let e = p * total as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        1.0 - ChiSquared::new((probs.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn many_particles_approach_block_conditional() {
        let m = model();
        let y = obs(&[0, 1, 1, 0, 1]);
        let x = [1, 0, 0, 1, 0];
        let block = Block::new(1, 3);
        let table = block_conditional(&m, &y, &x, block).unwrap().table;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 20_000;
        let mut counts = vec![0usize; 8];
        for _ in 0..draws {
            let c = pg_block_step(&m, &y, &x, block, 1024, &Bootstrap, &mut rng).unwrap();
            counts[config_index(&c, 2)] += 1;
        }
        let pval = chi_square_pvalue(&counts, &table);
        assert!(pval > 0.01, "chi-square p = {pval}");
    }

    #[test]
    fn reference_drawn_from_conditional_gives_conditional() {
        let m = model();
        let y = obs(&[0, 1, 1, 0, 1]);
        let mut x = [1, 0, 0, 1, 0];
        let block = Block::new(1, 3);
        let table = block_conditional(&m, &y, &x, block).unwrap().table;
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let draws = 100_000;
        let mut counts = vec![0usize; 8];
        for _ in 0..draws {
            let r = inverse_cdf(&table, rng.random::<f64>());
            x[1..4].copy_from_slice(&config_from_index(r, 2, 3));
            let c = pg_block_step(&m, &y, &x, block, 3, &Bootstrap, &mut rng).unwrap();
            counts[config_index(&c, 2)] += 1;
        }
        let pval = chi_square_pvalue(&counts, &table);
        assert!(pval > 0.01, "chi-square p = {pval}");
    }

    #[test]
    fn custom_proposal_targets_the_same_conditional() {
        let m = model();
        let y = obs(&[0, 1, 1, 0]);
        let x = [1, 0, 0, 1];
        let block = Block::new(1, 2);
        let table = block_conditional(&m, &y, &x, block).unwrap().table;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 20_000;
        let mut counts = vec![0usize; 4];
        let mut cur = x;
        for _ in 0..draws {
            let c = pg_block_step(&m, &y, &cur, block, 3, &UniformProposal, &mut rng).unwrap();
            cur[1..3].copy_from_slice(&c);
            counts[config_index(&c, 2)] += 1;
        }
        for c in 0..4 {
            assert!((counts[c] as f64 / draws as f64 - table[c]).abs() < 0.03);
        }
    }

    #[test]
    fn minorisation_examples() {
        let b = minorisation_bound(
            &MixingProfile {
                sigma_minus: 1.0,
                sigma_plus: 1.0,
                delta: 1.0,
                h: 1,
            },
            2,
            1,
        );
        assert!((b.c - 1.0).abs() < 1e-15);
        assert!((b.epsilon - 0.5).abs() < 1e-15);
        assert_eq!(epsilon(0.3, 17, 0), 0.0);
        let mut prev = 1.0;
        for e in 1..=10 {
            let eps = epsilon(0.7, 1 << e, 5);
            assert!(eps < prev);
            prev = eps;
        }
    }

    #[test]
    fn empirical_minorisation_examples() {
        let one = TabularHmm::<f64>::uniform(1);
        assert!((minorisation_empirical(&one, &obs(&[0, 0, 0]), Block::new(1, 1), 2).unwrap() - 1.0).abs() < 1e-12);

        let uni = TabularHmm::<f64>::uniform(2);
        let y = obs(&[0, 0, 0]);
        let gamma = minorisation_empirical(&uni, &y, Block::new(1, 1), 2).unwrap();
        assert!(gamma >= 0.5 - 1e-9);

        let m = model();
        let y = obs(&[0, 1, 1]);
        let profile = mixing_profile(&m, &y, 1).unwrap();
        let mut last = 0.0;
        for n in [2, 3, 4, 6, 8] {
            let g = minorisation_empirical(&m, &y, Block::new(1, 1), n).unwrap();
            assert!(g >= last - 1e-12);
            assert!(g >= 1.0 - minorisation_bound(&profile, n, 1).epsilon - 1e-9);
            last = g;
        }
    }

    #[test]
    fn enumeration_cap() {
        let m = model();
        let y = obs(&[0; 8]);
        let err = exact_kernel_law(&m, &y, &[0; 8], Block::new(0, 7), 4).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { .. }));
    }
}
