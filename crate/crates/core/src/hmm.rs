//! Hidden Markov model abstraction, observation record, trajectories, and exact
//! joint-smoothing evaluation for finite tabular models.
//!
//! Tabular models store transition *probabilities*. Whenever mixing constants are
//! reported they are densities against the uniform measure on the `K` states, so a
//! density is `K` times the corresponding probability.

use std::fmt::Debug;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use num_traits::{Float, Zero};

use crate::scalar::{inverse_cdf, log_sum_exp, Real};

/// Tolerance for stochastic-vector checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A time- and space-homogeneous state-space model with explicit densities.
///
/// Sites are 0-based. `prev == None` denotes the initial law.
pub trait StateSpaceModel: Sync {
    type Scalar: Real;
    type State: Clone + PartialEq + Debug + Send + Sync;
    type Obs: Sync;

    fn log_initial(&self, x: &Self::State) -> Self::Scalar;
    fn log_transition(&self, from: &Self::State, to: &Self::State) -> Self::Scalar;
    fn log_emission(&self, x: &Self::State, y: &Self::Obs) -> Self::Scalar;
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn sample_transition<R: Rng + ?Sized>(&self, from: &Self::State, rng: &mut R) -> Self::State;

    /// `log μ(x)` when `prev` is `None`, `log m(prev, x)` otherwise.
    fn log_prior_step(&self, prev: Option<&Self::State>, x: &Self::State) -> Self::Scalar {
        match prev {
            None => self.log_initial(x),
            Some(p) => self.log_transition(p, x),
        }
    }

    fn sample_prior_step<R: Rng + ?Sized>(&self, prev: Option<&Self::State>, rng: &mut R) -> Self::State {
        match prev {
            None => self.sample_initial(rng),
            Some(p) => self.sample_transition(p, rng),
        }
    }
}

/// A model whose states are `0..K`; enables the exact oracles.
pub trait FiniteStateModel: StateSpaceModel<State = usize> {
    fn num_states(&self) -> usize;
}

/// One observed value: a symbol index for table emissions, a real value for
/// parametric emissions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation<S> {
    Symbol(usize),
    Value(S),
}

/// Emission law `g(x, y)` of a tabular model.
#[derive(Debug, Clone, PartialEq)]
pub enum Emission<S> {
    /// `probs[x][y]`, one row per hidden state over a finite alphabet.
    Table(Vec<Vec<S>>),
    /// `y | x ~ N(means[x], std_dev²)`.
    Gaussian { means: Vec<S>, std_dev: S },
}

impl<S: Real> Emission<S> {
    fn log_density(&self, x: usize, y: &Observation<S>) -> S {
        match (self, y) {
            (Emission::Table(probs), Observation::Symbol(s)) => match probs[x].get(*s) {
                Some(&p) => p.ln(),
                None => S::neg_infinity(),
            },
            (Emission::Gaussian { means, std_dev }, Observation::Value(v)) => {
                let z = (*v - means[x]) / *std_dev;
                let half = S::lit(0.5);
                -half * z * z - std_dev.ln() - half * S::lit(2.0 * std::f64::consts::PI).ln()
            }
            _ => S::neg_infinity(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Observation<S> {
        match self {
            Emission::Table(probs) => {
                let u = S::lit(rng.random::<f64>());
                Observation::Symbol(inverse_cdf(&probs[x], u))
            }
            Emission::Gaussian { means, std_dev } => {
                let normal = Normal::new(means[x].as_f64(), std_dev.as_f64()).expect("validated std_dev");
                Observation::Value(S::lit(normal.sample(rng)))
            }
        }
    }

    fn num_states(&self) -> usize {
        match self {
            Emission::Table(p) => p.len(),
            Emission::Gaussian { means, .. } => means.len(),
        }
    }
}

/// Finite-state HMM with `K` states.
#[derive(Debug, Clone)]
pub struct TabularHmm<S> {
    initial: Vec<S>,
    transition: Array2<S>,
    emission: Emission<S>,
    log_initial: Vec<S>,
    log_transition: Array2<S>,
}

impl<S: Real> TabularHmm<S> {
    /// Builds and validates a model. Reports the first violated invariant.
    pub fn new(initial: Vec<S>, transition: Vec<Vec<S>>, emission: Emission<S>) -> Result<Self> {
        let k = initial.len();
        if k == 0 {
            return Err(Error::InvalidModel("num_states must be positive".into()));
        }
        check_stochastic("initial", &initial)?;
        if transition.len() != k {
            return Err(Error::InvalidModel(format!(
                "transition has {} rows, expected {k}",
                transition.len()
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidModel(format!(
                    "transition row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            check_stochastic(&format!("transition row {i}"), row)?;
        }
        if emission.num_states() != k {
            return Err(Error::InvalidModel(format!(
                "emission describes {} states, expected {k}",
                emission.num_states()
            )));
        }
        match &emission {
            Emission::Table(probs) => {
                let width = probs[0].len();
                for (i, row) in probs.iter().enumerate() {
                    if row.len() != width {
                        return Err(Error::InvalidModel(format!("emission row {i} has inconsistent width")));
                    }
                    check_stochastic(&format!("emission row {i}"), row)?;
                }
            }
            Emission::Gaussian { means, std_dev } => {
                if !(*std_dev > S::zero()) || !std_dev.is_finite() {
                    return Err(Error::InvalidModel("gaussian std_dev must be positive and finite".into()));
                }
                if means.iter().any(|m| !m.is_finite()) {
                    return Err(Error::InvalidModel("gaussian means must be finite".into()));
                }
            }
        }
        let flat: Vec<S> = transition.into_iter().flatten().collect();
        let transition = Array2::from_shape_vec((k, k), flat).expect("square");
        let log_initial = initial.iter().map(|p| p.ln()).collect();
        let log_transition = transition.mapv(|p| p.ln());
        Ok(Self {
            initial,
            transition,
            emission,
            log_initial,
            log_transition,
        })
    }

    /// Model with every kernel uniform and `g ≡ 1` over a single-symbol alphabet.
    pub fn uniform(k: usize) -> Self {
        let u = S::one() / S::from_usize_lossy(k);
        Self::new(vec![u; k], vec![vec![u; k]; k], Emission::Table(vec![vec![S::one()]; k])).expect("uniform model")
    }

    pub fn num_states(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[S] {
        &self.initial
    }

    /// Transition probabilities `P[x, x']`.
    pub fn transition(&self) -> &Array2<S> {
        &self.transition
    }

    pub fn emission(&self) -> &Emission<S> {
        &self.emission
    }

    /// Transition density against the uniform dominating measure: `K · P[x, x']`.
    pub fn transition_density(&self, from: usize, to: usize) -> S {
        S::from_usize_lossy(self.num_states()) * self.transition[[from, to]]
    }

    pub fn emission_density(&self, x: usize, y: &Observation<S>) -> S {
        self.emission.log_density(x, y).exp()
    }

    /// Checks observations are compatible with the emission law.
    pub fn check_observations(&self, obs: &ObservationRecord<Observation<S>>) -> Result<()> {
        for (t, y) in obs.iter().enumerate() {
            match (&self.emission, y) {
                (Emission::Table(p), Observation::Symbol(s)) if *s < p[0].len() => {}
                (Emission::Gaussian { .. }, Observation::Value(v)) if v.is_finite() => {}
                _ => {
                    return Err(Error::InvalidModel(format!(
                        "observation {} (1-based) is incompatible with the emission law",
                        t + 1
                    )))
                }
            }
        }
        Ok(())
    }

    /// Draws a hidden path from the prior and observations given it.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        len: usize,
        rng: &mut R,
    ) -> (Trajectory<usize>, ObservationRecord<Observation<S>>) {
        let x = simulate_prior(self, len, rng);
        let y = x.iter().map(|&s| self.emission.sample(s, rng)).collect();
        (x, ObservationRecord::new(y).expect("len >= 1"))
    }
}

fn check_stochastic<S: Real>(what: &str, v: &[S]) -> Result<()> {
    if let Some(p) = v.iter().find(|p| !(**p >= S::zero()) || !p.is_finite()) {
        return Err(Error::InvalidModel(format!("{what} has invalid entry {p}")));
    }
    let sum: S = v.iter().copied().sum();
    if (sum - S::one()).abs() > S::lit(STOCHASTIC_TOL).max(S::epsilon() * S::lit(16.0)) {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

impl<S: Real> FiniteStateModel for TabularHmm<S> {
    fn num_states(&self) -> usize {
        self.initial.len()
    }
}

impl<S: Real> StateSpaceModel for TabularHmm<S> {
    type Scalar = S;
    type State = usize;
    type Obs = Observation<S>;

    fn log_initial(&self, x: &usize) -> S {
        self.log_initial[*x]
    }

    fn log_transition(&self, from: &usize, to: &usize) -> S {
        self.log_transition[[*from, *to]]
    }

    fn log_emission(&self, x: &usize, y: &Observation<S>) -> S {
        self.emission.log_density(*x, y)
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        inverse_cdf(&self.initial, S::lit(rng.random::<f64>()))
    }

    fn sample_transition<R: Rng + ?Sized>(&self, from: &usize, rng: &mut R) -> usize {
        let row = self.transition.row(*from);
        inverse_cdf(row.as_slice().expect("standard layout"), S::lit(rng.random::<f64>()))
    }
}

type LogFn<X, S> = Box<dyn Fn(&X) -> S + Send + Sync>;
type LogFn2<X, S> = Box<dyn Fn(&X, &X) -> S + Send + Sync>;
type SampleFn<X> = Box<dyn Fn(Option<&X>, &mut dyn rand::RngCore) -> X + Send + Sync>;

/// Model over an arbitrary state space given by density and sampling callbacks.
///
/// Mixing constants are not computable for such models; only sampling is supported.
pub struct CallbackModel<S, X, Y> {
    log_initial: LogFn<X, S>,
    log_transition: LogFn2<X, S>,
    log_emission: Box<dyn Fn(&X, &Y) -> S + Send + Sync>,
    sampler: SampleFn<X>,
}

impl<S: Real, X, Y> CallbackModel<S, X, Y> {
    /// `sampler(None, rng)` draws from the initial law, `sampler(Some(x), rng)` from `M(x, ·)`.
    pub fn new(
        log_initial: impl Fn(&X) -> S + Send + Sync + 'static,
        log_transition: impl Fn(&X, &X) -> S + Send + Sync + 'static,
        log_emission: impl Fn(&X, &Y) -> S + Send + Sync + 'static,
        sampler: impl Fn(Option<&X>, &mut dyn rand::RngCore) -> X + Send + Sync + 'static,
    ) -> Self {
        Self {
            log_initial: Box::new(log_initial),
            log_transition: Box::new(log_transition),
            log_emission: Box::new(log_emission),
            sampler: Box::new(sampler),
        }
    }
}

impl<S, X, Y> StateSpaceModel for CallbackModel<S, X, Y>
where
    S: Real,
    X: Clone + PartialEq + Debug + Send + Sync,
    Y: Sync,
{
    type Scalar = S;
    type State = X;
    type Obs = Y;

    fn log_initial(&self, x: &X) -> S {
        (self.log_initial)(x)
    }

    fn log_transition(&self, from: &X, to: &X) -> S {
        (self.log_transition)(from, to)
    }

    fn log_emission(&self, x: &X, y: &Y) -> S {
        (self.log_emission)(x, y)
    }

    fn sample_initial<R: Rng + ?Sized>(&self, mut rng: &mut R) -> X {
        (self.sampler)(None, &mut rng)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, from: &X, mut rng: &mut R) -> X {
        (self.sampler)(Some(from), &mut rng)
    }
}

/// The fixed observation sequence `y_1..y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord<O> {
    values: Vec<O>,
}

impl<O> ObservationRecord<O> {
    pub fn new(values: Vec<O>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidModel("observation record must have T >= 1".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, t: usize) -> &O {
        &self.values[t]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, O> {
        self.values.iter()
    }

    pub fn as_slice(&self) -> &[O] {
        &self.values
    }

    /// First `len` observations.
    pub fn prefix(&self, len: usize) -> Result<Self>
    where
        O: Clone,
    {
        if len > self.len() {
            return Err(Error::DimensionMismatch(format!(
                "prefix of length {len} requested from a record of length {}",
                self.len()
            )));
        }
        Self::new(self.values[..len].to_vec())
    }
}

/// A point `x_1..x_T` of the state space; the Gibbs chain state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trajectory<X>(pub Vec<X>);

impl<X> Trajectory<X> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[X] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, X> {
        self.0.iter()
    }
}

impl<X> std::ops::Index<usize> for Trajectory<X> {
    type Output = X;

    fn index(&self, i: usize) -> &X {
        &self.0[i]
    }
}

impl<X> std::ops::IndexMut<usize> for Trajectory<X> {
    fn index_mut(&mut self, i: usize) -> &mut X {
        &mut self.0[i]
    }
}

impl<X> From<Vec<X>> for Trajectory<X> {
    fn from(v: Vec<X>) -> Self {
        Self(v)
    }
}

/// Forward simulation from the prior, ignoring observations.
pub fn simulate_prior<M: StateSpaceModel, R: Rng + ?Sized>(
    model: &M,
    len: usize,
    rng: &mut R,
) -> Trajectory<M::State> {
    let mut x: Vec<M::State> = Vec::with_capacity(len);
    for _ in 0..len {
        let next = model.sample_prior_step(x.last(), rng);
        x.push(next);
    }
    Trajectory(x)
}

/// Unnormalized log joint `log μ(x_1) g(x_1,y_1) Π m(x_{t-1},x_t) g(x_t,y_t)`.
pub fn log_joint<M: StateSpaceModel>(model: &M, obs: &ObservationRecord<M::Obs>, x: &[M::State]) -> M::Scalar {
    let mut acc = M::Scalar::zero();
    let mut prev = None;
    for (t, xt) in x.iter().enumerate() {
        acc += model.log_prior_step(prev, xt) + model.log_emission(xt, obs.get(t));
        prev = Some(xt);
    }
    acc
}

/// `log p_μ(y_1..y_T)` by the forward algorithm.
pub fn log_evidence<M: FiniteStateModel>(model: &M, obs: &ObservationRecord<M::Obs>) -> M::Scalar {
    let k = model.num_states();
    let mut alpha: Vec<M::Scalar> = (0..k)
        .map(|x| model.log_initial(&x) + model.log_emission(&x, obs.get(0)))
        .collect();
    let mut scratch = vec![M::Scalar::zero(); k];
    for t in 1..obs.len() {
        for (x, slot) in scratch.iter_mut().enumerate() {
            let terms: Vec<M::Scalar> = (0..k).map(|p| alpha[p] + model.log_transition(&p, &x)).collect();
            *slot = log_sum_exp(&terms) + model.log_emission(&x, obs.get(t));
        }
        std::mem::swap(&mut alpha, &mut scratch);
    }
    log_sum_exp(&alpha)
}

/// `log φ(x_1..x_T)`: the joint smoothing log-probability (counting measure on states).
pub fn jsd_log_density<M: FiniteStateModel>(
    model: &M,
    obs: &ObservationRecord<M::Obs>,
    x: &Trajectory<usize>,
) -> Result<M::Scalar> {
    if x.len() != obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory has length {}, observations {}",
            x.len(),
            obs.len()
        )));
    }
    let k = model.num_states();
    if let Some(t) = x.iter().position(|&s| s >= k) {
        return Err(Error::DimensionMismatch(format!(
            "state {} at site {t} outside 0..{k}",
            x[t]
        )));
    }
    for (t, xt) in x.iter().enumerate() {
        if model.log_emission(xt, obs.get(t)) == M::Scalar::neg_infinity() {
            return Err(Error::ZeroEmission { site: t, state: *xt });
        }
    }
    Ok(log_joint(model, obs, x.as_slice()) - log_evidence(model, obs))
}

/// Strong-mixing constants of a tabular model against the uniform dominating measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingProfile<S> {
    pub sigma_minus: S,
    pub sigma_plus: S,
    pub delta: S,
    pub h: u32,
}

impl<S: Real> MixingProfile<S> {
    pub fn new(sigma_minus: S, sigma_plus: S, delta: S, h: u32) -> Result<Self> {
        if !(sigma_minus > S::zero()) || sigma_minus > sigma_plus || !(delta >= S::one()) || h == 0 {
            return Err(Error::Mixing(format!(
                "profile requires 0 < σ− ≤ σ+, δ ≥ 1, h ≥ 1; got σ−={sigma_minus}, σ+={sigma_plus}, δ={delta}, h={h}"
            )));
        }
        Ok(Self {
            sigma_minus,
            sigma_plus,
            delta,
            h,
        })
    }
}

/// Computes `(σ−, σ+, δ, h)`.
///
/// `σ+` is the largest one-step density `K·P`, `σ−` the smallest entry of the
/// `h`-step composite density `K·P^h`, and `δ` the `h`-th power of the largest
/// emission ratio `sup_x g / inf_x g` over the observed record.
pub fn mixing_profile<S: Real>(
    model: &TabularHmm<S>,
    obs: &ObservationRecord<Observation<S>>,
    h: u32,
) -> Result<MixingProfile<S>> {
    if h == 0 {
        return Err(Error::Mixing("h must be at least 1".into()));
    }
    let kf = S::from_usize_lossy(model.num_states());
    let p = model.transition();
    let sigma_plus = kf * p.iter().copied().fold(S::zero(), S::max);
    let mut power = p.clone();
    for _ in 1..h {
        power = power.dot(p);
    }
    let sigma_minus = kf * power.iter().copied().fold(S::infinity(), S::min);
    if !(sigma_minus > S::zero()) {
        return Err(Error::Mixing(format!(
            "{h}-step transition density has a zero entry; S1 lower bound fails (try a larger h)"
        )));
    }
    let mut ratio = S::one();
    for (t, y) in obs.iter().enumerate() {
        let g: Vec<S> = (0..model.num_states()).map(|x| model.emission_density(x, y)).collect();
        let lo = g.iter().copied().fold(S::infinity(), S::min);
        let hi = g.iter().copied().fold(S::zero(), S::max);
        if !(lo > S::zero()) {
            return Err(Error::Mixing(format!(
                "inf_x g(x, y_t) = 0 at site {t} (1-based {}); S2 unverifiable",
                t + 1
            )));
        }
        ratio = ratio.max(hi / lo);
    }
    MixingProfile::new(sigma_minus, sigma_plus, ratio.powi(h as i32), h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_model(k: usize, symbols: usize, seed: u64) -> TabularHmm<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stoch = |n: usize| {
            let v: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
            let s: f64 = v.iter().sum();
            let mut v: Vec<f64> = v.iter().map(|x| x / s).collect();
            let rest: f64 = v[1..].iter().sum();
            v[0] = 1.0 - rest;
            v
        };
        let initial = stoch(k);
        let transition = (0..k).map(|_| stoch(k)).collect();
        let emission = Emission::Table((0..k).map(|_| stoch(symbols)).collect());
        TabularHmm::new(initial, transition, emission).unwrap()
    }

    fn all_trajectories(k: usize, t: usize) -> Vec<Vec<usize>> {
        let total = k.pow(t as u32);
        (0..total)
            .map(|mut idx| {
                (0..t)
                    .map(|_| {
                        let d = idx % k;
                        idx /= k;
                        d
                    })
                    .collect()
            })
            .collect()
    }

    fn symbols(v: &[usize]) -> ObservationRecord<Observation<f64>> {
        ObservationRecord::new(v.iter().map(|&s| Observation::Symbol(s)).collect()).unwrap()
    }

    #[test]
    fn uniform_model_gives_uniform_jsd() {
        let m = TabularHmm::<f64>::uniform(2);
        let y = symbols(&[0, 0]);
        for x in all_trajectories(2, 2) {
            let v = jsd_log_density(&m, &y, &Trajectory(x)).unwrap();
            assert!((v - 0.25f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn single_state_is_point_mass() {
        let m = TabularHmm::<f64>::uniform(1);
        let y = symbols(&[0; 7]);
        assert!(jsd_log_density(&m, &y, &Trajectory(vec![0; 7])).unwrap().abs() < 1e-14);
    }

    #[test]
    fn jsd_matches_brute_force_normalization() {
        let m = random_model(2, 3, 11);
        let y = symbols(&[2, 0, 1]);
        // oracle: product of factors, normalized by explicit enumeration
        let joint = |x: &[usize]| {
            let mut p = m.initial()[x[0]];
            let em = |s: usize, o: usize| match m.emission() {
                Emission::Table(t) => t[s][o],
                _ => unreachable!(),
            };
            p *= em(x[0], 2);
            let ys = [2, 0, 1];
            for t in 1..3 {
                p *= m.transition()[[x[t - 1], x[t]]] * em(x[t], ys[t]);
            }
            p
        };
        let all = all_trajectories(2, 3);
        let z: f64 = all.iter().map(|x| joint(x)).sum();
        for x in all {
            let expect = (joint(&x) / z).ln();
            let got = jsd_log_density(&m, &y, &Trajectory(x)).unwrap();
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn jsd_sums_to_one_and_ignores_emission_scale() {
        let m = random_model(3, 2, 5);
        let ys = [0, 1, 1, 0, 1];
        let y = symbols(&ys);
        let total: f64 = all_trajectories(3, 5)
            .into_iter()
            .map(|x| jsd_log_density(&m, &y, &Trajectory(x)).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);

    }

    /// Same chain as an inner tabular model, with `g(·, y_t)` multiplied by `scale[t]`.
    struct Rescaled {
        inner: TabularHmm<f64>,
        scale: Vec<f64>,
    }

    impl StateSpaceModel for Rescaled {
        type Scalar = f64;
        type State = usize;
        type Obs = (usize, Observation<f64>);

        fn log_initial(&self, x: &usize) -> f64 {
            self.inner.log_initial(x)
        }
        fn log_transition(&self, a: &usize, b: &usize) -> f64 {
            self.inner.log_transition(a, b)
        }
        fn log_emission(&self, x: &usize, y: &Self::Obs) -> f64 {
            self.inner.log_emission(x, &y.1) + self.scale[y.0].ln()
        }
        fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
            self.inner.sample_initial(rng)
        }
        fn sample_transition<R: Rng + ?Sized>(&self, from: &usize, rng: &mut R) -> usize {
            self.inner.sample_transition(from, rng)
        }
    }

    impl FiniteStateModel for Rescaled {
        fn num_states(&self) -> usize {
            self.inner.num_states()
        }
    }

    #[test]
    fn jsd_is_invariant_to_per_site_emission_scale() {
        let inner = random_model(3, 2, 8);
        let ys = [1, 0, 0, 1];
        let y = symbols(&ys);
        let tagged = ObservationRecord::new(ys.iter().enumerate().map(|(t, &s)| (t, Observation::Symbol(s))).collect())
            .unwrap();
        let scaled = Rescaled {
            inner: inner.clone(),
            scale: vec![3.0, 0.01, 250.0, 1e-4],
        };
        for x in all_trajectories(3, 4) {
            let x = Trajectory(x);
            let a = jsd_log_density(&inner, &y, &x).unwrap();
            let b = jsd_log_density(&scaled, &tagged, &x).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_emission_names_site() {
        let m = TabularHmm::new(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            Emission::Table(vec![vec![1.0, 0.0], vec![0.5, 0.5]]),
        )
        .unwrap();
        let y = symbols(&[0, 1, 0]);
        match jsd_log_density(&m, &y, &Trajectory(vec![1, 0, 1])) {
            Err(Error::ZeroEmission { site: 1, state: 0 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            jsd_log_density(&m, &y, &Trajectory(vec![1, 1])),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(mixing_profile(&m, &y, 1), Err(Error::Mixing(_))));
    }

    #[test]
    fn mixing_profile_examples() {
        let m = TabularHmm::<f64>::uniform(2);
        let y = symbols(&[0, 0, 0]);
        let p = mixing_profile(&m, &y, 1).unwrap();
        assert_eq!((p.sigma_minus, p.sigma_plus, p.delta), (1.0, 1.0, 1.0));

        let sticky = TabularHmm::new(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            Emission::Table(vec![vec![1.0], vec![1.0]]),
        )
        .unwrap();
        let p1 = mixing_profile(&sticky, &y, 1).unwrap();
        assert!((p1.sigma_plus - 1.8).abs() < 1e-14);
        assert!((p1.sigma_minus - 0.2).abs() < 1e-14);
        let p2 = mixing_profile(&sticky, &y, 2).unwrap();
        // K · (P²)_{01} = 2 · 0.18
        assert!((p2.sigma_minus - 0.36).abs() < 1e-14);
        assert!(p2.sigma_minus >= p1.sigma_minus);
    }

    #[test]
    fn delta_is_hth_power_of_emission_ratio() {
        let m = TabularHmm::new(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            Emission::Table(vec![vec![0.8, 0.2], vec![0.4, 0.6]]),
        )
        .unwrap();
        let y = symbols(&[0, 1]);
        assert!((mixing_profile(&m, &y, 1).unwrap().delta - 3.0).abs() < 1e-12);
        assert!((mixing_profile(&m, &y, 3).unwrap().delta - 27.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_invalid_models() {
        let bad_row = TabularHmm::new(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.2], vec![0.5, 0.5]],
            Emission::Table(vec![vec![1.0], vec![1.0]]),
        );
        assert!(matches!(bad_row, Err(Error::InvalidModel(msg)) if msg.contains("transition row 0")));
        let bad_init = TabularHmm::new(
            vec![0.6, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            Emission::Table(vec![vec![1.0], vec![1.0]]),
        );
        assert!(matches!(bad_init, Err(Error::InvalidModel(msg)) if msg.contains("initial")));
        assert!(ObservationRecord::<Observation<f64>>::new(vec![]).is_err());
    }

    #[test]
    fn simulation_respects_lengths() {
        let m = random_model(3, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = m.simulate(17, &mut rng);
        assert_eq!(x.len(), 17);
        assert_eq!(y.len(), 17);
        m.check_observations(&y).unwrap();
    }
}
