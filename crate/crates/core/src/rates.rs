//! Wasserstein matrices of block updates and the contraction-rate bounds built
//! from them.
//!
//! Rows index the coordinate whose oscillation is propagated, columns the
//! coordinate it is propagated from; a sweep visiting `J_1, …, J_m` has matrix
//! `W^{J_m} ⋯ W^{J_1}`.

use std::fmt;

use ndarray::Array2;

use crate::blocking::{Block, BlockCover};
use crate::error::{Error, Result};
use crate::hmm::MixingProfile;
use crate::pg::minorisation_bound;
use crate::scalar::Real;
use crate::sweeps::Schedule;

/// Index space of a Wasserstein matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixSystem {
    Original,
    Lumped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinMatrix<S> {
    pub entries: Array2<S>,
    pub system: MatrixSystem,
}

impl<S: Real> WassersteinMatrix<S> {
    pub fn identity(dim: usize, system: MatrixSystem) -> Self {
        WassersteinMatrix {
            entries: Array2::eye(dim),
            system,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.entries[[i, j]]
    }

    /// Entry at `(i, j)`, or zero when the column is absent.
    pub fn get_or_zero(&self, i: usize, j: Option<usize>) -> S {
        j.map_or(S::zero(), |j| self.entries[[i, j]])
    }

    pub fn row_sum(&self, i: usize) -> S {
        self.entries.row(i).sum()
    }

    pub fn row_sums(&self) -> Vec<S> {
        self.entries.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// `‖W‖_∞`, the largest absolute row sum.
    pub fn norm_inf(&self) -> S {
        self.entries
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum())
            .fold(S::zero(), S::max)
    }

    pub fn max_entry(&self) -> S {
        self.entries.iter().copied().fold(S::zero(), S::max)
    }

    pub fn power(&self, k: usize) -> Self {
        let mut out = Self::identity(self.dim(), self.system);
        for _ in 0..k {
            out.entries = out.entries.dot(&self.entries);
        }
        out
    }
}

/// `α = 1 − δ^{(1−h)/h} σ−/σ+`.
pub fn alpha<S: Real>(profile: &MixingProfile<S>) -> S {
    let h = S::lit(profile.h as f64);
    S::one() - profile.delta.powf((S::one() - h) / h) * profile.sigma_minus / profile.sigma_plus
}

/// `α^{⌊n/h⌋}` with the floor taken in integers and `α^0 = 1`.
pub fn alpha_pow<S: Real>(alpha: S, n: usize, h: u32) -> S {
    let e = n / h as usize;
    if e == 0 {
        S::one()
    } else {
        alpha.powi(e as i32)
    }
}

/// Wasserstein matrix of the ideal update of `block` in a length-`len` system.
pub fn ideal_block_wasserstein<S: Real>(alpha: S, h: u32, block: Block, len: usize) -> WassersteinMatrix<S> {
    let mut w = WassersteinMatrix::identity(len, MatrixSystem::Original);
    for i in block.sites() {
        w.entries[[i, i]] = S::zero();
        if let Some(j) = block.left_boundary() {
            w.entries[[i, j]] = alpha_pow(alpha, i - j, h);
        }
        if let Some(j) = block.right_boundary(len) {
            w.entries[[i, j]] = alpha_pow(alpha, j - i, h);
        }
    }
    w
}

/// Wasserstein matrix of the ideal update of lumped block `k` (0-based) of the
/// `2m−1`-site lumped system of a common `(L, p)` cover.
pub fn lumped_block_wasserstein<S: Real>(
    alpha: S,
    h: u32,
    l: usize,
    p: usize,
    m: usize,
    k: usize,
) -> Result<WassersteinMatrix<S>> {
    if k >= m {
        return Err(Error::BlockIndex { index: k, count: m });
    }
    let dim = 2 * m - 1;
    let near = alpha_pow(alpha, 1, h);
    let mid = alpha_pow(alpha, p + 1, h);
    let far = alpha_pow(alpha, l - p + 1, h);
    let left = (k > 0).then(|| 2 * k - 2);
    let right = (k + 1 < m).then(|| 2 * k + 2);
    let mut w = WassersteinMatrix::identity(dim, MatrixSystem::Lumped);
    for (offset, (a, b)) in [(near, far), (mid, mid), (far, near)].into_iter().enumerate() {
        let Some(row) = (2 * k + offset).checked_sub(1) else { continue };
        if row >= dim {
            continue;
        }
        w.entries[[row, row]] = S::zero();
        if let Some(j) = left {
            w.entries[[row, j]] = a;
        }
        if let Some(j) = right {
            w.entries[[row, j]] = b;
        }
    }
    Ok(w)
}

/// Adds `epsilon` on rows `rows` × columns `cols`.
pub fn perturb<S: Real>(w: &WassersteinMatrix<S>, epsilon: S, rows: Block, cols: Block) -> WassersteinMatrix<S> {
    let mut out = w.clone();
    for i in rows.sites() {
        for j in cols.sites() {
            out.entries[[i, j]] += epsilon;
        }
    }
    out
}

/// Perturbs every block matrix of `cover` on its `J × J_+` window.
pub fn perturb_all<S: Real>(cover: &BlockCover, matrices: &[WassersteinMatrix<S>], epsilon: S) -> Vec<WassersteinMatrix<S>> {
    cover
        .blocks()
        .iter()
        .zip(matrices)
        .map(|(b, w)| perturb(w, epsilon, *b, b.extended(cover.len())))
        .collect()
}

/// Ideal matrices of every block of a cover in the original system.
pub fn ideal_cover_matrices<S: Real>(alpha: S, h: u32, cover: &BlockCover) -> Vec<WassersteinMatrix<S>> {
    cover
        .blocks()
        .iter()
        .map(|b| ideal_block_wasserstein(alpha, h, *b, cover.len()))
        .collect()
}

/// Ideal matrices of every lumped block of a common `(L, p)` cover.
pub fn lumped_cover_matrices<S: Real>(alpha: S, h: u32, l: usize, p: usize, m: usize) -> Result<Vec<WassersteinMatrix<S>>> {
    (0..m).map(|k| lumped_block_wasserstein(alpha, h, l, p, m, k)).collect()
}

fn check_matrices<S: Real>(cover: &BlockCover, matrices: &[WassersteinMatrix<S>]) -> Result<()> {
    if matrices.len() != cover.num_blocks() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrices for {} blocks",
            matrices.len(),
            cover.num_blocks()
        )));
    }
    if let Some(w) = matrices.iter().find(|w| w.dim() != cover.len() || w.entries.ncols() != cover.len()) {
        return Err(Error::DimensionMismatch(format!(
            "matrix of dimension {} for a cover of {} sites",
            w.dim(),
            cover.len()
        )));
    }
    Ok(())
}

/// Outcome of checking the ideal contraction condition.
#[derive(Debug, Clone, PartialEq)]
pub struct A1Check<S> {
    pub lambda: S,
    pub holds: bool,
    /// Block and site attaining the maximum.
    pub worst: Option<(usize, usize)>,
}

impl<S: Real> fmt::Display for A1Check<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.holds, self.worst) {
            (true, _) => write!(f, "lambda = {} < 1", self.lambda),
            (false, Some((k, i))) => write!(
                f,
                "lambda = {} >= 1, attained in block {} at site {}",
                self.lambda,
                k + 1,
                i + 1
            ),
            (false, None) => write!(f, "lambda = {} >= 1", self.lambda),
        }
    }
}

/// `λ = max_J max_{i ∈ J ∩ ∂} Σ_{j ∈ ∂J} W^J_{i,j}`, where `∂` is the set of all
/// boundary points of the cover.
pub fn verify_a1<S: Real>(cover: &BlockCover, matrices: &[WassersteinMatrix<S>]) -> Result<A1Check<S>> {
    check_matrices(cover, matrices)?;
    let boundaries = cover.all_boundaries();
    let mut lambda = S::zero();
    let mut worst = None;
    for (k, (b, w)) in cover.blocks().iter().zip(matrices).enumerate() {
        let cols: Vec<usize> = [b.left_boundary(), b.right_boundary(cover.len())].into_iter().flatten().collect();
        for &i in boundaries.iter().filter(|&&i| b.contains(i)) {
            let s: S = cols.iter().map(|&j| w.get(i, j)).sum();
            if worst.is_none() || s > lambda {
                lambda = s;
                worst = Some((k, i));
            }
        }
    }
    Ok(A1Check {
        lambda,
        holds: lambda < S::one(),
        worst,
    })
}

/// Per-sweep decay and norm bound of the ideal sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealRate<S> {
    pub lambda: S,
    pub decay: S,
    pub norm_bound: S,
    pub applicable: bool,
}

/// Ideal-sampler rates: `λ²` and `‖𝒲‖ ≤ 2` for the parallel schedule; `β` and
/// `‖𝒲‖ ≤ 1 + λ` for left-to-right.
pub fn rate_ideal<S: Real>(cover: &BlockCover, matrices: &[WassersteinMatrix<S>], schedule: Schedule) -> Result<IdealRate<S>> {
    let a1 = verify_a1(cover, matrices)?;
    let lambda = a1.lambda;
    let (decay, norm_bound) = match schedule {
        Schedule::Parallel => (lambda * lambda, S::lit(2.0)),
        Schedule::LeftToRight => (lr_beta(cover, matrices, lambda), S::one() + lambda),
        other => {
            return Err(Error::Config(format!(
                "ideal rate bounds are stated for lr and par schedules, not {other}"
            )))
        }
    };
    Ok(IdealRate {
        lambda,
        decay,
        norm_bound,
        applicable: a1.holds && cover.validate().is_empty(),
    })
}

/// `β = max_{k ≥ 2} λ a_k + b_k` with `a_k = W^{J_k}_{∂+J_{k−1}, ∂−J_k}` and
/// `b_k = W^{J_k}_{∂+J_{k−1}, ∂+J_k}`.
pub fn lr_beta<S: Real>(cover: &BlockCover, matrices: &[WassersteinMatrix<S>], lambda: S) -> S {
    let len = cover.len();
    let blocks = cover.blocks();
    let mut beta = S::zero();
    for k in 1..blocks.len() {
        let Some(row) = blocks[k - 1].right_boundary(len) else { continue };
        let w = &matrices[k];
        let a = w.get_or_zero(row, blocks[k].left_boundary());
        let b = w.get_or_zero(row, blocks[k].right_boundary(len));
        beta = beta.max(lambda * a + b);
    }
    beta
}

/// Composes block matrices for the visit order `order`: `W^{J_last} ⋯ W^{J_first}`.
pub fn compose<S: Real>(matrices: &[WassersteinMatrix<S>], order: &[usize]) -> Result<WassersteinMatrix<S>> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no matrices to compose".into()))?;
    let dim = first.dim();
    let mut out = WassersteinMatrix::identity(dim, first.system);
    for &k in order {
        let w = matrices.get(k).ok_or(Error::BlockIndex {
            index: k,
            count: matrices.len(),
        })?;
        if w.dim() != dim || w.entries.ncols() != dim {
            return Err(Error::DimensionMismatch(format!("matrix {k} has dimension {}, expected {dim}", w.dim())));
        }
        out.entries = w.entries.dot(&out.entries);
    }
    Ok(out)
}

/// Matrix of one complete sweep under `schedule` (forward order).
pub fn sweep_matrix<S: Real>(matrices: &[WassersteinMatrix<S>], schedule: Schedule) -> Result<WassersteinMatrix<S>> {
    compose(matrices, &schedule.forward_order(matrices.len()))
}

/// `‖W^{J_last} ⋯ W^{J_first}‖_∞`.
pub fn sweep_matrix_norm<S: Real>(matrices: &[WassersteinMatrix<S>], order: &[usize]) -> Result<S> {
    Ok(compose(matrices, order)?.norm_inf())
}

/// Total-variation envelope `T λ^{k−1} ‖𝒲‖_∞` after `k ≥ 1` sweeps; `1` at `k = 0`.
pub fn envelope<S: Real>(len: usize, lambda: S, norm: S, k: usize) -> S {
    if k == 0 {
        return S::one();
    }
    S::from_usize_lossy(len) * lambda.powi(k as i32 - 1) * norm
}

/// Reasons a reported bound does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateFlag {
    /// The ideal condition `λ < 1` fails.
    IdealLambda,
    /// `2α^{⌊(p+1)/h⌋} ≥ 1`; no bound in the report applies.
    LumpedLambda,
    /// `2ε + α^{⌊(p+1)/h⌋} ≥ 1`; the left-to-right PG bound is not evaluated.
    LrSideCondition,
    /// The parallel PG bound is at least 1.
    ParVacuous,
    /// The left-to-right PG bound is at least 1.
    LrVacuous,
    /// Zero overlap; lumping and the PG bounds are undefined.
    ZeroOverlap,
    /// `L ≤ 2p`; non-neighbouring blocks touch.
    WideOverlap,
    /// The proposal is not the bootstrap; `ε` is not guaranteed.
    EpsilonNotGuaranteed,
}

impl RateFlag {
    pub fn token(self) -> &'static str {
        match self {
            RateFlag::IdealLambda => "ideal_lambda>=1",
            RateFlag::LumpedLambda => "lumped_lambda>=1",
            RateFlag::LrSideCondition => "lr_side_condition",
            RateFlag::ParVacuous => "par_bound>=1",
            RateFlag::LrVacuous => "lr_bound>=1",
            RateFlag::ZeroOverlap => "p=0",
            RateFlag::WideOverlap => "L<=2p",
            RateFlag::EpsilonNotGuaranteed => "epsilon_not_guaranteed",
        }
    }
}

impl fmt::Display for RateFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Every closed-form rate quantity for a common `(L, p)` cover.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport<S> {
    pub alpha: S,
    pub h: u32,
    pub l: usize,
    pub p: usize,
    pub n: usize,
    pub epsilon: S,
    pub lambda_ideal: S,
    pub beta: S,
    pub lambda_lumped: S,
    pub w_hat: S,
    pub lambda_pg_par: S,
    /// `None` when the side condition fails.
    pub lambda_pg_lr: Option<S>,
    pub flags: Vec<RateFlag>,
}

impl<S: Real> RateReport<S> {
    pub const CSV_HEADER: &'static str =
        "alpha,h,L,p,N,epsilon,lambda_ideal,beta,lambda_lumped,w_hat,lambda_pg_par,lambda_pg_lr,flags";

    pub fn has(&self, flag: RateFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn flags_field(&self) -> String {
        self.flags.iter().map(|f| f.token()).collect::<Vec<_>>().join(";")
    }

    pub fn csv_row(&self) -> String {
        let lr = self.lambda_pg_lr.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.alpha,
            self.h,
            self.l,
            self.p,
            self.n,
            self.epsilon,
            self.lambda_ideal,
            self.beta,
            self.lambda_lumped,
            self.w_hat,
            self.lambda_pg_par,
            lr,
            self.flags_field()
        )
    }

    /// Aligned `name = value` lines.
    pub fn to_text(&self) -> String {
        let lr = self
            .lambda_pg_lr
            .map(|v| format!("{v:.12}"))
            .unwrap_or_else(|| "not evaluated".into());
        let flags = if self.flags.is_empty() {
            "none".to_string()
        } else {
            self.flags_field()
        };
        let rows: [(&str, String); 13] = [
            ("alpha", format!("{:.12}", self.alpha)),
            ("h", self.h.to_string()),
            ("L", self.l.to_string()),
            ("p", self.p.to_string()),
            ("N", self.n.to_string()),
            ("epsilon", format!("{:.12}", self.epsilon)),
            ("lambda_ideal", format!("{:.12}", self.lambda_ideal)),
            ("beta", format!("{:.12}", self.beta)),
            ("lambda_lumped", format!("{:.12}", self.lambda_lumped)),
            ("w_hat", format!("{:.12}", self.w_hat)),
            ("lambda_pg_par", format!("{:.12}", self.lambda_pg_par)),
            ("lambda_pg_lr", lr),
            ("flags", flags),
        ];
        rows.iter().map(|(k, v)| format!("{k:<14} = {v}\n")).collect()
    }
}

/// Rate quantities for a common `(L, p)` cover at a given `ε`.
pub fn rate_common_with_epsilon<S: Real>(alpha: S, h: u32, l: usize, p: usize, n: usize, epsilon: S) -> RateReport<S> {
    let one = S::one();
    let two = S::lit(2.0);
    let a_p1 = alpha_pow(alpha, p + 1, h);
    let a_lp = alpha_pow(alpha, l.saturating_sub(p), h);
    let a_lp1 = alpha_pow(alpha, l - p + 1, h);
    let lambda_ideal = a_lp + a_p1;
    let beta = lambda_ideal * a_p1 + a_lp;
    let lambda = two * a_p1;
    let w_hat = alpha_pow(alpha, 1, h) + a_lp1;
    let w1 = w_hat.max(one);
    let eps = epsilon;
    let par = lambda * w1 + eps * (two * lambda + S::lit(25.0) * eps + S::lit(8.0) * w1);
    let lr_den = one - two * eps - a_p1;
    let lr = (lr_den > S::zero())
        .then(|| lambda + a_lp1 + two * eps * (S::lit(3.0) * w1 + one + lambda) / lr_den);

    let mut flags = Vec::new();
    if p == 0 {
        flags.push(RateFlag::ZeroOverlap);
    }
    if l <= 2 * p {
        flags.push(RateFlag::WideOverlap);
    }
    if lambda_ideal >= one {
        flags.push(RateFlag::IdealLambda);
    }
    if lambda >= one {
        flags.push(RateFlag::LumpedLambda);
    }
    if par >= one {
        flags.push(RateFlag::ParVacuous);
    }
    match lr {
        None => flags.push(RateFlag::LrSideCondition),
        Some(v) if v >= one => flags.push(RateFlag::LrVacuous),
        Some(_) => {}
    }
    RateReport {
        alpha,
        h,
        l,
        p,
        n,
        epsilon,
        lambda_ideal,
        beta,
        lambda_lumped: lambda,
        w_hat,
        lambda_pg_par: par,
        lambda_pg_lr: lr,
        flags,
    }
}

/// Rate report for the bootstrap Particle Gibbs sampler on a common `(L, p)` cover
/// with `N` particles.
pub fn rate_pg_common<S: Real>(profile: &MixingProfile<S>, l: usize, p: usize, n: usize) -> Result<RateReport<S>> {
    if p >= l {
        return Err(Error::InvalidCover(format!("overlap p={p} must be smaller than L={l}")));
    }
    if n < 2 {
        return Err(Error::TooFewParticles(n));
    }
    let eps = minorisation_bound(profile, n, l).epsilon;
    Ok(rate_common_with_epsilon(alpha(profile), profile.h, l, p, n, eps))
}

/// Site classes of a cover with at most two blocks per site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteClass {
    /// Only in block `k` (0-based).
    Exclusive(usize),
    /// In blocks `k − 1` and `k`.
    Overlap(usize),
}

/// Classifies every site of a B1/B2 cover.
pub fn site_classes(cover: &BlockCover) -> Result<Vec<SiteClass>> {
    (0..cover.len())
        .map(|i| {
            let owners: Vec<usize> = (0..cover.num_blocks()).filter(|&k| cover.blocks()[k].contains(i)).collect();
            match owners.as_slice() {
                [k] => Ok(SiteClass::Exclusive(*k)),
                [a, b] if b == &(a + 1) => Ok(SiteClass::Overlap(*b)),
                [] => Err(Error::InvalidCover(format!("site {} is not covered", i + 1))),
                _ => Err(Error::InvalidCover(format!(
                    "site {} lies in blocks {:?}; expected one block or two neighbours",
                    i + 1,
                    owners.iter().map(|k| k + 1).collect::<Vec<_>>()
                ))),
            }
        })
        .collect()
}

fn boundary_entries<S: Real>(cover: &BlockCover, w: &WassersteinMatrix<S>, k: usize, i: usize) -> (S, S) {
    let b = cover.blocks()[k];
    (
        w.get_or_zero(i, b.left_boundary()),
        w.get_or_zero(i, b.right_boundary(cover.len())),
    )
}

/// Per-site bounds of the general parallel-schedule theorem.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralParBound<S> {
    pub lambda: S,
    pub w_hat: S,
    pub max_len: usize,
    pub epsilon: S,
    pub per_site: Vec<S>,
}

/// Row-sum bounds on the perturbed parallel sweep matrix, from the ideal block
/// matrices `matrices` and the common perturbation `epsilon`.
pub fn rate_pg_general_par<S: Real>(cover: &BlockCover, matrices: &[WassersteinMatrix<S>], epsilon: S) -> Result<GeneralParBound<S>> {
    check_matrices(cover, matrices)?;
    cover.ensure_valid()?;
    let classes = site_classes(cover)?;
    let (max_len, _) = cover.max_len_and_overlap();
    let mut lambda = S::zero();
    let mut w_hat = S::zero();
    for (k, b) in cover.blocks().iter().enumerate() {
        for i in b.sites() {
            let (lw, rw) = boundary_entries(cover, &matrices[k], k, i);
            w_hat = w_hat.max(lw + rw);
            if classes[i] == SiteClass::Exclusive(k) {
                lambda = lambda.max(lw + rw);
            }
        }
    }
    let one = S::one();
    let two = S::lit(2.0);
    let l = S::from_usize_lossy(max_len);
    let l2 = (l + two) * (l + two);
    let w1 = w_hat.max(one);
    let eps = epsilon;
    let per_site = classes
        .iter()
        .map(|c| match *c {
            SiteClass::Exclusive(k) if k % 2 == 1 => {
                lambda * lambda + eps * (lambda * (l + S::lit(4.0)) + eps * l2 + l * w1)
            }
            SiteClass::Exclusive(_) => lambda + eps * (l + two),
            SiteClass::Overlap(_) => {
                lambda * w_hat + eps * (w_hat * (l + two) + two * lambda + eps * l2 + l * w1)
            }
        })
        .collect();
    Ok(GeneralParBound {
        lambda,
        w_hat,
        max_len,
        epsilon,
        per_site,
    })
}

/// Per-site bounds of the general left-to-right theorem.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralLrBound<S> {
    pub lambda: S,
    pub beta: S,
    pub w_hat: S,
    pub w_bar: S,
    pub max_len: usize,
    pub max_overlap: usize,
    pub epsilon: S,
    /// `None` when `W̄ + (L₁+1)ε ≥ 1`.
    pub c: Option<S>,
    pub per_site: Option<Vec<S>>,
}

impl<S> GeneralLrBound<S> {
    pub fn applicable(&self) -> bool {
        self.per_site.is_some()
    }
}

/// Row-sum bounds on the perturbed left-to-right sweep matrix.
pub fn rate_pg_general_lr<S: Real>(cover: &BlockCover, matrices: &[WassersteinMatrix<S>], epsilon: S) -> Result<GeneralLrBound<S>> {
    check_matrices(cover, matrices)?;
    cover.ensure_valid()?;
    let classes = site_classes(cover)?;
    let (max_len, max_overlap) = cover.max_len_and_overlap();
    let one = S::one();
    let blocks = cover.blocks();
    let mut lambda = S::zero();
    let mut w_hat = S::zero();
    for (k, b) in blocks.iter().enumerate() {
        for i in b.sites() {
            let (lw, rw) = boundary_entries(cover, &matrices[k], k, i);
            w_hat = w_hat.max(lw + rw);
            if classes[i] == SiteClass::Exclusive(k) {
                lambda = lambda.max(rw / (one - lw));
            }
        }
    }
    let mut beta = S::zero();
    let mut w_bar = S::zero();
    for k in 1..blocks.len() {
        for i in blocks[k].sites() {
            let (lw, rw) = boundary_entries(cover, &matrices[k], k, i);
            if blocks[k - 1].contains(i) {
                beta = beta.max(lambda * lw + rw);
            } else {
                w_bar = w_bar.max(lw);
            }
        }
    }
    let eps = epsilon;
    let l1 = S::from_usize_lossy(max_overlap);
    let den = one - (l1 + one) * eps - w_bar;
    let (c, per_site) = if w_bar + (l1 + one) * eps < one {
        let c = (S::from_usize_lossy(max_len) * (w_hat * lambda.max(one)).max(one) + one + lambda) / den;
        let sites = classes
            .iter()
            .map(|cl| match cl {
                SiteClass::Exclusive(_) => lambda + c * eps,
                SiteClass::Overlap(_) => beta + S::lit(2.0) * c * eps,
            })
            .collect();
        (Some(c), Some(sites))
    } else {
        (None, None)
    };
    Ok(GeneralLrBound {
        lambda,
        beta,
        w_hat,
        w_bar,
        max_len,
        max_overlap,
        epsilon,
        c,
        per_site,
    })
}
