use blockpg::exact::DEFAULT_STATE_CAP;
use blockpg::{Block, BlockCover, Hmm, ModelSpec, Observations, Schedule};

use crate::config::{Config, CoverConfig, KernelKind};

/// What a subcommand needs from the config beyond what validation always checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Nothing,
    Rates,
    Chain,
    Stability,
}

/// A config that passed validation, with its model, observations and cover built.
pub struct Setup {
    pub cfg: Config,
    pub spec: Option<ModelSpec>,
    pub model: Option<Hmm>,
    pub obs: Option<Observations>,
    pub cover: Option<BlockCover>,
    pub schedule: Schedule,
}

impl Setup {
    pub fn model(&self) -> &Hmm {
        self.model.as_ref().expect("validated")
    }

    pub fn obs(&self) -> &Observations {
        self.obs.as_ref().expect("validated")
    }

    pub fn cover(&self) -> &BlockCover {
        self.cover.as_ref().expect("validated")
    }
}

fn cover_len(c: &CoverConfig) -> Option<usize> {
    c.t.or_else(|| c.blocks.as_ref().and_then(|b| b.iter().map(|x| x[1]).max()))
}

fn build_cover(c: &CoverConfig, obs_len: Option<usize>, issues: &mut Vec<String>) -> Option<BlockCover> {
    let len = match (c.t, obs_len) {
        (Some(t), Some(n)) if t != n => {
            issues.push(format!("cover: T={t} but the observation record has length {n}"));
            return None;
        }
        (Some(t), _) => t,
        (None, Some(n)) => n,
        (None, None) => match cover_len(c) {
            Some(t) => t,
            None => {
                issues.push("cover: T is unknown; give cover.T, data.length or observations".into());
                return None;
            }
        },
    };
    if let Some(blocks) = &c.blocks {
        if c.l.is_some() || c.p.is_some() {
            issues.push("cover: give either blocks or L and p, not both".into());
            return None;
        }
        let mut out = Vec::with_capacity(blocks.len());
        for (k, [a, b]) in blocks.iter().copied().enumerate() {
            if a == 0 || a > b {
                issues.push(format!("cover: block {} = [{a}, {b}] is not a 1-based interval", k + 1));
                return None;
            }
            out.push(Block::new(a - 1, b - 1));
        }
        let cover = match BlockCover::from_blocks(len, out) {
            Ok(c) => c,
            Err(e) => {
                issues.push(format!("cover: {e}"));
                return None;
            }
        };
        let violations = cover.validate();
        if violations.is_empty() {
            Some(cover)
        } else {
            issues.extend(violations.iter().map(|v| format!("cover violates {v}")));
            None
        }
    } else {
        let (Some(l), Some(p)) = (c.l, c.p) else {
            issues.push("cover: give either blocks or both L and p".into());
            return None;
        };
        match BlockCover::common(len, l, p) {
            Ok(c) => Some(c),
            Err(e) => {
                issues.push(format!("cover: {e}"));
                None
            }
        }
    }
}

/// Checks every part of the config and builds what the subcommand needs.
/// Returns the list of problems found when any check fails.
pub fn validate(cfg: Config, needs: Needs) -> Result<Setup, Vec<String>> {
    let mut issues = Vec::new();
    let schedule = match cfg.sampler.schedule.parse::<Schedule>() {
        Ok(s) => s,
        Err(e) => {
            issues.push(format!("sampler: {e}"));
            Schedule::LeftToRight
        }
    };
    if cfg.threads == 0 {
        issues.push("threads must be at least 1".into());
    }
    if cfg.cap_states == 0 {
        issues.push(format!("cap_states must be positive (default {DEFAULT_STATE_CAP})"));
    }
    if cfg.sampler.kernel == KernelKind::Pg && cfg.sampler.particles < 2 {
        issues.push(format!("sampler: particle Gibbs needs N >= 2, got {}", cfg.sampler.particles));
    }
    if cfg.sampler.replications == 0 {
        issues.push("sampler: replications must be at least 1".into());
    }

    let spec = match &cfg.model {
        Some(path) => match ModelSpec::load(path) {
            Ok(s) => Some(s),
            Err(e) => {
                issues.push(format!("model: {e}"));
                None
            }
        },
        None => None,
    };
    let model = spec.as_ref().and_then(|s| match s.model::<f64>() {
        Ok(m) => Some(m),
        Err(e) => {
            issues.push(format!("model: {e}"));
            None
        }
    });
    let obs = match (&spec, &model) {
        (Some(spec), Some(_)) => match spec.observations::<f64>() {
            Ok(Some(o)) => Some(o),
            Ok(None) => {
                let len = cfg
                    .data
                    .as_ref()
                    .and_then(|d| d.length)
                    .or_else(|| cfg.cover.as_ref().and_then(cover_len));
                let seed = cfg.data.as_ref().and_then(|d| d.seed).unwrap_or(0);
                match len {
                    Some(0) => {
                        issues.push("data: length must be at least 1".into());
                        None
                    }
                    Some(len) => spec.simulate::<f64>(len, seed).ok(),
                    None => None,
                }
            }
            Err(e) => {
                issues.push(format!("observations: {e}"));
                None
            }
        },
        _ => None,
    };
    if let (Some(o), Some(d)) = (&obs, cfg.data.as_ref().and_then(|d| d.length)) {
        if o.len() != d && spec.as_ref().is_some_and(|s| s.observations.is_some()) {
            issues.push(format!(
                "data: length {d} conflicts with the {} observations in the model file",
                o.len()
            ));
        }
    }
    let cover = cfg
        .cover
        .as_ref()
        .and_then(|c| build_cover(c, obs.as_ref().map(|o| o.len()), &mut issues));

    if let Some(r) = &cfg.rates {
        if r.h == 0 {
            issues.push("rates: h must be at least 1".into());
        }
        if let Some(a) = r.alpha {
            if !(0.0..1.0).contains(&a) {
                issues.push(format!("rates: alpha must lie in [0, 1), got {a}"));
            }
        }
        if let Some(c) = r.c {
            if !(c > 0.0 && c <= 1.0) {
                issues.push(format!("rates: c must lie in (0, 1], got {c}"));
            }
        }
        for n in r.n.as_ref().map(|n| n.values()).unwrap_or_default() {
            if n < 2 {
                issues.push(format!("rates: N must be at least 2, got {n}"));
            }
        }
        for l in r.l.as_ref().map(|n| n.values()).unwrap_or_default() {
            for p in r.p.as_ref().map(|n| n.values()).unwrap_or_default() {
                if p >= l {
                    issues.push(format!("rates: need p < L, got L={l}, p={p}"));
                }
            }
        }
    }
    if let Some(s) = &cfg.stability {
        if let Err(e) = s.schedule.parse::<Schedule>() {
            issues.push(format!("stability: {e}"));
        }
        if s.n < 2 {
            issues.push(format!("stability: particle Gibbs needs N >= 2, got {}", s.n));
        }
        if s.replications == 0 || s.lengths.is_empty() {
            issues.push("stability: need at least one replication and one T".into());
        }
        for &t in &s.lengths {
            if let Err(e) = BlockCover::common(t, s.l, s.p) {
                issues.push(format!("stability: {e}"));
            }
        }
    }
    for name in &cfg.contraction.schedules {
        match name.parse::<Schedule>() {
            Ok(Schedule::LeftToRight | Schedule::Parallel) => {}
            Ok(other) => issues.push(format!("contraction: schedule {other} has no envelope; use lr or par")),
            Err(e) => issues.push(format!("contraction: {e}")),
        }
    }
    if cfg.contraction.h == 0 {
        issues.push("contraction: h must be at least 1".into());
    }

    match needs {
        Needs::Nothing => {}
        Needs::Rates => {
            let explicit = cfg.rates.as_ref().is_some_and(|r| r.alpha.is_some() && r.c.is_some());
            if !explicit && cfg.model.is_none() {
                issues.push("rates: give a model or both rates.alpha and rates.c".into());
            }
            if !explicit && model.is_some() && obs.is_none() {
                issues.push("rates: the model has no observations; give data.length or cover.T".into());
            }
        }
        Needs::Chain => {
            if cfg.model.is_none() {
                issues.push("model: a model file is required".into());
            }
            if cfg.cover.is_none() {
                issues.push("cover: a cover is required".into());
            }
        }
        Needs::Stability => {
            if cfg.model.is_none() {
                issues.push("model: a model file is required".into());
            }
            if cfg.stability.is_none() {
                issues.push("stability: the [stability] section is required".into());
            }
        }
    }
    if needs == Needs::Chain && model.is_some() && cfg.cover.is_some() && obs.is_none() {
        issues.push("observations: none in the model file and no length to simulate".into());
    }

    if issues.is_empty() {
        Ok(Setup {
            cfg,
            spec,
            model,
            obs,
            cover,
            schedule,
        })
    } else {
        Err(issues)
    }
}
