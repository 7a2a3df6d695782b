use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPool;
use serde::Serialize;

use blockpg::error::Error;
use blockpg::exact::ExactKernel;
use blockpg::experiments::{
    contraction, exact_invariance, statistical_invariance, stability, write_contraction_csv, write_stability_csv,
    StabilityConfig,
};
use blockpg::hmm::mixing_profile;
use blockpg::pg::{conditional_smc, epsilon, minorisation_bound};
use blockpg::rates::{alpha, rate_common_with_epsilon, RateFlag, RateReport};
use blockpg::sweeps::{block_rng, prior_init, replication_seed, run_chain, write_summary_csv, Autocorrelation, RunOptions};
use blockpg::{Block, BlockSampler, Bootstrap, Hmm, IdealKernel, Observation, ObservationRecord, ParticleGibbs, Schedule, UniformProposal};

use crate::config::{InvarianceMode, KernelKind, ProposalName, RatesConfig};
use crate::setup::Setup;

/// The block kernels selectable from a config.
pub enum AnySampler {
    Ideal(IdealKernel),
    Bootstrap(ParticleGibbs<Bootstrap>),
    Uniform(ParticleGibbs<UniformProposal>),
}

impl AnySampler {
    pub fn new(kernel: KernelKind, proposal: ProposalName, particles: usize) -> Self {
        match (kernel, proposal) {
            (KernelKind::Ideal, _) => AnySampler::Ideal(IdealKernel),
            (KernelKind::Pg, ProposalName::Bootstrap) => AnySampler::Bootstrap(ParticleGibbs {
                particles,
                proposal: Bootstrap,
            }),
            (KernelKind::Pg, ProposalName::Uniform) => AnySampler::Uniform(ParticleGibbs {
                particles,
                proposal: UniformProposal,
            }),
        }
    }
}

impl BlockSampler<Hmm> for AnySampler {
    fn update(
        &self,
        model: &Hmm,
        obs: &ObservationRecord<Observation<f64>>,
        x: &[usize],
        block: Block,
        rng: &mut ChaCha8Rng,
    ) -> blockpg::Result<Vec<usize>> {
        match self {
            AnySampler::Ideal(k) => k.update(model, obs, x, block, rng),
            AnySampler::Bootstrap(k) => k.update(model, obs, x, block, rng),
            AnySampler::Uniform(k) => k.update(model, obs, x, block, rng),
        }
    }
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn validate_report(s: &Setup) -> String {
    let mut lines = vec!["config is valid".to_string()];
    if let Some(m) = &s.model {
        lines.push(format!("  model: K = {}", blockpg::FiniteStateModel::num_states(m)));
    }
    if let Some(o) = &s.obs {
        lines.push(format!("  observations: T = {}", o.len()));
    }
    if let Some(c) = &s.cover {
        lines.push(format!("  cover: {c}"));
    }
    lines.push(format!("  schedule: {}", s.schedule));
    lines.join("\n")
}

fn default_rates() -> RatesConfig {
    RatesConfig {
        h: 1,
        alpha: None,
        c: None,
        l: None,
        p: None,
        n: None,
    }
}

/// Rate reports over the configured grid; also written to `rates.csv`.
pub fn rates(s: &Setup, out: &Path) -> Result<Vec<RateReport<f64>>> {
    let r = s.cfg.rates.clone().unwrap_or_else(default_rates);
    let shape = s.cover.as_ref().and_then(|c| c.common_shape());
    let ls = match (&r.l, shape) {
        (Some(l), _) => l.values(),
        (None, Some((l, _))) => vec![l],
        (None, None) => bail!("rates: give rates.L or a common cover"),
    };
    let ps = match (&r.p, shape) {
        (Some(p), _) => p.values(),
        (None, Some((_, p))) => vec![p],
        (None, None) => bail!("rates: give rates.p or a common cover"),
    };
    let ns = r.n.as_ref().map(|n| n.values()).unwrap_or_else(|| vec![s.cfg.sampler.particles]);
    let profile = if r.alpha.is_some() && r.c.is_some() {
        None
    } else {
        let model = s.model.as_ref().ok_or_else(|| anyhow!("rates: no model"))?;
        let obs = s.obs.as_ref().ok_or_else(|| anyhow!("rates: no observations"))?;
        Some(mixing_profile(model, obs, r.h)?)
    };
    let mut reports = Vec::new();
    for &l in &ls {
        for &p in &ps {
            if p >= l {
                continue;
            }
            for &n in &ns {
                let a = r.alpha.unwrap_or_else(|| alpha(profile.as_ref().expect("profile")));
                let c = r
                    .c
                    .unwrap_or_else(|| minorisation_bound(profile.as_ref().expect("profile"), n, l).c);
                let mut report = rate_common_with_epsilon(a, r.h, l, p, n, epsilon(c, n, l));
                if s.cfg.sampler.proposal != ProposalName::Bootstrap {
                    report.flags.push(RateFlag::EpsilonNotGuaranteed);
                }
                reports.push(report);
            }
        }
    }
    let mut w = create(out, "rates.csv")?;
    writeln!(w, "{}", RateReport::<f64>::CSV_HEADER)?;
    for rep in &reports {
        writeln!(w, "{}", rep.csv_row())?;
    }
    w.flush()?;
    Ok(reports)
}

#[derive(Debug, Serialize)]
struct Timing {
    threads: usize,
    schedule: String,
    sweeps: usize,
    replications: usize,
    sweep_seconds: f64,
    phase_seconds: Vec<f64>,
}

/// Runs the configured chain(s), writing `summary.csv`, `timing.toml`, and
/// `trace.csv` / `particles.csv` when requested.
pub fn sample(s: &Setup, out: &Path, pool: &ThreadPool) -> Result<String> {
    let cfg = &s.cfg;
    let model = s.model();
    let obs = s.obs();
    let cover = s.cover();
    let sampler = AnySampler::new(cfg.sampler.kernel, cfg.sampler.proposal, cfg.sampler.particles);
    let options = RunOptions {
        burn_in: cfg.sampler.burn_in,
        record_trace: cfg.trace,
        ..RunOptions::default()
    };
    let reps = cfg.sampler.replications;
    let mut acf = Autocorrelation::new(obs.len(), &options.lags);
    let mut updates = vec![0u64; obs.len()];
    let mut counted = 0usize;
    let mut timing = Timing {
        threads: cfg.threads,
        schedule: s.schedule.to_string(),
        sweeps: cfg.sampler.sweeps,
        replications: reps,
        sweep_seconds: 0.0,
        phase_seconds: Vec::new(),
    };
    for r in 0..reps {
        let seed = if reps == 1 {
            cfg.seed
        } else {
            replication_seed(cfg.seed, r as u64)
        };
        let init = prior_init(model, obs.len(), seed);
        if r == 0 && cfg.dump_particles {
            dump_particles(s, &init.0, seed, out)?;
        }
        let opts = RunOptions {
            record_trace: options.record_trace && r == 0,
            ..options.clone()
        };
        let trace = run_chain(
            model,
            obs,
            cover,
            s.schedule,
            &sampler,
            init,
            cfg.sampler.sweeps,
            seed,
            &opts,
            Some(pool),
        )?;
        acf.merge(&trace.autocorrelation);
        for (u, c) in updates.iter_mut().zip(&trace.update_counts) {
            *u += c;
        }
        counted += trace.counted;
        timing.sweep_seconds += trace.sweep_seconds;
        if timing.phase_seconds.len() < trace.phase_seconds.len() {
            timing.phase_seconds.resize(trace.phase_seconds.len(), 0.0);
        }
        for (a, t) in timing.phase_seconds.iter_mut().zip(&trace.phase_seconds) {
            *a += t;
        }
        if r == 0 && cfg.trace {
            let mut w = create(out, "trace.csv")?;
            trace.write_trace_csv(&mut w)?;
            w.flush()?;
            if trace.trace_truncated {
                eprintln!("warning: trace truncated at the memory cap");
            }
        }
    }
    let mut w = create(out, "summary.csv")?;
    write_summary_csv(
        &mut w,
        obs.len(),
        |i| {
            if counted == 0 {
                f64::NAN
            } else {
                updates[i] as f64 / counted as f64
            }
        },
        &acf,
    )?;
    w.flush()?;
    std::fs::write(out.join("timing.toml"), toml::to_string(&timing)?)?;
    Ok(format!(
        "ran {} sweep(s) x {} replication(s) on {} ({} schedule, {} thread(s)); sweep time {:.3} s, phase times {:?}",
        cfg.sampler.sweeps, reps, cover, s.schedule, cfg.threads, timing.sweep_seconds, timing.phase_seconds
    ))
}

fn dump_particles(s: &Setup, reference: &[usize], seed: u64, out: &Path) -> Result<()> {
    let cfg = &s.cfg;
    if cfg.sampler.kernel != KernelKind::Pg {
        bail!("particle dump needs the pg kernel");
    }
    let block = s.cover().block(0)?;
    let mut rng = block_rng(seed, 0, 0);
    let n = cfg.sampler.particles;
    let system = match cfg.sampler.proposal {
        ProposalName::Bootstrap => conditional_smc(s.model(), s.obs(), reference, block, n, &Bootstrap, &mut rng)?,
        ProposalName::Uniform => conditional_smc(s.model(), s.obs(), reference, block, n, &UniformProposal, &mut rng)?,
    };
    let mut w = create(out, "particles.csv")?;
    system.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Exact fixed-point check when the instance is enumerable, else one-sweep chi-square tests.
pub fn invariance(s: &Setup, out: &Path, pool: &ThreadPool) -> Result<(String, bool)> {
    let cfg = &s.cfg;
    let kernel = match cfg.sampler.kernel {
        KernelKind::Ideal => ExactKernel::Ideal,
        KernelKind::Pg => ExactKernel::ParticleGibbs {
            particles: cfg.sampler.particles,
        },
    };
    let mode = cfg.invariance.mode;
    let exact_ok = !(cfg.sampler.kernel == KernelKind::Pg && cfg.sampler.proposal != ProposalName::Bootstrap);
    if mode == InvarianceMode::Exact && !exact_ok {
        bail!("exact particle Gibbs enumeration supports the bootstrap proposal only");
    }
    if mode != InvarianceMode::Statistical && exact_ok {
        match exact_invariance(s.model(), s.obs(), s.cover(), s.schedule, kernel, cfg.cap_states) {
            Ok(r) => {
                let pass = r.residual <= 1e-9;
                let text = format!(
                    "mode = \"exact\"\nstates = {}\nresidual_l1 = {:e}\nrow_sum_defect = {:e}\npass = {pass}\n",
                    r.states, r.residual, r.row_sum_defect
                );
                std::fs::write(out.join("invariance.toml"), &text)?;
                return Ok((text, pass));
            }
            Err(Error::TableTooLarge { .. } | Error::EnumerationCap { .. }) if mode == InvarianceMode::Auto => {}
            Err(e) => return Err(e.into()),
        }
    }
    let sampler = AnySampler::new(cfg.sampler.kernel, cfg.sampler.proposal, cfg.sampler.particles);
    let r = statistical_invariance(
        s.model(),
        s.obs(),
        s.cover(),
        s.schedule,
        &sampler,
        cfg.invariance.chains,
        cfg.seed,
        cfg.cap_states,
        Some(pool),
    )?;
    let mut w = create(out, "invariance.csv")?;
    r.write_csv(&mut w)?;
    w.flush()?;
    let pass = r.passes(cfg.invariance.level);
    let mut text = format!(
        "mode = statistical, {} chains, Bonferroni over {} sites\n",
        r.chains,
        r.sites.len()
    );
    for site in &r.sites {
        text.push_str(&format!(
            "  site {:>3}: chi2 = {:>10.4} (dof {}), p = {:.4e}, adjusted p = {:.4e}\n",
            site.site + 1,
            site.statistic,
            site.dof,
            site.p_value,
            site.adjusted
        ));
    }
    text.push_str(&format!(
        "min adjusted p = {:.4e}; pass (> {}) = {pass}\n",
        r.min_adjusted(),
        cfg.invariance.level
    ));
    Ok((text, pass))
}

pub fn run_stability(s: &Setup, out: &Path, pool: &ThreadPool) -> Result<String> {
    let cfg = &s.cfg;
    let st = cfg.stability.as_ref().expect("validated");
    let max_t = *st.lengths.iter().max().expect("validated");
    let spec = s.spec.as_ref().expect("validated");
    let obs = match spec.observations::<f64>()? {
        Some(o) if o.len() >= max_t => o,
        Some(o) => bail!("stability: model file has {} observations, grid needs {max_t}", o.len()),
        None => spec.simulate::<f64>(max_t, cfg.data.as_ref().and_then(|d| d.seed).unwrap_or(0))?,
    };
    let ecfg = StabilityConfig {
        lengths: st.lengths.clone(),
        block_len: st.l,
        overlap: st.p,
        particles: st.n,
        sweeps: st.sweeps,
        burn_in: st.burn_in,
        replications: st.replications,
        schedule: st.schedule.parse::<Schedule>()?,
        seed: cfg.seed,
    };
    let proposal = cfg.sampler.proposal;
    let rows = stability(
        s.model(),
        &obs,
        &ecfg,
        |n| AnySampler::new(KernelKind::Pg, proposal, n),
        Some(pool),
    )?;
    let mut w = create(out, "stability.csv")?;
    write_stability_csv(&mut w, &rows)?;
    w.flush()?;
    let seconds: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    std::fs::write(
        out.join("timing.toml"),
        format!("threads = {}\nrow_seconds = {:?}\n", cfg.threads, seconds),
    )?;
    let mut text = String::from("     T  kernel   median_acf1  median_acf5  update_rate\n");
    for r in &rows {
        text.push_str(&format!(
            "{:>6}  {:<7} {:>12.4} {:>12.4} {:>12.4}\n",
            r.len, r.kernel, r.median_acf1, r.median_acf5, r.mean_update_rate
        ));
    }
    Ok(text)
}

pub fn run_contraction(s: &Setup, out: &Path) -> Result<String> {
    let cfg = &s.cfg;
    let profile = mixing_profile(s.model(), s.obs(), cfg.contraction.h)?;
    let mut reports = Vec::new();
    for name in &cfg.contraction.schedules {
        let schedule: Schedule = name.parse()?;
        reports.push(contraction(
            s.model(),
            s.obs(),
            s.cover(),
            schedule,
            &profile,
            cfg.contraction.max_k,
            cfg.cap_states,
        )?);
    }
    let mut w = create(out, "contraction.csv")?;
    write_contraction_csv(&mut w, &reports)?;
    w.flush()?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!(
            "{}: alpha = {:.6}, lambda = {:.6}{}, sweep norm = {:.6}, measured decay = {:.6}, lambda^2 = {:.6}, envelope dominates = {}\n",
            r.schedule,
            r.alpha,
            r.lambda,
            if r.a1_holds { "" } else { " (>= 1, envelope vacuous)" },
            r.sweep_norm,
            r.decay,
            r.lambda * r.lambda,
            r.dominated()
        ));
    }
    Ok(text)
}
