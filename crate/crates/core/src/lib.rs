//! Blocked Particle Gibbs sampling for hidden Markov models.
//!
//! The crate provides the conditional SMC block kernel, left-to-right and
//! parallel sweep schedules, exact oracles for finite-state models, and
//! calculators for the contraction-rate bounds of blocked Gibbs samplers.
//!
//! Numeric code is generic over [`Real`], implemented for `f32` and `f64`.

pub mod blocking;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod hmm;
pub mod model_file;
pub mod pg;
pub mod rates;
pub mod scalar;
pub mod sweeps;

pub use blocking::{Block, BlockCover, Violation, XiSystem};
pub use error::{Error, Result};
pub use hmm::{
    CallbackModel, Emission, FiniteStateModel, MixingProfile, Observation, ObservationRecord, StateSpaceModel,
    TabularHmm, Trajectory,
};
pub use model_file::{EmissionSpec, ModelSpec};
pub use pg::{Bootstrap, Proposal, ProposalKind, UniformProposal};
pub use scalar::Real;
pub use sweeps::{BlockSampler, ChainState, IdealKernel, ParticleGibbs, Schedule};

pub type Hmm = TabularHmm<f64>;
pub type HmmF32 = TabularHmm<f32>;
pub type Profile = MixingProfile<f64>;
pub type ProfileF32 = MixingProfile<f32>;
pub type Observations = ObservationRecord<Observation<f64>>;
pub type ObservationsF32 = ObservationRecord<Observation<f32>>;
