//! Posterior sampling for Gaussian hierarchical models whose covariance
//! hyperparameters are themselves uncertain.
//!
//! The observable field is written in the non-centered form
//! `m = m_pr + L(θ) z` with `z` iid standard normal, and the assimilation
//! state is `x = (z, θ)`. Three approximate samplers update a prior ensemble
//! of such states:
//!
//! * RML: one Levenberg–Marquardt minimization per member using the analytic
//!   sensitivity `G = G_m M_x`;
//! * IES: the iterative ensemble smoother with ensemble-averaged sensitivity;
//! * hybrid IES: `G_m` regressed from the ensemble, `M_x` analytic, so every
//!   member gets its own gain.
//!
//! [`oracle`] provides exact marginal-then-conditional posterior draws for the
//! linear-Gaussian case, [`forward`] the linear observer and a two-phase
//! waterflood simulator, and [`experiment`] the config-driven pipelines used
//! by the `hierda` binary.

pub mod covariance;
pub mod error;
pub mod experiment;
pub mod field;
pub mod forward;
pub mod io;
pub mod oracle;
pub mod priors;
pub mod rng;
pub mod smoothers;

pub use error::{Error, Result};
