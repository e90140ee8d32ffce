//! Non-conformal comparison methods: residual bootstrap, normal-error
//! intervals on a log scale, Poisson and negative-binomial count intervals,
//! and linear quantile regression.

mod bootstrap;
mod counts;
mod parametric;
mod quantreg;

pub use bootstrap::{bootstrap_interval, BootstrapQuantiles, ResidualPool, DEFAULT_BOOTSTRAP_DRAWS};
pub use counts::{negbinom_interval, poisson_interval, CountModel};
pub use parametric::{lognormal_interval, standard_normal_quantile, NormalErrorModel};
pub use quantreg::{
    mean_pinball_loss, pinball_loss, quantreg_fit, QuantRegDiagnostics, QuantRegFit, QuantRegModel,
    QuantRegOptions,
};
