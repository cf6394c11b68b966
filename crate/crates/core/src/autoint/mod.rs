//! Integral networks and their exact derivative networks.

mod dnforward;
mod mlp;
mod naive;
mod partitions;

pub use dnforward::{dnforward, dnforward_cache, DerivCache, DerivSpec, DerivStats, Tangent, MAX_DERIV_ORDER};
pub use mlp::{integral_forward, BoundMlp, InitOptions, LinearParams, MlpSpec, ParamSet, WeightConstraint};
pub use naive::naive_dnforward;
pub use partitions::{all_set_partitions, set_partitions};
