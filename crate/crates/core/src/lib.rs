//! Noise-contrastive and maximum-likelihood estimation for multivariate
//! temporal point processes.
//!
//! The numerical core is generic over the scalar type through [`Real`]; the
//! aliases below fix it to `f64` (or `f32` where noted) for everyday use.

pub mod error;
pub mod evaluation;
pub mod event_streams;
pub mod intensity_models;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod thinning;
pub mod trainer;

pub use error::{Error, Result};
pub use event_streams::{Dataset, Event, EventStream, Partition};
pub use intensity_models::{
    AnyModel, CoarseNoiseModel, DecayLayout, EvalCounter, HawkesExpModel, IntensityModel,
    PoissonModel,
};
pub use scalar::Real;

pub type Hawkes = HawkesExpModel<f64>;
pub type Hawkes32 = HawkesExpModel<f32>;
pub type Poisson = PoissonModel<f64>;
pub type Model = AnyModel<f64>;
pub type NoiseModel = CoarseNoiseModel<f64>;
pub type Stream = EventStream<f64>;
pub type Data = Dataset<f64>;
