//! Spiking neural network training toolkit.
//!
//! - [`neuron`]: LIF dynamics and surrogate spike derivatives
//! - [`network`]: layer graphs with skip and recurrent `cat` connections
//! - [`learning`]: losses, BPTT, RTRL, OSTL, OTTT, FPTT, optimizers and training loops
//! - [`randman`]: random-manifold spike datasets, time- or rate-encoded
//! - [`analysis`]: gradient comparison, loss landscapes, efficiency metrics
//!
//! Everything runs in `f64` on dense row-major [`Tensor`]s.

pub mod analysis;
pub mod error;
pub mod learning;
pub mod network;
pub mod neuron;
pub mod randman;
pub mod rng;
pub mod tensor;
#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use error::{Error, Result};
pub use network::{LayerSpec, Network, NetworkSpec, Params};
pub use neuron::{LifConfig, SpikeMode, SurrogateSpec};
pub use rng::CounterRng;
pub use tensor::Tensor;
