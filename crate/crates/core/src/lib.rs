//! Visual predictive control for quadrotors on bearing-vector image dynamics.
//!
//! The landmark is tracked through a bearing quaternion and a distance, so the
//! controller never needs the vehicle position. Modules, bottom-up:
//!
//! - [`geometry`]: quaternions, bearings, image projection.
//! - [`dynamics`]: the coupled quadrotor/image model, RK4 and its Jacobians.
//! - [`costs`]: visual-servoing, perception and action objectives, bounds.
//! - [`qp`], [`ocp`]: multiple-shooting SQP and the receding-horizon controller.
//! - [`simulator`]: ground-truth plant, camera observation and closed loop.

pub mod costs;
pub mod dynamics;
pub mod geometry;
pub mod kernel;
pub mod ocp;
pub mod qp;
pub mod simulator;
