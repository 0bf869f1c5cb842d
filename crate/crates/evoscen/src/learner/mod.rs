//! Reinforcement-learning machinery: networks, replay and the staged
//! training loops that produce the driver-model checkpoints.

pub mod net;
pub mod replay;
pub mod stage;
pub mod td3;
