//! Protocol-scheduled L2–L∞ state estimation for Markovian jumping neural
//! networks with bounded time-varying delays.

pub mod augment;
pub mod fixtures;
pub mod io;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod protocol;
pub mod sdp;
pub mod sim;
pub mod synthesis;
