//! Learned adjustment of step frequency, single-support ratio and step
//! region rotation.

pub mod observation;
pub mod reward;
pub mod oracle;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod checkpoint;
