pub mod csa;
pub mod dist;
pub mod fitting;
pub mod harness;
pub mod idleprob;
pub mod macsim;
pub mod metrics;
pub mod poly;
pub mod scenario;
pub mod traffic;
pub mod validation;
