//! Spike-slab Gibbs sampling.
