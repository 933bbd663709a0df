//! Anonymous discovery for supply-chain traceability.
//!
//! Trading partners publish minimised, hashed copies of their EPCIS events to a
//! shared discovery store. Anyone holding an item identifier can find which
//! events mention it, verify the custody chain, and request the clear-text data
//! from the event owner through a dead drop.

pub mod event;
pub mod ni;
pub mod sanitiser;
pub mod store;
pub mod dead_drop;
pub mod chain;
pub mod simulator;
