//! Round-driven simulator for role-based federated learning over a LEO
//! constellation with a sharded ledger, similarity/density poisoning defense
//! and two-level voting consensus.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod channel;
pub mod consensus;
pub mod constellation;
pub mod defense;
pub mod exec;
pub mod fl;
pub mod ledger;
pub mod sim;
