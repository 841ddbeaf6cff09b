#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod controller;
pub mod dynamics;
pub mod geometry;
pub mod mpc;
pub mod potential;
pub mod reference;
pub mod sim;
