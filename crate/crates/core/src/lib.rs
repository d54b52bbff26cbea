//! Geometric trajectory tracking for quadrotors on SE₂(3).
//!
//! The tracking error between the vehicle and its reference is measured on the
//! group of extended poses and linearized along the reference
//! ([`error_model`]). The linear model feeds a time-varying LQR
//! ([`controllers`]) or a condensed MPC with box limits on the input ([`mpc`],
//! solved by [`qp`]). [`sim`] closes the loop around a rigid-body plant
//! ([`dynamics`]) following a flat-output reference ([`reference`]).
//!
//! The guide in `book/` walks through each piece; its examples run as doctests
//! of this crate.

pub mod controllers;
pub mod dynamics;
pub mod error_model;
pub mod lie;
pub mod mpc;
pub mod qp;
pub mod reference;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lie.md")]
    mod lie {}
    #[doc = include_str!("../../../book/src/error.md")]
    mod error {}
    #[doc = include_str!("../../../book/src/lqr.md")]
    mod lqr {}
    #[doc = include_str!("../../../book/src/mpc.md")]
    mod mpc {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
