//! Command-line harness for the score-based denoising toolkit:
//! dataset corruption, network training, closed-form denoising with
//! known or blind-estimated noise levels, PSNR evaluation, and the
//! analytic-oracle self checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod netpbm;
pub mod oracle_suite;
