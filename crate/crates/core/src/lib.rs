// SPDX-License-Identifier: Apache-2.0

pub mod netlist;
pub mod seeds;
pub mod metrics;
pub mod obfuscate;
pub mod par;
pub mod dataset;
pub mod detect;
pub mod campaign;
pub mod pipeline;
