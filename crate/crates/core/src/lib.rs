//! Transient-stability simulation of power systems compiled to behavioral
//! analog circuits and solved with modified nodal analysis.

pub mod blocks;
pub mod engine;
pub mod grid;
pub mod machine;
pub mod netlist;
pub mod oracle;
pub mod scenario;
pub mod series;
