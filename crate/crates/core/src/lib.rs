pub mod alignment;
pub mod canonical;
pub mod effects;
pub mod evaluate;
pub mod evidence;
pub mod harness;
pub mod report;
pub mod rng;
pub mod stats;
pub mod study;
pub mod synth;
pub mod uncertainty;
