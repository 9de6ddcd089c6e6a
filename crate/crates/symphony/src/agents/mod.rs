//! The specialized agents the planner dispatches to.

pub mod grounding;
pub mod perception;
pub mod subtitle;
