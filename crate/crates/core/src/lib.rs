//! Multi-robot task allocation that maximizes task efficacy under a time
//! budget, plus active learning of the trait-efficacy maps it relies on.
//!
//! Layers, bottom up: [`motion`] plans grid paths, [`scheduler`] orders tasks
//! for a fixed allocation, [`search`] explores allocations. [`efficacy`] and
//! [`gp`] score coalitions; [`active`] learns those scores from queries.

pub mod active;
pub mod efficacy;
pub mod experiments;
pub mod gp;
pub mod model;
pub mod motion;
pub mod scheduler;
pub mod search;
