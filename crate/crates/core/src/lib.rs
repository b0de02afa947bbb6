//! Skill-routed vision-and-language navigation harness.
//!
//! The crate models a discrete graph world ([`graph`]), runs navigation
//! episodes ([`episode`]) and scores them ([`metrics`]). Instructions are
//! rewritten into ordered subgoals ([`reorder`]); at every step a two-phase
//! router ([`router`]) localizes the current subgoal and picks one skill
//! agent ([`agents`]) to act. [`synthesis`] builds skill-specific
//! trajectory/instruction datasets, and [`harness`] ties everything into
//! configured runs.

pub mod graph;
pub mod model;
pub mod prompts;
pub mod taxonomy;
pub mod text;
pub mod transport;
pub mod episode;
pub mod metrics;
pub mod world;
pub mod synthesis;
pub mod reorder;
pub mod router;
pub mod agents;
pub mod harness;
