//! Desk-scale non-reactive driving benchmark: rule-based trajectory metrics,
//! a clustered planning vocabulary, an attention-based student planner trained
//! by imitation and metric distillation, and assembled-cost selection.

pub mod geom;
pub mod infer;
pub mod scenario;
pub mod student;
pub mod teachers;
pub mod vocab;
