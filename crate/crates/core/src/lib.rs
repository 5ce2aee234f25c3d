pub mod analysis;
pub mod behavior;
pub mod config;
pub mod engine;
pub mod error;
pub mod graph;
pub mod model;
pub mod seeding;
