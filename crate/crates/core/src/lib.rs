pub mod attacks;
pub mod campaign;
pub mod candidates;
pub mod corpus;
pub mod metrics;
pub mod syntax;
pub mod transforms;
pub mod victim;
