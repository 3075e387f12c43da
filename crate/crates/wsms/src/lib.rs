//! Web service management: a SQL-like front end over a catalog of web
//! service operations, cost-based call ordering under precedence
//! constraints, algebraic rewrites, and execution against a deterministic
//! simulated service fabric.

pub mod bench;
pub mod catalog;
pub mod corpus;
pub mod costmodel;
pub mod executor;
pub mod fixtures;
pub mod planner;
pub mod relation;
pub mod simfabric;
pub mod sqlfront;
