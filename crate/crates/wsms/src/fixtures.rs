//! Canonical example catalog used across the test suites: one source feeding
//! two dependent services.

use crate::catalog::{load_catalog, Catalog};

pub const CAT1_JSON: &str = include_str!("../fixtures/cat1.json");

pub fn cat1() -> Catalog {
    load_catalog(CAT1_JSON).expect("fixture catalog is valid")
}
