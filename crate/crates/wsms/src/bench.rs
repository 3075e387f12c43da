//! Strategy benchmark harness: run every planning strategy over a set of
//! catalogs with a full star query, record estimated and simulated costs, and
//! report each strategy's cost ratio to the brute-force optimum.

use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::corpus::{generate_catalog, GenParams};
use crate::costmodel::ProfilerStats;
use crate::executor::{execute_plan, ExecError};
use crate::planner::strategy::STRATEGIES;
use crate::planner::PlanError;
use crate::simfabric::SimFabric;
use crate::sqlfront::{validate_query, FrontError, Projection, QueryAst};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Front(#[from] FrontError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub catalog_id: String,
    pub n_services: usize,
    pub strategy: String,
    pub est_cost: f64,
    pub measured_time: f64,
    pub ratio_to_optimal: f64,
}

/// Deterministic catalog set for `bench --generate`.
pub fn generated_catalogs(count: usize, seed: u64) -> Vec<(String, Catalog)> {
    let params = GenParams::default();
    (0..count)
        .map(|i| {
            (
                format!("gen_{i:03}"),
                generate_catalog(&params, seed.wrapping_add(i as u64)),
            )
        })
        .collect()
}

/// The benchmark query: everything from every capability, no predicates.
pub fn star_query(cat: &Catalog) -> QueryAst {
    QueryAst {
        projection: Projection::Star,
        sources: cat.services.values().map(|s| s.capability.clone()).collect(),
        predicates: Vec::new(),
    }
}

/// One row per (catalog, strategy), sorted by (catalog_id, strategy). The
/// fabric runs with the given seed and zero jitter, so measured times are
/// exact per-call cost sums.
pub fn run_bench(catalogs: &[(String, Catalog)], seed: u64) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::new();
    for (catalog_id, cat) in catalogs {
        let ast = star_query(cat);
        let vq = validate_query(&ast, cat)?;
        let optimal_est = crate::planner::strategy::strategy("optimal")
            .expect("optimal strategy registered")
            .plan(&vq, cat)?
            .estimate
            .total;
        for s in STRATEGIES {
            let plan = s.plan(&vq, cat)?;
            let mut fabric = SimFabric::new(cat, seed, 0.0);
            let mut profiler = ProfilerStats::default();
            let (_, report) = execute_plan(&plan, cat, &mut fabric, &mut profiler)?;
            let ratio = if optimal_est > 0.0 { plan.estimate.total / optimal_est } else { 1.0 };
            rows.push(BenchRow {
                catalog_id: catalog_id.clone(),
                n_services: cat.services.len(),
                strategy: s.name().to_string(),
                est_cost: plan.estimate.total,
                measured_time: report.total,
                ratio_to_optimal: ratio,
            });
        }
    }
    rows.sort_by(|a, b| (&a.catalog_id, &a.strategy).cmp(&(&b.catalog_id, &b.strategy)));
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out =
        String::from("catalog_id,n_services,strategy,est_cost,measured_time,ratio_to_optimal\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.catalog_id, r.n_services, r.strategy, r.est_cost, r.measured_time, r.ratio_to_optimal
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_rows_cover_all_strategies_sorted() {
        let catalogs = generated_catalogs(2, 7);
        let rows = run_bench(&catalogs, 0).unwrap();
        assert_eq!(rows.len(), 8);
        let mut keys: Vec<(String, String)> =
            rows.iter().map(|r| (r.catalog_id.clone(), r.strategy.clone())).collect();
        let sorted = keys.clone();
        keys.sort();
        assert_eq!(keys, sorted);
        assert_eq!(rows[0].strategy, "greedy");
    }

    #[test]
    fn optimal_ratio_is_one() {
        let catalogs = generated_catalogs(3, 11);
        for r in run_bench(&catalogs, 0).unwrap() {
            if r.strategy == "optimal" {
                assert!((r.ratio_to_optimal - 1.0).abs() < 1e-9);
            }
            assert!(r.ratio_to_optimal >= 1.0 - 1e-9, "{r:?}");
        }
    }

    #[test]
    fn bench_is_deterministic() {
        let catalogs = generated_catalogs(2, 3);
        let a = bench_csv(&run_bench(&catalogs, 5).unwrap());
        let b = bench_csv(&run_bench(&catalogs, 5).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("catalog_id,"));
    }
}
