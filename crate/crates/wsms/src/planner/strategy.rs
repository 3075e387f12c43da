//! The strategy registry: every planning algorithm sits behind one trait and
//! is selected by name at runtime.

use crate::catalog::Catalog;
use crate::sqlfront::ValidatedQuery;

use super::{
    brute_force_optimal, build_initial_plan, greedy_order, linearize, optimize_subtrees,
    plan_call_info, push_projections, push_selections, reorder_plan, ExecutionPlan, PlanError,
};

pub trait PlanStrategy: Sync {
    fn name(&self) -> &'static str;
    fn plan(&self, vq: &ValidatedQuery, cat: &Catalog) -> Result<ExecutionPlan, PlanError>;
}

/// Baseline: lexicographic-id topological order, no pushdown, no rewrites.
pub struct Naive;

/// Cost-based greedy ordering only.
pub struct Greedy;

/// The full pipeline: pushdown heuristics, greedy ordering, subtree
/// equivalence rules.
pub struct GreedyHeur;

/// Exhaustive enumeration of linear extensions (size-guarded oracle), run on
/// the same pushed-down plan as `greedy_heur`.
pub struct Optimal;

impl PlanStrategy for Naive {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn plan(&self, vq: &ValidatedQuery, cat: &Catalog) -> Result<ExecutionPlan, PlanError> {
        let g = vq.service_graph(cat)?;
        let plan = build_initial_plan(vq, &g, cat);
        linearize(&plan, cat)
    }
}

impl PlanStrategy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn plan(&self, vq: &ValidatedQuery, cat: &Catalog) -> Result<ExecutionPlan, PlanError> {
        let g = vq.service_graph(cat)?;
        let plan = build_initial_plan(vq, &g, cat);
        let info = plan_call_info(&plan, cat);
        let order = greedy_order(&g, &info);
        linearize(&reorder_plan(plan, &order, cat), cat)
    }
}

impl PlanStrategy for GreedyHeur {
    fn name(&self) -> &'static str {
        "greedy_heur"
    }

    fn plan(&self, vq: &ValidatedQuery, cat: &Catalog) -> Result<ExecutionPlan, PlanError> {
        let g = vq.service_graph(cat)?;
        let plan = build_initial_plan(vq, &g, cat);
        let plan = push_selections(plan, cat, &vq.producers);
        let plan = push_projections(plan, cat);
        let info = plan_call_info(&plan, cat);
        let order = greedy_order(&g, &info);
        let plan = reorder_plan(plan, &order, cat);
        let plan = optimize_subtrees(plan, cat, &g);
        linearize(&plan, cat)
    }
}

impl PlanStrategy for Optimal {
    fn name(&self) -> &'static str {
        "optimal"
    }

    fn plan(&self, vq: &ValidatedQuery, cat: &Catalog) -> Result<ExecutionPlan, PlanError> {
        let g = vq.service_graph(cat)?;
        let plan = build_initial_plan(vq, &g, cat);
        let plan = push_selections(plan, cat, &vq.producers);
        let plan = push_projections(plan, cat);
        let info = plan_call_info(&plan, cat);
        let (order, _) = brute_force_optimal(&g, &info)?;
        linearize(&reorder_plan(plan, &order, cat), cat)
    }
}

pub static STRATEGIES: [&dyn PlanStrategy; 4] = [&Naive, &Greedy, &GreedyHeur, &Optimal];

pub fn strategy(name: &str) -> Option<&'static dyn PlanStrategy> {
    STRATEGIES.iter().copied().find(|s| s.name() == name)
}

pub fn strategy_names() -> Vec<&'static str> {
    STRATEGIES.iter().map(|s| s.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::cat1;
    use crate::sqlfront::{parse_query, validate_query};

    #[test]
    fn registry_lookup_by_name() {
        for name in ["naive", "greedy", "greedy_heur", "optimal"] {
            assert_eq!(strategy(name).unwrap().name(), name);
        }
        assert!(strategy("adaptive").is_none());
    }

    #[test]
    fn greedy_heur_on_cat1_two_services() {
        let cat = cat1();
        let ast =
            parse_query("SELECT cid, score FROM customers, credit WHERE score > 600").unwrap();
        let vq = validate_query(&ast, &cat).unwrap();
        let ep = strategy("greedy_heur").unwrap().plan(&vq, &cat).unwrap();
        assert_eq!(ep.order, vec!["ws_src", "ws_credit"]);
        assert!(ep.to_text().contains("INVOKE ws_credit factor=0.5"));
    }

    #[test]
    fn single_service_plan_is_invoke_and_project() {
        let cat = cat1();
        let ast = parse_query("SELECT cid FROM customers").unwrap();
        let vq = validate_query(&ast, &cat).unwrap();
        let ep = strategy("greedy_heur").unwrap().plan(&vq, &cat).unwrap();
        assert_eq!(ep.to_text(), "INVOKE ws_src\nPROJECT cid\n");
    }

    #[test]
    fn all_strategies_emit_linear_extensions() {
        let cat = cat1();
        let ast = parse_query("SELECT cid, score, zip FROM customers, credit, address").unwrap();
        let vq = validate_query(&ast, &cat).unwrap();
        let g = vq.service_graph(&cat).unwrap();
        for s in STRATEGIES {
            let ep = s.plan(&vq, &cat).unwrap();
            assert!(g.is_linear_extension(&ep.order), "{} violated precedence", s.name());
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let cat = cat1();
        let ast = parse_query("SELECT * FROM customers, credit, address WHERE score > 600")
            .unwrap();
        let vq = validate_query(&ast, &cat).unwrap();
        for s in STRATEGIES {
            let a = s.plan(&vq, &cat).unwrap();
            let b = s.plan(&vq, &cat).unwrap();
            assert_eq!(a.to_text(), b.to_text());
            assert_eq!(a.logical.canonical(), b.logical.canonical());
        }
    }
}
