//! Seeded random catalogs and queries for differential testing and
//! benchmarking. Every artifact is a pure function of (parameters, seed).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Catalog, PrecedenceGraph, ServiceSpec};
use crate::costmodel::ServiceProfile;
use crate::relation::{Relation, Value};
use crate::sqlfront::{Comparator, Operand, Predicate, Projection, QueryAst};

#[derive(Debug, Clone, Copy)]
pub struct GenParams {
    pub min_services: usize,
    pub max_services: usize,
    /// Probability of an extra explicit precedence edge per non-source
    /// service.
    pub edge_prob: f64,
    /// Selectivity is log-uniform in [sigma_min, sigma_max].
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub max_rows: usize,
    /// When false, every service is a source (no inputs, so no derived
    /// dependency edges either).
    pub chained: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            min_services: 3,
            max_services: 7,
            edge_prob: 0.3,
            sigma_min: 0.1,
            sigma_max: 2.0,
            max_rows: 12,
            chained: true,
        }
    }
}

impl GenParams {
    /// All services reductive (σ < 1) and mutually unconstrained; the regime
    /// where the greedy rank order is provably optimal.
    pub fn reductive_unconstrained() -> Self {
        GenParams {
            edge_prob: 0.0,
            sigma_max: 0.95,
            max_rows: 4,
            chained: false,
            ..GenParams::default()
        }
    }
}

const BASE_PROFILE: ServiceProfile = ServiceProfile {
    initiate_client: 2.0,
    initiate_server: 1.0,
    packing: 0.01,
    unpacking: 0.02,
    packetize: 100.0,
    sending: 0.005,
    serviceexec: 30.0,
};

const WIDTHS: [f64; 3] = [4.0, 8.0, 16.0];
const ENVELOPE: f64 = crate::simfabric::ENVELOPE_BYTES;
/// Join-key values are drawn from 0..KEY_RANGE so datasets overlap.
const KEY_RANGE: i64 = 6;

pub fn generate_catalog(params: &GenParams, seed: u64) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(params.min_services..=params.max_services);
    let mut attr_widths: BTreeMap<String, f64> = BTreeMap::new();
    let mut services: BTreeMap<String, ServiceSpec> = BTreeMap::new();
    let mut edges: BTreeSet<(String, String)> = BTreeSet::new();
    let ids: Vec<String> = (0..n).map(|i| format!("ws_{i:02}")).collect();
    for i in 0..n {
        let id = ids[i].clone();
        let key = format!("k{i:02}");
        let payload = format!("v{i:02}");
        for a in [&key, &payload] {
            attr_widths.insert(a.clone(), WIDTHS[rng.random_range(0..WIDTHS.len())]);
        }
        // every non-source service consumes the key of an earlier service,
        // which also yields the derived precedence edge that keeps queries
        // over the whole catalog dependency-closed
        let input_attrs: BTreeSet<String> = if params.chained && i > 0 {
            let j = rng.random_range(0..i);
            [format!("k{j:02}")].into()
        } else {
            BTreeSet::new()
        };
        if params.chained && i > 0 && rng.random_bool(params.edge_prob) {
            let j = rng.random_range(0..i);
            edges.insert((ids[j].clone(), id.clone()));
        }
        let output_attrs: BTreeSet<String> = [key.clone(), payload.clone()].into();
        let selectivity = (params.sigma_min.ln()
            + rng.random_range(0.0..=1.0) * (params.sigma_max / params.sigma_min).ln())
        .exp();
        let profile = BASE_PROFILE.scaled(rng.random_range(0.5..=2.0));
        let mut schema: Vec<String> = input_attrs.union(&output_attrs).cloned().collect();
        schema.sort();
        let mut dataset = Relation::new(schema.clone());
        let rows = rng.random_range(1..=params.max_rows);
        for _ in 0..rows {
            dataset.rows.push(
                schema
                    .iter()
                    .map(|_| Value::Int(rng.random_range(0..KEY_RANGE)))
                    .collect(),
            );
        }
        let avg_callsize: f64 =
            input_attrs.iter().map(|a| attr_widths[a]).sum::<f64>() + ENVELOPE;
        let out_width: f64 = output_attrs.iter().map(|a| attr_widths[a]).sum();
        let avg_resultsize = (rows as f64) * out_width * selectivity.min(1.0);
        services.insert(
            id.clone(),
            ServiceSpec {
                id,
                capability: format!("cap_{i:02}"),
                input_attrs,
                output_attrs,
                selectivity,
                profile,
                dataset,
                avg_callsize,
                avg_resultsize,
            },
        );
    }
    Catalog {
        services,
        explicit_edges: PrecedenceGraph { edges },
        attr_widths,
        predicate_selectivities: BTreeMap::new(),
    }
}

/// A random well-formed query over the catalog: a dependency-closed subset of
/// services, a star or attribute projection, and up to two predicates.
pub fn generate_query(cat: &Catalog, seed: u64) -> QueryAst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<&String> = cat.services.keys().collect();
    let want = rng.random_range(1..=ids.len());
    let mut chosen: BTreeSet<String> = BTreeSet::new();
    while chosen.len() < want {
        chosen.insert(ids[rng.random_range(0..ids.len())].clone());
    }
    close_dependencies(cat, &mut chosen);
    let outputs: Vec<String> = chosen
        .iter()
        .flat_map(|id| cat.services[id].output_attrs.iter().cloned())
        .collect();
    let projection = if rng.random_bool(0.3) {
        Projection::Star
    } else {
        let k = rng.random_range(1..=outputs.len());
        let mut attrs: BTreeSet<String> = BTreeSet::new();
        while attrs.len() < k {
            attrs.insert(outputs[rng.random_range(0..outputs.len())].clone());
        }
        Projection::Attrs(attrs.into_iter().collect())
    };
    let mut predicates = Vec::new();
    for _ in 0..rng.random_range(0..=2) {
        let lhs = outputs[rng.random_range(0..outputs.len())].clone();
        let op = [
            Comparator::Eq,
            Comparator::Lt,
            Comparator::Gt,
            Comparator::Le,
            Comparator::Ge,
            Comparator::Ne,
        ][rng.random_range(0..6)];
        let rhs = if rng.random_bool(0.15) && outputs.len() > 1 {
            let mut other = outputs[rng.random_range(0..outputs.len())].clone();
            while other == lhs {
                other = outputs[rng.random_range(0..outputs.len())].clone();
            }
            Operand::Attr(other)
        } else {
            Operand::Literal(Value::Int(rng.random_range(0..KEY_RANGE)))
        };
        predicates.push(Predicate { lhs, op, rhs });
    }
    QueryAst {
        projection,
        sources: chosen.iter().map(|id| cat.services[id].capability.clone()).collect(),
        predicates,
    }
}

/// Add, to fixpoint, the producer of every input attribute a chosen service
/// needs.
fn close_dependencies(cat: &Catalog, chosen: &mut BTreeSet<String>) {
    loop {
        let mut add: BTreeSet<String> = BTreeSet::new();
        for id in chosen.iter() {
            for attr in &cat.services[id].input_attrs {
                if chosen.iter().any(|c| cat.services[c].output_attrs.contains(attr)) {
                    continue;
                }
                if let Some(producer) =
                    cat.services.values().find(|s| s.output_attrs.contains(attr))
                {
                    add.insert(producer.id.clone());
                }
            }
        }
        if add.is_empty() {
            return;
        }
        chosen.extend(add);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::validate_catalog;
    use crate::sqlfront::{parse_query, render, validate_query};

    #[test]
    fn generated_catalogs_are_valid() {
        let params = GenParams::default();
        for seed in 0..50 {
            let cat = generate_catalog(&params, seed);
            let violations = validate_catalog(&cat);
            assert!(violations.is_empty(), "seed {seed}: {violations:?}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let params = GenParams::default();
        let a = crate::catalog::to_json(&generate_catalog(&params, 9));
        let b = crate::catalog::to_json(&generate_catalog(&params, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn generated_queries_validate_and_roundtrip() {
        let params = GenParams::default();
        for seed in 0..30 {
            let cat = generate_catalog(&params, seed);
            let ast = generate_query(&cat, seed ^ 0x5a5a);
            let text = render(&ast);
            assert_eq!(parse_query(&text).unwrap(), ast, "query {text:?}");
            validate_query(&ast, &cat).unwrap_or_else(|e| panic!("{text:?}: {e}"));
        }
    }

    #[test]
    fn reductive_params_make_unconstrained_sources() {
        let params = GenParams::reductive_unconstrained();
        for seed in 0..20 {
            let cat = generate_catalog(&params, seed);
            assert!(cat.explicit_edges.edges.is_empty());
            for s in cat.services.values() {
                assert!(s.input_attrs.is_empty());
                assert!(s.selectivity < 1.0);
            }
        }
    }

    #[test]
    fn sigma_stays_in_range() {
        let params = GenParams::default();
        for seed in 0..20 {
            for s in generate_catalog(&params, seed).services.values() {
                assert!(s.selectivity >= params.sigma_min - 1e-9);
                assert!(s.selectivity <= params.sigma_max + 1e-9);
            }
        }
    }
}
