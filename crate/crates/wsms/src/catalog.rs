//! Service registry: the catalog file, its invariants, and the
//! map / select / compose algebra used to bind a query to concrete services.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{per_tuple_cost, ServiceProfile};
use crate::relation::{Relation, Value};

/// One registered service operation: a node of the service graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSpec {
    pub id: String,
    /// Functional capability name matched by queries. Several services may
    /// share one capability (competing providers).
    pub capability: String,
    pub input_attrs: BTreeSet<String>,
    pub output_attrs: BTreeSet<String>,
    /// Expected output tuples per input tuple.
    pub selectivity: f64,
    pub profile: ServiceProfile,
    /// Inline data answered by the simulated fabric.
    pub dataset: Relation,
    pub avg_callsize: f64,
    pub avg_resultsize: f64,
}

impl ServiceSpec {
    pub fn all_attrs(&self) -> BTreeSet<String> {
        self.input_attrs.union(&self.output_attrs).cloned().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecedenceGraph {
    pub edges: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub services: BTreeMap<String, ServiceSpec>,
    pub explicit_edges: PrecedenceGraph,
    pub attr_widths: BTreeMap<String, f64>,
    /// Keyed "attr:op"; factor applied when a predicate on `attr` with
    /// comparator `op` is pushed onto a service call.
    pub predicate_selectivities: BTreeMap<String, f64>,
}

pub const DEFAULT_PREDICATE_FACTOR: f64 = 0.5;

impl Catalog {
    pub fn width(&self, attr: &str) -> f64 {
        self.attr_widths.get(attr).copied().unwrap_or(0.0)
    }

    pub fn predicate_factor(&self, attr: &str, op: &str) -> f64 {
        self.predicate_selectivities
            .get(&format!("{attr}:{op}"))
            .copied()
            .unwrap_or(DEFAULT_PREDICATE_FACTOR)
    }
}

/// A chosen set of services plus the induced precedence edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
}

impl ServiceGraph {
    pub fn predecessors(&self, id: &str) -> BTreeSet<&str> {
        self.edges.iter().filter(|(_, b)| b == id).map(|(a, _)| a.as_str()).collect()
    }

    /// Lexicographically smallest topological order (Kahn with an ordered
    /// frontier). Errors are impossible here: construction already rejected
    /// cyclic graphs.
    pub fn topo_lex(&self) -> Vec<String> {
        let mut indeg: BTreeMap<&str, usize> =
            self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for (_, b) in &self.edges {
            *indeg.get_mut(b.as_str()).unwrap() += 1;
        }
        let mut frontier: BTreeSet<&str> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(&next) = frontier.iter().next() {
            frontier.remove(next);
            order.push(next.to_string());
            for (a, b) in &self.edges {
                if a == next {
                    let d = indeg.get_mut(b.as_str()).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        frontier.insert(b.as_str());
                    }
                }
            }
        }
        order
    }

    pub fn is_linear_extension(&self, order: &[String]) -> bool {
        if order.len() != self.nodes.len() {
            return false;
        }
        let pos: BTreeMap<&str, usize> =
            order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        if !self.nodes.iter().all(|n| pos.contains_key(n.as_str())) {
            return false;
        }
        self.edges.iter().all(|(a, b)| pos[a.as_str()] < pos[b.as_str()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending service id, or "-" for catalog-level violations.
    pub service: String,
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.service, self.rule, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("invalid catalog: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("precedence cycle involving services {0:?}")]
    Cycle(Vec<String>),
    #[error("capability {0:?} has no candidate services")]
    NoCandidates(String),
    #[error("input attribute {attr:?} of service {service:?} has no producer among the selected services")]
    UnsatisfiedInput { service: String, attr: String },
}

// ---------------------------------------------------------------------------
// Catalog file format

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    services: Vec<RawService>,
    #[serde(default)]
    edges: Vec<(String, String)>,
    #[serde(default)]
    attr_widths: BTreeMap<String, f64>,
    #[serde(default)]
    predicate_selectivities: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawService {
    id: String,
    capability: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    selectivity: f64,
    profile: ServiceProfile,
    avg_callsize: f64,
    avg_resultsize: f64,
    dataset: Vec<BTreeMap<String, Value>>,
}

/// Parse without invariant checking; `cmd validate` needs to report
/// violations for catalogs that would not load.
pub fn parse_catalog(text: &str) -> Result<Catalog, CatalogError> {
    let raw: RawCatalog =
        serde_json::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
    let mut services = BTreeMap::new();
    for s in raw.services {
        let dataset = dataset_relation(&s);
        let spec = ServiceSpec {
            id: s.id.clone(),
            capability: s.capability,
            input_attrs: s.inputs.into_iter().collect(),
            output_attrs: s.outputs.into_iter().collect(),
            selectivity: s.selectivity,
            profile: s.profile,
            dataset,
            avg_callsize: s.avg_callsize,
            avg_resultsize: s.avg_resultsize,
        };
        if services.insert(s.id.clone(), spec).is_some() {
            return Err(CatalogError::Parse(format!("duplicate service id {:?}", s.id)));
        }
    }
    Ok(Catalog {
        services,
        explicit_edges: PrecedenceGraph { edges: raw.edges.into_iter().collect() },
        attr_widths: raw.attr_widths,
        predicate_selectivities: raw.predicate_selectivities,
    })
}

fn dataset_relation(s: &RawService) -> Relation {
    // Fixed column order (sorted attrs) even for empty datasets, so an empty
    // service still has a usable schema.
    let mut schema: Vec<String> = s.inputs.iter().chain(s.outputs.iter()).cloned().collect();
    schema.sort();
    schema.dedup();
    let mut rel = Relation::new(schema.clone());
    for row in &s.dataset {
        let vals: Vec<Value> = schema
            .iter()
            .map(|a| row.get(a).cloned().unwrap_or(Value::Int(0)))
            .collect();
        // Arity always matches; schema mismatches surface as violations.
        let _ = rel.push_row(vals);
    }
    rel
}

/// Parse and enforce every invariant.
pub fn load_catalog(text: &str) -> Result<Catalog, CatalogError> {
    let cat = parse_catalog(text)?;
    let violations = validate_catalog(&cat);
    if violations.is_empty() {
        Ok(cat)
    } else {
        Err(CatalogError::Invalid(violations))
    }
}

pub fn to_json(cat: &Catalog) -> String {
    let raw = RawCatalog {
        services: cat
            .services
            .values()
            .map(|s| RawService {
                id: s.id.clone(),
                capability: s.capability.clone(),
                inputs: s.input_attrs.iter().cloned().collect(),
                outputs: s.output_attrs.iter().cloned().collect(),
                selectivity: s.selectivity,
                profile: s.profile.clone(),
                avg_callsize: s.avg_callsize,
                avg_resultsize: s.avg_resultsize,
                dataset: s
                    .dataset
                    .rows
                    .iter()
                    .map(|r| {
                        s.dataset
                            .schema
                            .iter()
                            .cloned()
                            .zip(r.iter().cloned())
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
        edges: cat.explicit_edges.edges.iter().cloned().collect(),
        attr_widths: cat.attr_widths.clone(),
        predicate_selectivities: cat.predicate_selectivities.clone(),
    };
    serde_json::to_string_pretty(&raw).expect("catalog serialization")
}

/// Every violated invariant, ordered by (service id, rule name). Violations
/// are data, not failures.
pub fn validate_catalog(cat: &Catalog) -> Vec<Violation> {
    let mut out = Vec::new();
    for (id, s) in &cat.services {
        let overlap: Vec<&String> = s.input_attrs.intersection(&s.output_attrs).collect();
        if !overlap.is_empty() {
            out.push(Violation {
                service: id.clone(),
                rule: "attr-overlap",
                message: format!("input and output attributes overlap: {overlap:?}"),
            });
        }
        if !(s.selectivity.is_finite() && s.selectivity > 0.0) {
            out.push(Violation {
                service: id.clone(),
                rule: "selectivity-positive",
                message: format!("selectivity must be positive, got {}", s.selectivity),
            });
        }
        if s.avg_callsize < 0.0 || s.avg_resultsize < 0.0 {
            out.push(Violation {
                service: id.clone(),
                rule: "sizes-nonnegative",
                message: "avg_callsize and avg_resultsize must be nonnegative".into(),
            });
        }
        if s.profile.fields().iter().any(|f| !f.is_finite() || *f < 0.0) {
            out.push(Violation {
                service: id.clone(),
                rule: "profile-nonnegative",
                message: "all profile fields must be nonnegative and finite".into(),
            });
        }
        let expect: BTreeSet<String> = s.all_attrs();
        let have: BTreeSet<String> = s.dataset.schema.iter().cloned().collect();
        if expect != have {
            out.push(Violation {
                service: id.clone(),
                rule: "dataset-schema",
                message: format!("dataset schema {have:?} != input ∪ output {expect:?}"),
            });
        }
        for attr in &expect {
            if !cat.attr_widths.contains_key(attr) {
                out.push(Violation {
                    service: id.clone(),
                    rule: "missing-width",
                    message: format!("no width declared for attribute {attr:?}"),
                });
            }
        }
    }
    for (a, b) in &cat.explicit_edges.edges {
        for end in [a, b] {
            if !cat.services.contains_key(end) {
                out.push(Violation {
                    service: "-".into(),
                    rule: "edge-unknown-service",
                    message: format!("edge ({a:?}, {b:?}) references unknown service {end:?}"),
                });
            }
        }
    }
    if let Some(cycle) = find_cycle(
        &cat.services.keys().cloned().collect(),
        &cat.explicit_edges.edges,
    ) {
        out.push(Violation {
            service: cycle.first().cloned().unwrap_or_else(|| "-".into()),
            rule: "acyclic",
            message: format!("precedence cycle involving services {cycle:?}"),
        });
    }
    out.sort_by(|x, y| (&x.service, x.rule).cmp(&(&y.service, y.rule)));
    out
}

/// Kahn peeling; returns the (sorted) set of nodes left on a cycle, if any.
fn find_cycle(nodes: &BTreeSet<String>, edges: &BTreeSet<(String, String)>) -> Option<Vec<String>> {
    let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    for (_, b) in edges {
        if let Some(d) = indeg.get_mut(b.as_str()) {
            *d += 1;
        }
    }
    let mut frontier: Vec<&str> = indeg
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .collect();
    let mut seen = 0usize;
    while let Some(next) = frontier.pop() {
        seen += 1;
        for (a, b) in edges {
            if a == next {
                if let Some(d) = indeg.get_mut(b.as_str()) {
                    *d -= 1;
                    if *d == 0 {
                        frontier.push(b.as_str());
                    }
                }
            }
        }
        indeg.remove(next);
    }
    if seen == nodes.len() {
        None
    } else {
        Some(indeg.keys().map(|k| k.to_string()).collect())
    }
}

/// Map: all services whose capability matches each requested name exactly.
pub fn map_services<'a>(
    cat: &'a Catalog,
    required: &BTreeSet<String>,
) -> BTreeMap<String, Vec<&'a ServiceSpec>> {
    required
        .iter()
        .map(|cap| {
            let candidates = cat
                .services
                .values()
                .filter(|s| &s.capability == cap)
                .collect();
            (cap.clone(), candidates)
        })
        .collect()
}

/// Select: the candidate with minimum expected call cost, ties broken by
/// lexicographically smallest id.
pub fn select_service<'a>(
    capability: &str,
    candidates: &[&'a ServiceSpec],
) -> Result<&'a ServiceSpec, CatalogError> {
    candidates
        .iter()
        .min_by(|a, b| {
            per_tuple_cost(a)
                .partial_cmp(&per_tuple_cost(b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.id.cmp(&b.id))
        })
        .copied()
        .ok_or_else(|| CatalogError::NoCandidates(capability.to_string()))
}

/// Compose: the chosen services with explicit edges restricted to the set
/// plus every data-dependency edge (attribute consumed by one service and
/// produced by exactly one other chosen service).
pub fn compose(chosen: &BTreeSet<String>, cat: &Catalog) -> Result<ServiceGraph, CatalogError> {
    let mut edges: BTreeSet<(String, String)> = cat
        .explicit_edges
        .edges
        .iter()
        .filter(|(a, b)| chosen.contains(a) && chosen.contains(b))
        .cloned()
        .collect();
    for consumer in chosen {
        let spec = &cat.services[consumer];
        for attr in &spec.input_attrs {
            let producers: Vec<&String> = chosen
                .iter()
                .filter(|p| *p != consumer && cat.services[*p].output_attrs.contains(attr))
                .collect();
            match producers.as_slice() {
                [] => {
                    return Err(CatalogError::UnsatisfiedInput {
                        service: consumer.clone(),
                        attr: attr.clone(),
                    })
                }
                [only] => {
                    edges.insert(((*only).clone(), consumer.clone()));
                }
                // Several producers: no forced edge; validation rejects the
                // ambiguity before planning.
                _ => {}
            }
        }
    }
    if let Some(cycle) = find_cycle(chosen, &edges) {
        return Err(CatalogError::Cycle(cycle));
    }
    Ok(ServiceGraph { nodes: chosen.clone(), edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::cat1;

    #[test]
    fn empty_services_list_loads() {
        let cat = load_catalog(r#"{"services": []}"#).unwrap();
        assert!(cat.services.is_empty());
    }

    #[test]
    fn cat1_loads_with_three_services_two_edges() {
        let cat = cat1();
        assert_eq!(cat.services.len(), 3);
        assert_eq!(cat.explicit_edges.edges.len(), 2);
        assert!(validate_catalog(&cat).is_empty());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = load_catalog(r#"{"services": [], "extra": 1}"#).unwrap_err();
        assert!(matches!(err, CatalogError::Parse(_)));
    }

    #[test]
    fn edge_cycle_reported() {
        let text = r#"{
            "services": [
                {"id":"a","capability":"a","inputs":[],"outputs":["x"],"selectivity":1.0,
                 "profile":{"initiate_client":0,"initiate_server":0,"packing":0,"unpacking":0,"packetize":0,"sending":0,"serviceexec":0},
                 "avg_callsize":0,"avg_resultsize":0,"dataset":[]},
                {"id":"b","capability":"b","inputs":[],"outputs":["y"],"selectivity":1.0,
                 "profile":{"initiate_client":0,"initiate_server":0,"packing":0,"unpacking":0,"packetize":0,"sending":0,"serviceexec":0},
                 "avg_callsize":0,"avg_resultsize":0,"dataset":[]}
            ],
            "edges": [["a","b"],["b","a"]],
            "attr_widths": {"x":8,"y":8}
        }"#;
        match load_catalog(text).unwrap_err() {
            CatalogError::Invalid(vs) => {
                let cyc = vs.iter().find(|v| v.rule == "acyclic").expect("cycle violation");
                assert!(cyc.message.contains("\"a\"") && cyc.message.contains("\"b\""));
            }
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn zero_selectivity_is_one_violation() {
        let mut cat = cat1();
        cat.services.get_mut("ws_credit").unwrap().selectivity = 0.0;
        let vs = validate_catalog(&cat);
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].rule, "selectivity-positive");
    }

    #[test]
    fn missing_width_names_the_attribute() {
        let mut cat = cat1();
        cat.attr_widths.remove("zip");
        let vs = validate_catalog(&cat);
        assert_eq!(vs.len(), 1);
        assert!(vs[0].message.contains("zip"));
    }

    #[test]
    fn map_finds_source_by_capability() {
        let cat = cat1();
        let req: BTreeSet<String> = ["customers".to_string()].into();
        let m = map_services(&cat, &req);
        assert_eq!(m["customers"].len(), 1);
        assert_eq!(m["customers"][0].id, "ws_src");
    }

    #[test]
    fn map_unknown_capability_is_empty() {
        let cat = cat1();
        let req: BTreeSet<String> = ["unknown".to_string()].into();
        assert!(map_services(&cat, &req)["unknown"].is_empty());
    }

    #[test]
    fn select_minimizes_call_cost() {
        let cat = cat1();
        let mut cheap = cat.services["ws_credit"].clone();
        let mut dear = cheap.clone();
        cheap.id = "cheap".into();
        dear.id = "dear".into();
        dear.profile.serviceexec += 14.0;
        let picked = select_service("credit", &[&dear, &cheap]).unwrap();
        assert_eq!(picked.id, "cheap");
    }

    #[test]
    fn select_ties_break_by_id() {
        let cat = cat1();
        let mut a = cat.services["ws_credit"].clone();
        let mut b = a.clone();
        a.id = "a".into();
        b.id = "b".into();
        assert_eq!(select_service("credit", &[&b, &a]).unwrap().id, "a");
    }

    #[test]
    fn select_empty_candidates_errors() {
        assert!(matches!(
            select_service("credit", &[]),
            Err(CatalogError::NoCandidates(cap)) if cap == "credit"
        ));
    }

    #[test]
    fn compose_derives_dependency_edges() {
        let cat = cat1();
        let chosen: BTreeSet<String> =
            ["ws_src", "ws_credit", "ws_addr"].iter().map(|s| s.to_string()).collect();
        let g = compose(&chosen, &cat).unwrap();
        let expect: BTreeSet<(String, String)> = [
            ("ws_src".to_string(), "ws_credit".to_string()),
            ("ws_src".to_string(), "ws_addr".to_string()),
        ]
        .into();
        assert_eq!(g.edges, expect);
    }

    #[test]
    fn compose_single_source_has_no_edges() {
        let cat = cat1();
        let chosen: BTreeSet<String> = ["ws_src".to_string()].into();
        let g = compose(&chosen, &cat).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn compose_detects_explicit_cycle_against_dependency() {
        let mut cat = cat1();
        cat.explicit_edges.edges.insert(("ws_credit".into(), "ws_src".into()));
        let chosen: BTreeSet<String> =
            ["ws_src".to_string(), "ws_credit".to_string()].into();
        assert!(matches!(compose(&chosen, &cat), Err(CatalogError::Cycle(_))));
    }

    #[test]
    fn topo_lex_is_a_linear_extension() {
        let cat = cat1();
        let chosen: BTreeSet<String> =
            ["ws_src", "ws_credit", "ws_addr"].iter().map(|s| s.to_string()).collect();
        let g = compose(&chosen, &cat).unwrap();
        let order = g.topo_lex();
        assert_eq!(order[0], "ws_src");
        assert!(g.is_linear_extension(&order));
    }

    #[test]
    fn json_roundtrip_preserves_catalog() {
        let cat = cat1();
        let again = load_catalog(&to_json(&cat)).unwrap();
        assert_eq!(cat, again);
    }
}
