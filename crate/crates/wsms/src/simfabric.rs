//! Deterministic simulated service fabric. Answers invocations from the
//! catalog's inline datasets and synthesizes call timings from the service
//! profile with seeded multiplicative jitter.
//!
//! Timing stream: ChaCha8, seeded per (run seed, service id, per-service
//! invocation index) through an FNV-1a mix, so a full trace is a pure
//! function of (catalog, query, seed, jitter).

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::catalog::Catalog;
use crate::costmodel::{client_call_cost, CallMetrics};
use crate::relation::{Relation, Value};
use crate::sqlfront::{Predicate, PredicateEvalError};

/// Fixed envelope overhead in bytes added to every call, so even a
/// zero-attribute probe has a nonzero call size.
pub const ENVELOPE_BYTES: f64 = 64.0;

#[derive(Debug, Error)]
pub enum FabricError {
    #[error("unknown service {0:?}")]
    UnknownService(String),
    #[error("binding for service {service:?} is missing input attribute {attr:?}")]
    MissingInput { service: String, attr: String },
    #[error("service {service}: {source}")]
    Predicate {
        service: String,
        #[source]
        source: PredicateEvalError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub invocation: u64,
    pub service: String,
    pub callsize: f64,
    pub resultsize: f64,
    pub time: f64,
}

pub struct SimFabric {
    catalog: Catalog,
    jitter: f64,
    seed: u64,
    counters: BTreeMap<String, u64>,
    trace: Vec<TraceEntry>,
}

impl SimFabric {
    pub fn new(catalog: &Catalog, seed: u64, jitter: f64) -> Self {
        assert!((0.0..1.0).contains(&jitter), "jitter must be in [0, 1)");
        SimFabric {
            catalog: catalog.clone(),
            jitter,
            seed,
            counters: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    /// Back to the initial state under a (possibly new) seed. Idempotent.
    pub fn reset(&mut self, seed: u64) {
        self.seed = seed;
        self.counters.clear();
        self.trace.clear();
    }

    /// One service call: dataset rows matching the binding on the service's
    /// input attributes, filtered by any pushed predicates provider-side.
    pub fn invoke(
        &mut self,
        id: &str,
        binding: &BTreeMap<String, Value>,
        predicates: &[Predicate],
    ) -> Result<(Relation, CallMetrics, f64), FabricError> {
        let ws = self
            .catalog
            .services
            .get(id)
            .ok_or_else(|| FabricError::UnknownService(id.to_string()))?;
        for attr in &ws.input_attrs {
            if !binding.contains_key(attr) {
                return Err(FabricError::MissingInput {
                    service: id.to_string(),
                    attr: attr.clone(),
                });
            }
        }
        let mut rows = Vec::new();
        'rows: for row in &ws.dataset.rows {
            for attr in &ws.input_attrs {
                let col = ws.dataset.col(attr).expect("dataset schema checked at load");
                if row[col] != binding[attr] {
                    continue 'rows;
                }
            }
            for pred in predicates {
                let keep = pred
                    .eval(|a| ws.dataset.col(a).map(|c| &row[c]))
                    .map_err(|source| FabricError::Predicate {
                        service: id.to_string(),
                        source,
                    })?;
                if !keep {
                    continue 'rows;
                }
            }
            rows.push(row.clone());
        }
        let callsize: f64 =
            ws.input_attrs.iter().map(|a| self.catalog.width(a)).sum::<f64>() + ENVELOPE_BYTES;
        let result_width: f64 = ws.output_attrs.iter().map(|a| self.catalog.width(a)).sum();
        let metrics = CallMetrics {
            callsize,
            resultsize: rows.len() as f64 * result_width,
        };
        let base = client_call_cost(&ws.profile, &metrics);
        let index = self.counters.entry(id.to_string()).or_insert(0);
        let time = if self.jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(call_seed(self.seed, id, *index));
            let u: f64 = rng.random_range(-self.jitter..=self.jitter);
            base * (1.0 + u)
        } else {
            base
        };
        *index += 1;
        self.trace.push(TraceEntry {
            invocation: self.trace.len() as u64,
            service: id.to_string(),
            callsize: metrics.callsize,
            resultsize: metrics.resultsize,
            time,
        });
        let result = Relation { schema: ws.dataset.schema.clone(), rows };
        Ok((result, metrics, time))
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("invocation,service,callsize,resultsize,time\n");
        for e in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.invocation, e.service, e.callsize, e.resultsize, e.time
            ));
        }
        out
    }
}

fn call_seed(seed: u64, id: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().iter().chain(id.as_bytes()).chain(index.to_le_bytes().iter()) {
        h ^= *b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::cat1;

    #[test]
    fn zero_jitter_time_is_exact() {
        let cat = cat1();
        let mut fab = SimFabric::new(&cat, 42, 0.0);
        let (rows, metrics, time) = fab.invoke("ws_src", &BTreeMap::new(), &[]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(metrics.callsize, 64.0);
        assert_eq!(metrics.resultsize, 4.0 * 16.0);
        let ws = &cat.services["ws_src"];
        let expect = client_call_cost(&ws.profile, &metrics);
        assert!((time - expect).abs() < 1e-9);
    }

    #[test]
    fn p0_metrics_200_1000_cost_exactly_76() {
        // inputs 136 + 64 envelope = callsize 200; 4 rows * 250 = resultsize 1000
        let text = r#"{
            "services": [
                {"id":"ws_x","capability":"x","inputs":["k"],"outputs":["v"],"selectivity":4.0,
                 "profile":{"initiate_client":2.0,"initiate_server":1.0,"packing":0.01,"unpacking":0.02,
                            "packetize":100.0,"sending":0.005,"serviceexec":30.0},
                 "avg_callsize":200.0,"avg_resultsize":1000.0,
                 "dataset":[{"k":1,"v":10},{"k":1,"v":11},{"k":1,"v":12},{"k":1,"v":13}]}
            ],
            "attr_widths": {"k":136.0,"v":250.0}
        }"#;
        let cat = crate::catalog::load_catalog(text).unwrap();
        let mut fab = SimFabric::new(&cat, 0, 0.0);
        let binding: BTreeMap<String, Value> = [("k".to_string(), Value::Int(1))].into();
        let (rows, metrics, time) = fab.invoke("ws_x", &binding, &[]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(metrics.callsize, 200.0);
        assert_eq!(metrics.resultsize, 1000.0);
        assert!((time - 76.0).abs() < 1e-9);
    }

    #[test]
    fn empty_match_costs_zero_resultsize() {
        let cat = cat1();
        let mut fab = SimFabric::new(&cat, 0, 0.0);
        let binding: BTreeMap<String, Value> = [("cid".to_string(), Value::Int(99))].into();
        let (rows, metrics, time) = fab.invoke("ws_credit", &binding, &[]).unwrap();
        assert!(rows.is_empty());
        assert_eq!(metrics.resultsize, 0.0);
        let ws = &cat.services["ws_credit"];
        let expect = client_call_cost(
            &ws.profile,
            &CallMetrics { callsize: metrics.callsize, resultsize: 0.0 },
        );
        assert!((time - expect).abs() < 1e-9);
    }

    #[test]
    fn binding_filters_on_input_attrs() {
        let cat = cat1();
        let mut fab = SimFabric::new(&cat, 0, 0.0);
        let binding: BTreeMap<String, Value> = [("cid".to_string(), Value::Int(1))].into();
        let (rel, ..) = fab.invoke("ws_credit", &binding, &[]).unwrap();
        assert_eq!(rel.len(), 1);
        let cid = rel.col("cid").unwrap();
        assert_eq!(rel.rows[0][cid], Value::Int(1));
    }

    #[test]
    fn missing_input_attribute_errors() {
        let cat = cat1();
        let mut fab = SimFabric::new(&cat, 0, 0.0);
        assert!(matches!(
            fab.invoke("ws_credit", &BTreeMap::new(), &[]),
            Err(FabricError::MissingInput { .. })
        ));
    }

    #[test]
    fn unknown_service_errors() {
        let cat = cat1();
        let mut fab = SimFabric::new(&cat, 0, 0.0);
        assert!(matches!(
            fab.invoke("nope", &BTreeMap::new(), &[]),
            Err(FabricError::UnknownService(_))
        ));
    }

    #[test]
    fn same_seed_replays_identically() {
        let cat = cat1();
        let run = |seed| {
            let mut fab = SimFabric::new(&cat, seed, 0.1);
            for _ in 0..3 {
                fab.invoke("ws_src", &BTreeMap::new(), &[]).unwrap();
            }
            fab.trace().to_vec()
        };
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn different_seeds_differ_under_jitter() {
        let cat = cat1();
        let times = |seed| {
            let mut fab = SimFabric::new(&cat, seed, 0.1);
            fab.invoke("ws_src", &BTreeMap::new(), &[]).unwrap().2
        };
        assert!(times(1) != times(2));
    }

    #[test]
    fn reset_is_idempotent_and_replays() {
        let cat = cat1();
        let mut fab = SimFabric::new(&cat, 3, 0.2);
        fab.invoke("ws_src", &BTreeMap::new(), &[]).unwrap();
        let first = fab.trace().to_vec();
        fab.reset(3);
        fab.reset(3);
        assert!(fab.trace().is_empty());
        fab.invoke("ws_src", &BTreeMap::new(), &[]).unwrap();
        assert_eq!(fab.trace(), first.as_slice());
    }

    #[test]
    fn trace_orders_invocations() {
        let cat = cat1();
        let mut fab = SimFabric::new(&cat, 0, 0.0);
        assert!(fab.trace().is_empty());
        let binding: BTreeMap<String, Value> = [("cid".to_string(), Value::Int(1))].into();
        fab.invoke("ws_src", &BTreeMap::new(), &[]).unwrap();
        fab.invoke("ws_credit", &binding, &[]).unwrap();
        fab.invoke("ws_addr", &binding, &[]).unwrap();
        let services: Vec<&str> = fab.trace().iter().map(|e| e.service.as_str()).collect();
        assert_eq!(services, vec!["ws_src", "ws_credit", "ws_addr"]);
        assert_eq!(fab.trace()[2].invocation, 2);
    }
}
