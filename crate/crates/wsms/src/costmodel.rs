//! Service-call cost model: per-call client/server cost formulas, plan cost
//! estimation over a pipeline of calls, and response-time profiling stats.
//!
//! All times are abstract milliseconds, all sizes bytes, all arithmetic f64.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::ServiceSpec;

/// Per-provider call primitives. The single "initiate" primitive is split
/// into a client and a server figure since both formulas charge it but on
/// different machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceProfile {
    /// Time to initialize the client-side modules activating a call.
    pub initiate_client: f64,
    /// Time to initialize the provider-side modules.
    pub initiate_server: f64,
    /// Message packing time per byte.
    pub packing: f64,
    /// Message unpacking time per byte.
    pub unpacking: f64,
    /// Fixed envelope size in bytes added to every transfer.
    pub packetize: f64,
    /// Transfer time per byte.
    pub sending: f64,
    /// Execution time of the service on the provider.
    pub serviceexec: f64,
}

impl ServiceProfile {
    pub fn zero() -> Self {
        ServiceProfile {
            initiate_client: 0.0,
            initiate_server: 0.0,
            packing: 0.0,
            unpacking: 0.0,
            packetize: 0.0,
            sending: 0.0,
            serviceexec: 0.0,
        }
    }

    pub fn fields(&self) -> [f64; 7] {
        [
            self.initiate_client,
            self.initiate_server,
            self.packing,
            self.unpacking,
            self.packetize,
            self.sending,
            self.serviceexec,
        ]
    }

    pub fn scaled(&self, k: f64) -> Self {
        ServiceProfile {
            initiate_client: self.initiate_client * k,
            initiate_server: self.initiate_server * k,
            packing: self.packing * k,
            unpacking: self.unpacking * k,
            packetize: self.packetize * k,
            sending: self.sending * k,
            serviceexec: self.serviceexec * k,
        }
    }
}

/// Byte sizes of one concrete call and its result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallMetrics {
    pub callsize: f64,
    pub resultsize: f64,
}

/// Provider-side cost of handling one call, including shipping the result
/// back: initiate + unpack request + execute + pack result + send result.
pub fn server_call_cost(p: &ServiceProfile, m: &CallMetrics) -> f64 {
    p.initiate_server
        + m.callsize * p.unpacking
        + p.serviceexec
        + m.resultsize * p.packing
        + (m.resultsize + p.packetize) * p.sending
}

/// Client-side total cost of one call: initiate + pack request + send it +
/// the full server-side cost + unpack the result.
pub fn client_call_cost(p: &ServiceProfile, m: &CallMetrics) -> f64 {
    p.initiate_client
        + m.callsize * p.packing
        + (m.callsize + p.packetize) * p.sending
        + server_call_cost(p, m)
        + m.resultsize * p.unpacking
}

/// Expected cost of one invocation of a service at its declared average
/// message sizes.
pub fn per_tuple_cost(ws: &ServiceSpec) -> f64 {
    client_call_cost(
        &ws.profile,
        &CallMetrics { callsize: ws.avg_callsize, resultsize: ws.avg_resultsize },
    )
}

/// One ordered element of a costed pipeline: a service invocation with its
/// effective per-call cost and effective selectivity (declared selectivity
/// times any predicate factors pushed onto the call).
#[derive(Debug, Clone, PartialEq)]
pub struct CostedCall {
    pub service: String,
    pub per_tuple_cost: f64,
    pub selectivity_eff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceCost {
    pub service: String,
    pub input_cardinality: f64,
    pub per_call_cost: f64,
    pub subtotal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub total: f64,
    pub per_service: Vec<ServiceCost>,
}

impl CostEstimate {
    pub fn zero() -> Self {
        CostEstimate { total: 0.0, per_service: Vec::new() }
    }
}

/// Pipeline cost: the k-th call runs once per tuple flowing into it, and the
/// tuple count is the product of the effective selectivities of everything
/// before it. Local relational work is costed at zero; only calls pay.
pub fn estimate_plan_cost(order: &[CostedCall], seed_cardinality: f64) -> CostEstimate {
    let mut cardinality = seed_cardinality;
    let mut per_service = Vec::with_capacity(order.len());
    let mut total = 0.0;
    for call in order {
        let subtotal = cardinality * call.per_tuple_cost;
        per_service.push(ServiceCost {
            service: call.service.clone(),
            input_cardinality: cardinality,
            per_call_cost: call.per_tuple_cost,
            subtotal,
        });
        total += subtotal;
        cardinality *= call.selectivity_eff;
    }
    CostEstimate { total, per_service }
}

/// Running response-time statistics per service, fed by the executor after
/// every simulated call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfilerStats {
    entries: BTreeMap<String, Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub count: u64,
    pub mean_time: f64,
    pub mean_resultsize: f64,
}

impl ProfilerStats {
    pub fn get(&self, id: &str) -> Option<&Observation> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Observation)> {
        self.entries.iter()
    }
}

/// Functional update: returns new stats with one more observation folded into
/// the cumulative means.
pub fn record_observation(
    stats: &ProfilerStats,
    id: &str,
    measured_time: f64,
    measured_resultsize: f64,
) -> ProfilerStats {
    let mut next = stats.clone();
    let obs = next.entries.entry(id.to_string()).or_insert(Observation {
        count: 0,
        mean_time: 0.0,
        mean_resultsize: 0.0,
    });
    let n = obs.count as f64;
    obs.mean_time = (obs.mean_time * n + measured_time) / (n + 1.0);
    obs.mean_resultsize = (obs.mean_resultsize * n + measured_resultsize) / (n + 1.0);
    obs.count += 1;
    next
}

/// Per-tuple cost with the declared `serviceexec` replaced by the profiled
/// mean call time minus the modeled transfer terms is not recoverable from a
/// total, so the substitution is coarser: the whole per-call figure becomes
/// the profiled mean response time once observations exist.
pub fn per_tuple_cost_profiled(ws: &ServiceSpec, stats: &ProfilerStats) -> f64 {
    match stats.get(&ws.id) {
        Some(obs) if obs.count > 0 => obs.mean_time,
        _ => per_tuple_cost(ws),
    }
}

#[cfg(test)]
pub(crate) fn profile_p0() -> ServiceProfile {
    ServiceProfile {
        initiate_client: 2.0,
        initiate_server: 1.0,
        packing: 0.01,
        unpacking: 0.02,
        packetize: 100.0,
        sending: 0.005,
        serviceexec: 30.0,
    }
}
