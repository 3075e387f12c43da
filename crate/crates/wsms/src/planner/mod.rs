//! Logical plans over service-call leaves, the pushdown heuristics, the
//! precedence-constrained greedy ordering, the brute-force optimal oracle and
//! plan linearization into executable primitives.

pub mod rules;
pub mod strategy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, ServiceGraph};
use crate::costmodel::{
    client_call_cost, estimate_plan_cost, CallMetrics, CostEstimate, CostedCall,
};
use crate::sqlfront::{Operand, Predicate, ValidatedQuery};

/// Largest service count the brute-force enumerator accepts.
pub const BRUTE_FORCE_MAX: usize = 9;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("instance too large for brute force: {n} services exceeds the limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("infeasible plan: {0}")]
    Infeasible(String),
    #[error("unknown service {0:?}")]
    UnknownService(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// A service-call leaf with its planner annotations: pushed-down predicates,
/// their combined selectivity factor, and the effective average result size
/// after projection pushdown.
#[derive(Debug, Clone, PartialEq)]
pub struct CallNode {
    pub id: String,
    pub pushed: Vec<Predicate>,
    pub factor: f64,
    pub eff_resultsize: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanNode {
    Call(CallNode),
    Select { preds: Vec<Predicate>, child: Box<PlanNode> },
    Project { attrs: Vec<String>, child: Box<PlanNode> },
    Join { on: Vec<String>, left: Box<PlanNode>, right: Box<PlanNode> },
}

impl PlanNode {
    pub fn schema(&self, cat: &Catalog) -> BTreeSet<String> {
        match self {
            PlanNode::Call(c) => cat
                .services
                .get(&c.id)
                .map(|s| s.all_attrs())
                .unwrap_or_default(),
            PlanNode::Select { child, .. } => child.schema(cat),
            PlanNode::Project { attrs, .. } => attrs.iter().cloned().collect(),
            PlanNode::Join { left, right, .. } => {
                let mut s = left.schema(cat);
                s.extend(right.schema(cat));
                s
            }
        }
    }

    /// Service-call leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&CallNode> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a CallNode>) {
        match self {
            PlanNode::Call(c) => out.push(c),
            PlanNode::Select { child, .. } | PlanNode::Project { child, .. } => {
                child.collect_leaves(out)
            }
            PlanNode::Join { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Stable canonical text, used for deterministic tie-breaking.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        self.write_canonical(&mut s);
        s
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            PlanNode::Call(c) => {
                let preds: Vec<String> = c.pushed.iter().map(|p| p.to_string()).collect();
                let _ = write!(
                    out,
                    "Call({};factor={};preds=[{}];eff={})",
                    c.id,
                    c.factor,
                    preds.join(","),
                    c.eff_resultsize
                );
            }
            PlanNode::Select { preds, child } => {
                let ps: Vec<String> = preds.iter().map(|p| p.to_string()).collect();
                let _ = write!(out, "Select[{}](", ps.join(","));
                child.write_canonical(out);
                out.push(')');
            }
            PlanNode::Project { attrs, child } => {
                let _ = write!(out, "Project[{}](", attrs.join(","));
                child.write_canonical(out);
                out.push(')');
            }
            PlanNode::Join { on, left, right } => {
                let _ = write!(out, "Join[{}](", on.join(","));
                left.write_canonical(out);
                out.push(',');
                right.write_canonical(out);
                out.push(')');
            }
        }
    }

    pub fn to_dot(&self) -> String {
        fn walk(node: &PlanNode, next: &mut usize, out: &mut String) -> usize {
            let me = *next;
            *next += 1;
            let label = match node {
                PlanNode::Call(c) => {
                    if c.factor != 1.0 {
                        format!("INVOKE {}\\nfactor={}", c.id, c.factor)
                    } else {
                        format!("INVOKE {}", c.id)
                    }
                }
                PlanNode::Select { preds, .. } => {
                    let ps: Vec<String> = preds.iter().map(|p| p.to_string()).collect();
                    format!("SELECT {}", ps.join(" AND "))
                }
                PlanNode::Project { attrs, .. } => format!("PROJECT {}", attrs.join(",")),
                PlanNode::Join { on, .. } => {
                    if on.is_empty() {
                        "JOIN cross".to_string()
                    } else {
                        format!("JOIN {}", on.join(","))
                    }
                }
            };
            let _ = writeln!(out, "  n{me} [label=\"{label}\"];");
            match node {
                PlanNode::Call(_) => {}
                PlanNode::Select { child, .. } | PlanNode::Project { child, .. } => {
                    let c = walk(child, next, out);
                    let _ = writeln!(out, "  n{me} -> n{c};");
                }
                PlanNode::Join { left, right, .. } => {
                    let l = walk(left, next, out);
                    let _ = writeln!(out, "  n{me} -> n{l};");
                    let r = walk(right, next, out);
                    let _ = writeln!(out, "  n{me} -> n{r};");
                }
            }
            me
        }
        let mut out = String::from("digraph plan {\n");
        let mut next = 0;
        walk(self, &mut next, &mut out);
        out.push_str("}\n");
        out
    }
}

// ---------------------------------------------------------------------------
// Execution plan

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Invoke { service: String, predicates: Vec<Predicate>, factor: f64, eff_resultsize: f64 },
    Join { on: Vec<String> },
    Select { pred: Predicate },
    Project { attrs: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionPlan {
    pub steps: Vec<Primitive>,
    /// Service invocation order; always a linear extension of the composed
    /// precedence graph.
    pub order: Vec<String>,
    pub estimate: CostEstimate,
    pub logical: PlanNode,
}

impl ExecutionPlan {
    /// Stable text form, one primitive per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            match step {
                Primitive::Invoke { service, factor, .. } => {
                    if *factor != 1.0 {
                        let _ = writeln!(out, "INVOKE {service} factor={factor}");
                    } else {
                        let _ = writeln!(out, "INVOKE {service}");
                    }
                }
                Primitive::Join { on } => {
                    if on.is_empty() {
                        let _ = writeln!(out, "JOIN cross");
                    } else {
                        let _ = writeln!(out, "JOIN {}", on.join(","));
                    }
                }
                Primitive::Select { pred } => {
                    let _ = writeln!(out, "SELECT {pred}");
                }
                Primitive::Project { attrs } => {
                    let _ = writeln!(out, "PROJECT {}", attrs.join(","));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Initial plan construction

/// Left-deep tree over the selected services in lexicographic-id topological
/// order, WHERE predicates stacked above the topmost join, projection at the
/// root. Same-attribute equality predicates are absorbed into the natural
/// join.
pub fn build_initial_plan(vq: &ValidatedQuery, g: &ServiceGraph, cat: &Catalog) -> PlanNode {
    let order = g.topo_lex();
    assemble(
        &order,
        &mut order
            .iter()
            .map(|id| {
                (
                    id.clone(),
                    CallNode {
                        id: id.clone(),
                        pushed: Vec::new(),
                        factor: 1.0,
                        eff_resultsize: cat.services[id].avg_resultsize,
                    },
                )
            })
            .collect(),
        &residual_predicates(vq),
        &vq.projection_attrs(),
        cat,
    )
}

fn residual_predicates(vq: &ValidatedQuery) -> Vec<Predicate> {
    vq.ast
        .predicates
        .iter()
        .filter(|p| !matches!(&p.rhs, Operand::Attr(a) if *a == p.lhs))
        .cloned()
        .collect()
}

/// Fold a left-deep join tree in the given order, place each predicate as a
/// Select just above the lowest node providing its attributes, and put the
/// final Project on top.
fn assemble(
    order: &[String],
    leaves: &mut BTreeMap<String, CallNode>,
    predicates: &[Predicate],
    projection: &[String],
    cat: &Catalog,
) -> PlanNode {
    let mut iter = order.iter();
    let first = iter.next().expect("plan over at least one service");
    let mut node = PlanNode::Call(leaves.remove(first).expect("leaf present"));
    for id in iter {
        let leaf = PlanNode::Call(leaves.remove(id).expect("leaf present"));
        let on: Vec<String> = node
            .schema(cat)
            .intersection(&leaf.schema(cat))
            .cloned()
            .collect();
        node = PlanNode::Join { on, left: Box::new(node), right: Box::new(leaf) };
    }
    for pred in predicates {
        node = place_select(node, pred.clone(), cat);
    }
    PlanNode::Project { attrs: projection.to_vec(), child: Box::new(node) }
}

fn place_select(node: PlanNode, pred: Predicate, cat: &Catalog) -> PlanNode {
    let covers = |n: &PlanNode| pred.attrs().is_subset(&n.schema(cat));
    match node {
        PlanNode::Join { on, left, right } if covers(&left) => PlanNode::Join {
            on,
            left: Box::new(place_select(*left, pred, cat)),
            right,
        },
        PlanNode::Join { on, left, right } if covers(&right) => PlanNode::Join {
            on,
            left,
            right: Box::new(place_select(*right, pred, cat)),
        },
        PlanNode::Select { preds, child } if covers(&child) => {
            PlanNode::Select { preds, child: Box::new(place_select(*child, pred, cat)) }
        }
        other => PlanNode::Select { preds: vec![pred], child: Box::new(other) },
    }
}

// ---------------------------------------------------------------------------
// Pushdown heuristics

/// Perform selection as early as possible: every single-attribute predicate
/// is attached to its producing leaf as a fabric-side filter with a
/// selectivity factor; everything else stays a Select at the lowest covering
/// node.
pub fn push_selections(
    plan: PlanNode,
    cat: &Catalog,
    producers: &BTreeMap<String, String>,
) -> PlanNode {
    let (mut stripped, preds) = strip_selects(plan);
    let mut residual = Vec::new();
    for pred in preds {
        let single = pred.attrs().len() == 1 && matches!(pred.rhs, Operand::Literal(_));
        match (single, producers.get(&pred.lhs)) {
            (true, Some(owner)) => {
                let factor = cat.predicate_factor(&pred.lhs, pred.op.symbol());
                attach_to_leaf(&mut stripped, owner, pred, factor);
            }
            _ => residual.push(pred),
        }
    }
    for pred in residual {
        stripped = match stripped {
            PlanNode::Project { attrs, child } => PlanNode::Project {
                attrs,
                child: Box::new(place_select(*child, pred, cat)),
            },
            other => place_select(other, pred, cat),
        };
    }
    stripped
}

fn strip_selects(node: PlanNode) -> (PlanNode, Vec<Predicate>) {
    match node {
        PlanNode::Select { preds, child } => {
            let (inner, mut collected) = strip_selects(*child);
            collected.extend(preds);
            (inner, collected)
        }
        PlanNode::Project { attrs, child } => {
            let (inner, collected) = strip_selects(*child);
            (PlanNode::Project { attrs, child: Box::new(inner) }, collected)
        }
        PlanNode::Join { on, left, right } => {
            let (l, mut lp) = strip_selects(*left);
            let (r, rp) = strip_selects(*right);
            lp.extend(rp);
            (PlanNode::Join { on, left: Box::new(l), right: Box::new(r) }, lp)
        }
        leaf => (leaf, Vec::new()),
    }
}

fn attach_to_leaf(node: &mut PlanNode, id: &str, pred: Predicate, factor: f64) {
    match node {
        PlanNode::Call(c) if c.id == id => {
            c.pushed.push(pred);
            c.factor *= factor;
        }
        PlanNode::Call(_) => {}
        PlanNode::Select { child, .. } | PlanNode::Project { child, .. } => {
            attach_to_leaf(child, id, pred, factor)
        }
        PlanNode::Join { left, right, .. } => {
            attach_to_leaf(left, id, pred.clone(), factor);
            attach_to_leaf(right, id, pred, factor);
        }
    }
}

/// Perform projections earlier: shrink each leaf's effective result size to
/// the share of its output width still needed downstream (final projection,
/// residual predicates, join attributes, and later services' inputs).
pub fn push_projections(plan: PlanNode, cat: &Catalog) -> PlanNode {
    let mut needed: BTreeSet<String> = BTreeSet::new();
    collect_needed(&plan, cat, &mut needed);
    let mut plan = plan;
    shrink_leaves(&mut plan, cat, &needed);
    plan
}

fn collect_needed(node: &PlanNode, cat: &Catalog, out: &mut BTreeSet<String>) {
    match node {
        PlanNode::Call(c) => {
            if let Some(ws) = cat.services.get(&c.id) {
                out.extend(ws.input_attrs.iter().cloned());
            }
        }
        PlanNode::Select { preds, child } => {
            for p in preds {
                out.extend(p.attrs());
            }
            collect_needed(child, cat, out);
        }
        PlanNode::Project { attrs, child } => {
            out.extend(attrs.iter().cloned());
            collect_needed(child, cat, out);
        }
        PlanNode::Join { on, left, right } => {
            out.extend(on.iter().cloned());
            collect_needed(left, cat, out);
            collect_needed(right, cat, out);
        }
    }
}

fn shrink_leaves(node: &mut PlanNode, cat: &Catalog, needed: &BTreeSet<String>) {
    match node {
        PlanNode::Call(c) => {
            let Some(ws) = cat.services.get(&c.id) else { return };
            let full: f64 = ws.output_attrs.iter().map(|a| cat.width(a)).sum();
            if full > 0.0 {
                let kept: f64 = ws
                    .output_attrs
                    .iter()
                    .filter(|a| needed.contains(*a))
                    .map(|a| cat.width(a))
                    .sum();
                c.eff_resultsize = ws.avg_resultsize * kept / full;
            }
        }
        PlanNode::Select { child, .. } | PlanNode::Project { child, .. } => {
            shrink_leaves(child, cat, needed)
        }
        PlanNode::Join { left, right, .. } => {
            shrink_leaves(left, cat, needed);
            shrink_leaves(right, cat, needed);
        }
    }
}

// ---------------------------------------------------------------------------
// Ordering

/// Per-call planning figures derived from a leaf's annotations.
pub fn leaf_costed_call(c: &CallNode, cat: &Catalog) -> CostedCall {
    let ws = &cat.services[&c.id];
    CostedCall {
        service: c.id.clone(),
        per_tuple_cost: client_call_cost(
            &ws.profile,
            &CallMetrics { callsize: ws.avg_callsize, resultsize: c.eff_resultsize },
        ),
        selectivity_eff: ws.selectivity * c.factor,
    }
}

pub fn plan_costed_calls(plan: &PlanNode, cat: &Catalog) -> Vec<CostedCall> {
    plan.leaves().iter().map(|c| leaf_costed_call(c, cat)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallInfo {
    pub per_tuple_cost: f64,
    pub selectivity_eff: f64,
}

/// Rank-based greedy: among services whose predecessors are all placed, pick
/// the one with minimum cost/(1-σ). Services with σ >= 1 rank after every
/// finite rank, ordered by (cost, id). All ties break by id.
pub fn greedy_order(g: &ServiceGraph, info: &BTreeMap<String, CallInfo>) -> Vec<String> {
    let mut placed: BTreeSet<&str> = BTreeSet::new();
    let mut order = Vec::with_capacity(g.nodes.len());
    while order.len() < g.nodes.len() {
        let eligible = g.nodes.iter().filter(|n| {
            !placed.contains(n.as_str())
                && g.predecessors(n).iter().all(|p| placed.contains(p))
        });
        let best = eligible
            .min_by(|a, b| rank_key(a, info).partial_cmp(&rank_key(b, info)).unwrap())
            .expect("acyclic graph always has an eligible service");
        placed.insert(best.as_str());
        order.push(best.clone());
    }
    order
}

/// Comparison key: expanding services (class 1) come after every reductive
/// one (class 0). f64 components are finite by construction.
fn rank_key<'a>(id: &'a str, info: &BTreeMap<String, CallInfo>) -> (u8, f64, f64, &'a str) {
    let i = &info[id];
    if i.selectivity_eff < 1.0 {
        (0, i.per_tuple_cost / (1.0 - i.selectivity_eff), 0.0, id)
    } else {
        (1, i.per_tuple_cost, 0.0, id)
    }
}

pub fn plan_call_info(plan: &PlanNode, cat: &Catalog) -> BTreeMap<String, CallInfo> {
    plan.leaves()
        .iter()
        .map(|c| {
            let cc = leaf_costed_call(c, cat);
            (c.id.clone(), CallInfo {
                per_tuple_cost: cc.per_tuple_cost,
                selectivity_eff: cc.selectivity_eff,
            })
        })
        .collect()
}

/// Rebuild a plan left-deep in the given invocation order, preserving leaf
/// annotations, residual Selects and the root projection.
pub fn reorder_plan(plan: PlanNode, order: &[String], cat: &Catalog) -> PlanNode {
    let (leaves, residual, projection) = decompose(plan);
    let mut leaves = leaves;
    assemble(order, &mut leaves, &residual, &projection, cat)
}

fn decompose(plan: PlanNode) -> (BTreeMap<String, CallNode>, Vec<Predicate>, Vec<String>) {
    fn walk(node: PlanNode, leaves: &mut BTreeMap<String, CallNode>, preds: &mut Vec<Predicate>) {
        match node {
            PlanNode::Call(c) => {
                leaves.insert(c.id.clone(), c);
            }
            PlanNode::Select { preds: ps, child } => {
                preds.extend(ps);
                walk(*child, leaves, preds);
            }
            PlanNode::Project { child, .. } => walk(*child, leaves, preds),
            PlanNode::Join { left, right, .. } => {
                walk(*left, leaves, preds);
                walk(*right, leaves, preds);
            }
        }
    }
    let projection = match &plan {
        PlanNode::Project { attrs, .. } => attrs.clone(),
        _ => Vec::new(),
    };
    let mut leaves = BTreeMap::new();
    let mut preds = Vec::new();
    walk(plan, &mut leaves, &mut preds);
    (leaves, preds, projection)
}

// ---------------------------------------------------------------------------
// Brute-force oracle

/// Enumerate every linear extension of the graph and return a minimum-cost
/// order; ties resolve to the lexicographically smallest sequence.
pub fn brute_force_optimal(
    g: &ServiceGraph,
    info: &BTreeMap<String, CallInfo>,
) -> Result<(Vec<String>, CostEstimate), PlanError> {
    let n = g.nodes.len();
    if n > BRUTE_FORCE_MAX {
        return Err(PlanError::TooLarge { n, max: BRUTE_FORCE_MAX });
    }
    if n == 0 {
        return Ok((Vec::new(), CostEstimate::zero()));
    }
    let mut best: Option<(f64, Vec<String>)> = None;
    let mut prefix: Vec<String> = Vec::with_capacity(n);
    let mut placed: BTreeSet<String> = BTreeSet::new();
    enumerate(g, info, &mut prefix, &mut placed, 0.0, 1.0, &mut best);
    let (_, order) = best.expect("acyclic graph has at least one linear extension");
    let calls: Vec<CostedCall> = order
        .iter()
        .map(|id| {
            let i = &info[id];
            CostedCall {
                service: id.clone(),
                per_tuple_cost: i.per_tuple_cost,
                selectivity_eff: i.selectivity_eff,
            }
        })
        .collect();
    let estimate = estimate_plan_cost(&calls, 1.0);
    Ok((order, estimate))
}

fn enumerate(
    g: &ServiceGraph,
    info: &BTreeMap<String, CallInfo>,
    prefix: &mut Vec<String>,
    placed: &mut BTreeSet<String>,
    cost: f64,
    cardinality: f64,
    best: &mut Option<(f64, Vec<String>)>,
) {
    if prefix.len() == g.nodes.len() {
        // Lex order falls out of the sorted frontier: the first minimum seen
        // is the lexicographically smallest one.
        if best.as_ref().is_none_or(|(b, _)| cost < *b - 1e-15) {
            *best = Some((cost, prefix.clone()));
        }
        return;
    }
    let frontier: Vec<String> = g
        .nodes
        .iter()
        .filter(|n| {
            !placed.contains(*n) && g.predecessors(n).iter().all(|p| placed.contains(*p))
        })
        .cloned()
        .collect();
    for id in frontier {
        let i = &info[&id];
        prefix.push(id.clone());
        placed.insert(id.clone());
        enumerate(
            g,
            info,
            prefix,
            placed,
            cost + cardinality * i.per_tuple_cost,
            cardinality * i.selectivity_eff,
            best,
        );
        placed.remove(&id);
        prefix.pop();
    }
}

// ---------------------------------------------------------------------------
// Subtree optimization

/// Bottom-up pass over every maximal subtree of at most two service calls:
/// enumerate the bounded closure of the equivalence rules, keep the variant
/// with minimum estimated cost among precedence-feasible ones, break ties by
/// canonical text.
pub fn optimize_subtrees(plan: PlanNode, cat: &Catalog, g: &ServiceGraph) -> PlanNode {
    fn walk(node: PlanNode, cat: &Catalog, g: &ServiceGraph) -> PlanNode {
        if node.leaves().len() <= 2 {
            return best_variant(node, cat, g);
        }
        match node {
            PlanNode::Select { preds, child } => {
                PlanNode::Select { preds, child: Box::new(walk(*child, cat, g)) }
            }
            PlanNode::Project { attrs, child } => {
                PlanNode::Project { attrs, child: Box::new(walk(*child, cat, g)) }
            }
            PlanNode::Join { on, left, right } => PlanNode::Join {
                on,
                left: Box::new(walk(*left, cat, g)),
                right: Box::new(walk(*right, cat, g)),
            },
            leaf => leaf,
        }
    }
    walk(plan, cat, g)
}

fn best_variant(fragment: PlanNode, cat: &Catalog, g: &ServiceGraph) -> PlanNode {
    let variants = rules::closure(&fragment, cat, rules::CLOSURE_CAP);
    let mut best: Option<(f64, String, PlanNode)> = None;
    for v in variants {
        if !fragment_feasible(&v, g) {
            continue;
        }
        let cost = estimate_plan_cost(&plan_costed_calls(&v, cat), 1.0).total;
        let key = v.canonical();
        let better = match &best {
            None => true,
            Some((bc, bk, _)) => cost < bc - 1e-12 || ((cost - bc).abs() <= 1e-12 && key < *bk),
        };
        if better {
            best = Some((cost, key, v));
        }
    }
    best.map(|(_, _, v)| v).unwrap_or(fragment)
}

/// Internal precedence edges must be respected by the fragment's
/// left-to-right invocation order.
fn fragment_feasible(fragment: &PlanNode, g: &ServiceGraph) -> bool {
    let order: Vec<&str> = fragment.leaves().iter().map(|c| c.id.as_str()).collect();
    for (a, b) in &g.edges {
        let pa = order.iter().position(|x| x == a);
        let pb = order.iter().position(|x| x == b);
        if let (Some(pa), Some(pb)) = (pa, pb) {
            if pa > pb {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Linearization

/// Flatten a logical plan into evaluation primitives. Fails if some service
/// is invoked before its input attributes are available.
pub fn linearize(plan: &PlanNode, cat: &Catalog) -> Result<ExecutionPlan, PlanError> {
    let mut steps = Vec::new();
    let mut order = Vec::new();
    let mut available: BTreeSet<String> = BTreeSet::new();
    lin(plan, cat, true, &mut steps, &mut order, &mut available)?;
    let calls: Vec<CostedCall> = steps
        .iter()
        .filter_map(|s| match s {
            Primitive::Invoke { service, factor, eff_resultsize, .. } => {
                let ws = &cat.services[service];
                Some(CostedCall {
                    service: service.clone(),
                    per_tuple_cost: client_call_cost(
                        &ws.profile,
                        &CallMetrics { callsize: ws.avg_callsize, resultsize: *eff_resultsize },
                    ),
                    selectivity_eff: ws.selectivity * factor,
                })
            }
            _ => None,
        })
        .collect();
    let estimate = estimate_plan_cost(&calls, 1.0);
    Ok(ExecutionPlan { steps, order, estimate, logical: plan.clone() })
}

fn lin(
    node: &PlanNode,
    cat: &Catalog,
    top: bool,
    steps: &mut Vec<Primitive>,
    order: &mut Vec<String>,
    available: &mut BTreeSet<String>,
) -> Result<(), PlanError> {
    match node {
        PlanNode::Call(c) => {
            let ws = cat
                .services
                .get(&c.id)
                .ok_or_else(|| PlanError::UnknownService(c.id.clone()))?;
            if let Some(missing) = ws.input_attrs.iter().find(|a| !available.contains(*a)) {
                return Err(PlanError::Infeasible(format!(
                    "service {:?} invoked before its input {:?} is available",
                    c.id, missing
                )));
            }
            let first = order.is_empty();
            let on: Vec<String> = available
                .intersection(&ws.all_attrs())
                .cloned()
                .collect();
            steps.push(Primitive::Invoke {
                service: c.id.clone(),
                predicates: c.pushed.clone(),
                factor: c.factor,
                eff_resultsize: c.eff_resultsize,
            });
            if !first {
                steps.push(Primitive::Join { on });
            }
            available.extend(ws.all_attrs());
            order.push(c.id.clone());
            Ok(())
        }
        PlanNode::Select { preds, child } => {
            lin(child, cat, false, steps, order, available)?;
            for p in preds {
                steps.push(Primitive::Select { pred: p.clone() });
            }
            Ok(())
        }
        PlanNode::Project { attrs, child } => {
            // Only the root projection runs against the tuple accumulator.
            // Inner projections are planner annotations: their width
            // reduction is already carried by the leaves' effective result
            // sizes, and projecting the fused accumulator mid-pipeline would
            // drop columns that other branches still need.
            lin(child, cat, false, steps, order, available)?;
            if top {
                steps.push(Primitive::Project { attrs: attrs.clone() });
            }
            Ok(())
        }
        PlanNode::Join { left, right, .. } => {
            lin(left, cat, false, steps, order, available)?;
            lin(right, cat, false, steps, order, available)
        }
    }
}
