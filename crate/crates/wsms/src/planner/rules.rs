//! One- and two-operand equivalence rules and their bounded closure. Every
//! rule preserves the output multiset of the expression it rewrites.

use std::collections::BTreeSet;

use crate::catalog::Catalog;

use super::PlanNode;

/// Upper bound on the number of variants enumerated per subtree.
pub const CLOSURE_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// σ(p1 ∧ p2)(x) ≡ σ(p1)(σ(p2)(x)), both directions.
    SelectCascade,
    /// σ(p1)(σ(p2)(x)) ≡ σ(p2)(σ(p1)(x)).
    SelectCommute,
    /// x ⋈ y ≡ y ⋈ x.
    JoinCommute,
    /// σ(p)(x ⋈ y) ≡ σ(p)(x) ⋈ y when p reads only x, both directions.
    SelectOverJoin,
    /// π(a1)(π(a2)(x)) ≡ π(a1)(x) when a1 ⊆ a2.
    ProjectCascade,
    /// π(a)(x ⋈ y) ≡ π(a)(π(ax)(x) ⋈ π(ay)(y)), join attributes retained.
    ProjectOverJoin,
}

pub const ALL_RULES: [Rule; 6] = [
    Rule::SelectCascade,
    Rule::SelectCommute,
    Rule::JoinCommute,
    Rule::SelectOverJoin,
    Rule::ProjectCascade,
    Rule::ProjectOverJoin,
];

/// All single-step rewrites of `node` (at the top or anywhere below) under
/// one rule.
pub fn rewrites(rule: Rule, node: &PlanNode, cat: &Catalog) -> Vec<PlanNode> {
    let mut out = top_rewrites(rule, node, cat);
    match node {
        PlanNode::Call(_) => {}
        PlanNode::Select { preds, child } => {
            for c in rewrites(rule, child, cat) {
                out.push(PlanNode::Select { preds: preds.clone(), child: Box::new(c) });
            }
        }
        PlanNode::Project { attrs, child } => {
            for c in rewrites(rule, child, cat) {
                out.push(PlanNode::Project { attrs: attrs.clone(), child: Box::new(c) });
            }
        }
        PlanNode::Join { on, left, right } => {
            for l in rewrites(rule, left, cat) {
                out.push(PlanNode::Join {
                    on: on.clone(),
                    left: Box::new(l),
                    right: right.clone(),
                });
            }
            for r in rewrites(rule, right, cat) {
                out.push(PlanNode::Join {
                    on: on.clone(),
                    left: left.clone(),
                    right: Box::new(r),
                });
            }
        }
    }
    out
}

fn top_rewrites(rule: Rule, node: &PlanNode, cat: &Catalog) -> Vec<PlanNode> {
    let mut out = Vec::new();
    match (rule, node) {
        (Rule::SelectCascade, PlanNode::Select { preds, child }) => {
            // split off the first predicate
            if preds.len() >= 2 {
                out.push(PlanNode::Select {
                    preds: vec![preds[0].clone()],
                    child: Box::new(PlanNode::Select {
                        preds: preds[1..].to_vec(),
                        child: child.clone(),
                    }),
                });
            }
            // merge with a nested select
            if let PlanNode::Select { preds: inner, child: grand } = &**child {
                let mut merged = preds.clone();
                merged.extend(inner.clone());
                out.push(PlanNode::Select { preds: merged, child: grand.clone() });
            }
        }
        (Rule::SelectCommute, PlanNode::Select { preds, child }) => {
            if let PlanNode::Select { preds: inner, child: grand } = &**child {
                out.push(PlanNode::Select {
                    preds: inner.clone(),
                    child: Box::new(PlanNode::Select {
                        preds: preds.clone(),
                        child: grand.clone(),
                    }),
                });
            }
        }
        (Rule::JoinCommute, PlanNode::Join { on, left, right }) => {
            out.push(PlanNode::Join { on: on.clone(), left: right.clone(), right: left.clone() });
        }
        (Rule::SelectOverJoin, PlanNode::Select { preds, child }) => {
            // push one predicate onto the side that covers it
            if let PlanNode::Join { on, left, right } = &**child {
                for (i, p) in preds.iter().enumerate() {
                    let attrs = p.attrs();
                    for (into_left, side) in [(true, left), (false, right)] {
                        if attrs.is_subset(&side.schema(cat)) {
                            let pushed = PlanNode::Select {
                                preds: vec![p.clone()],
                                child: side.clone(),
                            };
                            let join = if into_left {
                                PlanNode::Join {
                                    on: on.clone(),
                                    left: Box::new(pushed),
                                    right: right.clone(),
                                }
                            } else {
                                PlanNode::Join {
                                    on: on.clone(),
                                    left: left.clone(),
                                    right: Box::new(pushed),
                                }
                            };
                            let mut rest = preds.clone();
                            rest.remove(i);
                            out.push(if rest.is_empty() {
                                join
                            } else {
                                PlanNode::Select { preds: rest, child: Box::new(join) }
                            });
                        }
                    }
                }
            }
        }
        (Rule::SelectOverJoin, PlanNode::Join { on, left, right }) => {
            // pull a one-sided select back above the join
            if let PlanNode::Select { preds, child } = &**left {
                out.push(PlanNode::Select {
                    preds: preds.clone(),
                    child: Box::new(PlanNode::Join {
                        on: on.clone(),
                        left: child.clone(),
                        right: right.clone(),
                    }),
                });
            }
            if let PlanNode::Select { preds, child } = &**right {
                out.push(PlanNode::Select {
                    preds: preds.clone(),
                    child: Box::new(PlanNode::Join {
                        on: on.clone(),
                        left: left.clone(),
                        right: child.clone(),
                    }),
                });
            }
        }
        (Rule::ProjectCascade, PlanNode::Project { attrs, child }) => {
            if let PlanNode::Project { attrs: inner, child: grand } = &**child {
                let outer: BTreeSet<&String> = attrs.iter().collect();
                let avail: BTreeSet<&String> = inner.iter().collect();
                if outer.is_subset(&avail) {
                    out.push(PlanNode::Project { attrs: attrs.clone(), child: grand.clone() });
                }
            }
        }
        (Rule::ProjectOverJoin, PlanNode::Project { attrs, child }) => {
            if let PlanNode::Join { on, left, right } = &**child {
                let mut wanted: BTreeSet<String> = attrs.iter().cloned().collect();
                wanted.extend(on.iter().cloned());
                let narrow = |side: &PlanNode| -> Vec<String> {
                    side.schema(cat).intersection(&wanted).cloned().collect()
                };
                let la = narrow(left);
                let ra = narrow(right);
                let lschema = left.schema(cat);
                let rschema = right.schema(cat);
                if la.len() < lschema.len() || ra.len() < rschema.len() {
                    out.push(PlanNode::Project {
                        attrs: attrs.clone(),
                        child: Box::new(PlanNode::Join {
                            on: on.clone(),
                            left: Box::new(PlanNode::Project {
                                attrs: la,
                                child: left.clone(),
                            }),
                            right: Box::new(PlanNode::Project {
                                attrs: ra,
                                child: right.clone(),
                            }),
                        }),
                    });
                }
            }
        }
        _ => {}
    }
    out
}

/// Breadth-first closure of all six rules starting from `seed`, deduplicated
/// by canonical text, capped at `cap` variants. The seed itself is included.
pub fn closure(seed: &PlanNode, cat: &Catalog, cap: usize) -> Vec<PlanNode> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut variants: Vec<PlanNode> = Vec::new();
    let mut queue: Vec<PlanNode> = vec![seed.clone()];
    seen.insert(seed.canonical());
    while let Some(node) = queue.pop() {
        variants.push(node.clone());
        if variants.len() + queue.len() >= cap {
            variants.extend(queue);
            variants.truncate(cap);
            return variants;
        }
        for rule in ALL_RULES {
            for rewritten in rewrites(rule, &node, cat) {
                if seen.len() >= cap {
                    break;
                }
                let key = rewritten.canonical();
                if seen.insert(key) {
                    queue.push(rewritten);
                }
            }
        }
    }
    variants
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::cat1;
    use crate::planner::CallNode;
    use crate::relation::Value;
    use crate::sqlfront::{Comparator, Operand, Predicate};

    fn leaf(id: &str) -> PlanNode {
        PlanNode::Call(CallNode {
            id: id.into(),
            pushed: vec![],
            factor: 1.0,
            eff_resultsize: 0.0,
        })
    }

    fn pred(attr: &str, op: Comparator, v: i64) -> Predicate {
        Predicate { lhs: attr.into(), op, rhs: Operand::Literal(Value::Int(v)) }
    }

    #[test]
    fn join_commute_is_involutive() {
        let cat = cat1();
        let j = PlanNode::Join {
            on: vec!["cid".into()],
            left: Box::new(leaf("ws_src")),
            right: Box::new(leaf("ws_credit")),
        };
        let once = &rewrites(Rule::JoinCommute, &j, &cat)[0];
        let twice = &rewrites(Rule::JoinCommute, once, &cat)[0];
        assert_eq!(*twice, j);
    }

    #[test]
    fn select_cascade_splits_and_merges() {
        let cat = cat1();
        let merged = PlanNode::Select {
            preds: vec![pred("score", Comparator::Gt, 600), pred("cid", Comparator::Lt, 3)],
            child: Box::new(leaf("ws_credit")),
        };
        let split = rewrites(Rule::SelectCascade, &merged, &cat)
            .into_iter()
            .find(|n| matches!(n, PlanNode::Select { preds, .. } if preds.len() == 1))
            .unwrap();
        let remerged = rewrites(Rule::SelectCascade, &split, &cat)
            .into_iter()
            .find(|n| matches!(n, PlanNode::Select { preds, .. } if preds.len() == 2))
            .unwrap();
        assert_eq!(remerged, merged);
    }

    #[test]
    fn select_over_join_pushes_one_sided_predicate() {
        let cat = cat1();
        let plan = PlanNode::Select {
            preds: vec![pred("score", Comparator::Gt, 600)],
            child: Box::new(PlanNode::Join {
                on: vec!["cid".into()],
                left: Box::new(leaf("ws_src")),
                right: Box::new(leaf("ws_credit")),
            }),
        };
        let pushed = rewrites(Rule::SelectOverJoin, &plan, &cat);
        assert_eq!(pushed.len(), 1);
        assert!(pushed[0].canonical().starts_with("Join"));
    }

    #[test]
    fn project_cascade_collapses() {
        let cat = cat1();
        let plan = PlanNode::Project {
            attrs: vec!["cid".into()],
            child: Box::new(PlanNode::Project {
                attrs: vec!["cid".into(), "city".into()],
                child: Box::new(leaf("ws_src")),
            }),
        };
        let collapsed = rewrites(Rule::ProjectCascade, &plan, &cat);
        assert_eq!(collapsed.len(), 1);
        assert_eq!(
            collapsed[0],
            PlanNode::Project { attrs: vec!["cid".into()], child: Box::new(leaf("ws_src")) }
        );
    }

    #[test]
    fn closure_is_bounded_and_contains_seed() {
        let cat = cat1();
        let plan = PlanNode::Select {
            preds: vec![pred("score", Comparator::Gt, 600), pred("cid", Comparator::Lt, 3)],
            child: Box::new(PlanNode::Join {
                on: vec!["cid".into()],
                left: Box::new(leaf("ws_src")),
                right: Box::new(leaf("ws_credit")),
            }),
        };
        let variants = closure(&plan, &cat, CLOSURE_CAP);
        assert!(variants.len() <= CLOSURE_CAP);
        assert!(variants.contains(&plan));
        assert!(variants.len() > 1);
    }
}
