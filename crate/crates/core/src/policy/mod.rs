//! Attribute-based access policies.
//!
//! A local policy is stored on every vault entry. The policy that actually
//! governs an entry is the conjunction of the local policies on the path from
//! the root down to it; see [`global_policy`] and [`check_access`].
//!
//! Evaluation works on *candidate sets* of verified credentials: a leaf keeps
//! the credentials whose attribute satisfies the rule, `OR` unions its
//! children, and `AND` unions its children only when both are non-empty. A
//! policy is satisfied when its candidate set is non-empty, so the two halves
//! of an `AND` may be satisfied by different credentials.

mod expr;
mod json;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::path::VaultPath;
use crate::value::{Date, Value};

pub use expr::{format_expr, parse_expr, ExprError};
pub use json::{
    node_from_json, node_to_json, parse_node, parse_policy, policy_from_json, policy_to_json,
    serialize_node, serialize_policy, MalformedPolicy,
};

/// Metadata attribute holding the issuer identity of a credential.
pub const ATTR_ISSUER: &str = "issuer";
/// Metadata attribute holding the issuance date of a credential.
pub const ATTR_ISSUANCE_DATE: &str = "issuanceDate";
/// Rule value that `issuer` rules resolve to the evaluating host's identity.
pub const ISSUER_ME: &str = "me";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Eq,
    Neq,
    Lt,
    Lte,
    Gt,
    Gte,
}

impl Operator {
    pub const ALL: [Operator; 6] = [
        Operator::Eq,
        Operator::Neq,
        Operator::Lt,
        Operator::Lte,
        Operator::Gt,
        Operator::Gte,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Operator::Eq => "eq",
            Operator::Neq => "neq",
            Operator::Lt => "lt",
            Operator::Lte => "lte",
            Operator::Gt => "gt",
            Operator::Gte => "gte",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.keyword() == s)
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, Operator::Eq | Operator::Neq)
    }

    fn holds(self, ord: core::cmp::Ordering) -> bool {
        use core::cmp::Ordering::*;
        match self {
            Operator::Eq => ord == Equal,
            Operator::Neq => ord != Equal,
            Operator::Lt => ord == Less,
            Operator::Lte => ord != Greater,
            Operator::Gt => ord == Greater,
            Operator::Gte => ord != Less,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchOp {
    And,
    Or,
}

impl BranchOp {
    pub fn keyword(self) -> &'static str {
        match self {
            BranchOp::And => "and",
            BranchOp::Or => "or",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuleError {
    #[error("attribute name is empty")]
    EmptyAttribute,
    #[error("operator {0} needs a numeric or date value")]
    OrderingOnString(&'static str),
}

/// `(attribute, operator, value)` triple at the leaves of a policy tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRule {
    pub attribute: String,
    pub operator: Operator,
    pub value: Value,
}

impl AttributeRule {
    pub fn new(attribute: &str, operator: Operator, value: Value) -> Result<Self, RuleError> {
        let rule = Self {
            attribute: attribute.into(),
            operator,
            value,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if self.attribute.is_empty() {
            return Err(RuleError::EmptyAttribute);
        }
        if self.operator.is_ordering() && !self.value.is_ordered() {
            return Err(RuleError::OrderingOnString(self.operator.keyword()));
        }
        Ok(())
    }

    fn is_issuer_me(&self) -> bool {
        self.attribute == ATTR_ISSUER && matches!(&self.value, Value::Str(s) if s == ISSUER_ME)
    }

    /// Whether a single bag satisfies this rule.
    pub fn matches(&self, bag: &AttributeBag, ctx: &EvalContext) -> bool {
        if self.is_issuer_me() {
            let mine = ctx.self_ids.contains(&bag.issuer);
            return match self.operator {
                Operator::Eq => mine,
                Operator::Neq => !mine,
                _ => false,
            };
        }
        match bag.get(&self.attribute) {
            Some(claim) => claim
                .compare(&self.value)
                .is_some_and(|ord| self.operator.holds(ord)),
            None => false,
        }
    }
}

/// Binary boolean expression tree over attribute rules.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyNode {
    Leaf(AttributeRule),
    Branch {
        op: BranchOp,
        left: alloc::boxed::Box<PolicyNode>,
        right: alloc::boxed::Box<PolicyNode>,
    },
}

impl PolicyNode {
    pub fn leaf(attribute: &str, operator: Operator, value: impl Into<Value>) -> Self {
        PolicyNode::Leaf(AttributeRule {
            attribute: attribute.into(),
            operator,
            value: value.into(),
        })
    }

    pub fn and(left: PolicyNode, right: PolicyNode) -> Self {
        Self::branch(BranchOp::And, left, right)
    }

    pub fn or(left: PolicyNode, right: PolicyNode) -> Self {
        Self::branch(BranchOp::Or, left, right)
    }

    pub fn branch(op: BranchOp, left: PolicyNode, right: PolicyNode) -> Self {
        PolicyNode::Branch {
            op,
            left: alloc::boxed::Box::new(left),
            right: alloc::boxed::Box::new(right),
        }
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        match self {
            PolicyNode::Leaf(rule) => rule.validate(),
            PolicyNode::Branch { left, right, .. } => {
                left.validate()?;
                right.validate()
            }
        }
    }

    pub fn leaves(&self) -> Vec<&AttributeRule> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a AttributeRule>) {
        match self {
            PolicyNode::Leaf(rule) => out.push(rule),
            PolicyNode::Branch { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessMode {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySlot {
    Read,
    Write,
    Combined,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyShapeError {
    #[error("a combined policy cannot be set together with read or write policies")]
    CombinedWithSplit,
}

/// Local policy of one vault entry. Either `combined` governs both modes or
/// the `read` / `write` pair is used; an absent node means no restriction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Policy {
    pub read: Option<PolicyNode>,
    pub write: Option<PolicyNode>,
    pub combined: Option<PolicyNode>,
}

impl Policy {
    pub fn combined(node: PolicyNode) -> Self {
        Self {
            combined: Some(node),
            ..Self::default()
        }
    }

    pub fn split(read: Option<PolicyNode>, write: Option<PolicyNode>) -> Self {
        Self {
            read,
            write,
            combined: None,
        }
    }

    pub fn is_unrestricted(&self) -> bool {
        self.read.is_none() && self.write.is_none() && self.combined.is_none()
    }

    pub fn for_mode(&self, mode: AccessMode) -> Option<&PolicyNode> {
        if let Some(c) = &self.combined {
            return Some(c);
        }
        match mode {
            AccessMode::Read => self.read.as_ref(),
            AccessMode::Write => self.write.as_ref(),
        }
    }

    /// Replaces one slot. Setting `combined` clears the split pair. Setting
    /// `read` or `write` on a combined policy splits it first, so the other
    /// mode keeps the combined rule.
    pub fn set(&mut self, slot: PolicySlot, node: Option<PolicyNode>) {
        match slot {
            PolicySlot::Combined => {
                self.read = None;
                self.write = None;
                self.combined = node;
            }
            PolicySlot::Read | PolicySlot::Write => {
                if let Some(c) = self.combined.take() {
                    self.read = Some(c.clone());
                    self.write = Some(c);
                }
                match slot {
                    PolicySlot::Read => self.read = node,
                    _ => self.write = node,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), PolicyShapeError> {
        if self.combined.is_some() && (self.read.is_some() || self.write.is_some()) {
            return Err(PolicyShapeError::CombinedWithSplit);
        }
        Ok(())
    }
}

/// Verified attributes of one credential plus its metadata.
///
/// The metadata attributes `issuer` and `issuanceDate` always come from the
/// credential envelope; claims with those names are shadowed.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeBag {
    pub credential_id: String,
    pub claims: BTreeMap<String, Value>,
    pub issuer: String,
    pub issuance_date: Option<Date>,
    pub trusted: bool,
}

impl AttributeBag {
    pub fn get(&self, attribute: &str) -> Option<Value> {
        match attribute {
            ATTR_ISSUER => Some(Value::Str(self.issuer.clone())),
            ATTR_ISSUANCE_DATE => self.issuance_date.map(Value::Date),
            _ => self.claims.get(attribute).cloned(),
        }
    }
}

/// Host-specific inputs to evaluation: the identities `issuer = me` matches.
#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    pub self_ids: BTreeSet<String>,
}

impl EvalContext {
    pub fn new<I: IntoIterator<Item = String>>(ids: I) -> Self {
        Self {
            self_ids: ids.into_iter().collect(),
        }
    }
}

/// Indices into the bag slice that survived evaluation.
pub type Candidates = BTreeSet<usize>;

pub fn evaluate_leaf(rule: &AttributeRule, bags: &[AttributeBag], ctx: &EvalContext) -> Candidates {
    bags.iter()
        .enumerate()
        .filter(|(_, bag)| rule.matches(bag, ctx))
        .map(|(i, _)| i)
        .collect()
}

pub fn evaluate(node: &PolicyNode, bags: &[AttributeBag], ctx: &EvalContext) -> Candidates {
    match node {
        PolicyNode::Leaf(rule) => evaluate_leaf(rule, bags, ctx),
        PolicyNode::Branch { op, left, right } => {
            let l = evaluate(left, bags, ctx);
            match op {
                BranchOp::Or => {
                    let mut r = evaluate(right, bags, ctx);
                    r.extend(l);
                    r
                }
                BranchOp::And => {
                    if l.is_empty() {
                        return Candidates::new();
                    }
                    let mut r = evaluate(right, bags, ctx);
                    if r.is_empty() {
                        return Candidates::new();
                    }
                    r.extend(l);
                    r
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown path {0}")]
pub struct UnknownPath(pub VaultPath);

/// Anything that can report the local policy stored on a vault entry.
pub trait PolicySource {
    fn local_policy(&self, path: &VaultPath) -> Result<Policy, UnknownPath>;
}

impl PolicySource for BTreeMap<VaultPath, Policy> {
    fn local_policy(&self, path: &VaultPath) -> Result<Policy, UnknownPath> {
        self.get(path).cloned().ok_or_else(|| UnknownPath(path.clone()))
    }
}

/// Local policies along the root path of `path`, root first. Entries
/// without restrictions are skipped, so an unrestricted chain is empty.
pub fn global_policy<S: PolicySource + ?Sized>(
    path: &VaultPath,
    source: &S,
) -> Result<Vec<Policy>, UnknownPath> {
    let mut chain = Vec::new();
    for p in path.lineage() {
        let local = source.local_policy(&p)?;
        if !local.is_unrestricted() {
            chain.push(local);
        }
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessDecision {
    pub granted: bool,
    pub satisfying_credential_ids: BTreeSet<String>,
}

pub fn check_access<S: PolicySource + ?Sized>(
    path: &VaultPath,
    mode: AccessMode,
    bags: &[AttributeBag],
    ctx: &EvalContext,
    source: &S,
) -> Result<AccessDecision, UnknownPath> {
    let chain = global_policy(path, source)?;
    Ok(decide(chain.iter().filter_map(|p| p.for_mode(mode)), bags, ctx))
}

/// Conjunction of already-selected policy nodes.
pub fn decide<'a, I>(nodes: I, bags: &[AttributeBag], ctx: &EvalContext) -> AccessDecision
where
    I: IntoIterator<Item = &'a PolicyNode>,
{
    let mut ids = BTreeSet::new();
    for node in nodes {
        let sat = evaluate(node, bags, ctx);
        if sat.is_empty() {
            return AccessDecision {
                granted: false,
                satisfying_credential_ids: BTreeSet::new(),
            };
        }
        ids.extend(sat.into_iter().map(|i| bags[i].credential_id.clone()));
    }
    AccessDecision {
        granted: true,
        satisfying_credential_ids: ids,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinearizeError {
    #[error("rule list is empty")]
    EmptyRuleList,
    #[error("{nodes} rules need {expected} operators, got {ops}")]
    OperatorCount { nodes: usize, ops: usize, expected: usize },
}

/// Builds the right-nested tree `A op0 (B op1 (C op2 D))` that a flat,
/// list-style rule editor implies.
pub fn linearize(nodes: Vec<PolicyNode>, ops: Vec<BranchOp>) -> Result<PolicyNode, LinearizeError> {
    if nodes.is_empty() {
        return Err(LinearizeError::EmptyRuleList);
    }
    if ops.len() + 1 != nodes.len() {
        return Err(LinearizeError::OperatorCount {
            nodes: nodes.len(),
            ops: ops.len(),
            expected: nodes.len() - 1,
        });
    }
    let mut nodes = nodes;
    let mut acc = nodes.pop().expect("non-empty");
    for (node, op) in nodes.into_iter().rev().zip(ops.into_iter().rev()) {
        acc = PolicyNode::branch(op, node, acc);
    }
    Ok(acc)
}
