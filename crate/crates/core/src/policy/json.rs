//! Canonical JSON form of policies.
//!
//! ```text
//! node   = {"type":"leaf","attr":STRING,"op":"eq|neq|lt|lte|gt|gte","value":LITERAL}
//!        | {"type":"branch","op":"and|or","left":node,"right":node}
//! policy = {"read":node?,"write":node?,"combined":node?}
//! ```
//!
//! Keys are emitted sorted, so equal policies serialize to equal bytes.

use alloc::format;
use alloc::string::{String, ToString};

use serde_json::{Map, Value as Json};

use super::{AttributeRule, BranchOp, Operator, Policy, PolicyNode};
use crate::value::Value;

/// Parse failure with a JSON-pointer style position (or `line:col` for
/// syntax errors) and a reason.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed policy at {position}: {reason}")]
pub struct MalformedPolicy {
    pub position: String,
    pub reason: String,
}

fn malformed(position: &str, reason: impl Into<String>) -> MalformedPolicy {
    MalformedPolicy {
        position: if position.is_empty() { "/".into() } else { position.into() },
        reason: reason.into(),
    }
}

pub fn node_to_json(node: &PolicyNode) -> Json {
    let mut m = Map::new();
    match node {
        PolicyNode::Leaf(rule) => {
            m.insert("type".into(), "leaf".into());
            m.insert("attr".into(), rule.attribute.clone().into());
            m.insert("op".into(), rule.operator.keyword().into());
            m.insert("value".into(), rule.value.to_json());
        }
        PolicyNode::Branch { op, left, right } => {
            m.insert("type".into(), "branch".into());
            m.insert("op".into(), op.keyword().into());
            m.insert("left".into(), node_to_json(left));
            m.insert("right".into(), node_to_json(right));
        }
    }
    Json::Object(m)
}

pub fn policy_to_json(policy: &Policy) -> Json {
    let mut m = Map::new();
    for (key, node) in [
        ("combined", &policy.combined),
        ("read", &policy.read),
        ("write", &policy.write),
    ] {
        if let Some(node) = node {
            m.insert(key.into(), node_to_json(node));
        }
    }
    Json::Object(m)
}

pub fn serialize_node(node: &PolicyNode) -> String {
    serde_json::to_string(&node_to_json(node)).expect("json")
}

pub fn serialize_policy(policy: &Policy) -> String {
    serde_json::to_string(&policy_to_json(policy)).expect("json")
}

fn syntax(err: serde_json::Error) -> MalformedPolicy {
    MalformedPolicy {
        position: format!("{}:{}", err.line(), err.column()),
        reason: err.to_string(),
    }
}

pub fn parse_node(text: &str) -> Result<PolicyNode, MalformedPolicy> {
    let json: Json = serde_json::from_str(text).map_err(syntax)?;
    node_from_json(&json, "")
}

pub fn parse_policy(text: &str) -> Result<Policy, MalformedPolicy> {
    let json: Json = serde_json::from_str(text).map_err(syntax)?;
    policy_from_json(&json)
}

pub fn policy_from_json(json: &Json) -> Result<Policy, MalformedPolicy> {
    let obj = json
        .as_object()
        .ok_or_else(|| malformed("", "policy must be an object"))?;
    let mut policy = Policy::default();
    for (key, value) in obj {
        let slot = match key.as_str() {
            "read" => &mut policy.read,
            "write" => &mut policy.write,
            "combined" => &mut policy.combined,
            other => return Err(malformed("", format!("unknown field {other:?}"))),
        };
        if !value.is_null() {
            *slot = Some(node_from_json(value, &format!("/{key}"))?);
        }
    }
    policy
        .validate()
        .map_err(|e| malformed("", e.to_string()))?;
    Ok(policy)
}

pub fn node_from_json(json: &Json, at: &str) -> Result<PolicyNode, MalformedPolicy> {
    let obj = json
        .as_object()
        .ok_or_else(|| malformed(at, "node must be an object"))?;
    let field = |name: &str| -> Result<&Json, MalformedPolicy> {
        obj.get(name)
            .ok_or_else(|| malformed(at, format!("missing field {name:?}")))
    };
    let string = |name: &str| -> Result<&str, MalformedPolicy> {
        field(name)?
            .as_str()
            .ok_or_else(|| malformed(&format!("{at}/{name}"), "expected a string"))
    };
    let allowed: &[&str] = match string("type")? {
        "leaf" => &["type", "attr", "op", "value"],
        "branch" => &["type", "op", "left", "right"],
        other => return Err(malformed(&format!("{at}/type"), format!("unknown node type {other:?}"))),
    };
    if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(malformed(at, format!("unexpected field {extra:?}")));
    }
    if string("type")? == "leaf" {
        let op = string("op")?;
        let operator = Operator::from_keyword(op)
            .ok_or_else(|| malformed(&format!("{at}/op"), format!("unknown operator {op:?}")))?;
        let value = Value::from_json(field("value")?).map_err(|r| malformed(&format!("{at}/value"), r))?;
        let rule = AttributeRule {
            attribute: string("attr")?.into(),
            operator,
            value,
        };
        rule.validate().map_err(|e| malformed(at, e.to_string()))?;
        Ok(PolicyNode::Leaf(rule))
    } else {
        let op = match string("op")? {
            "and" => BranchOp::And,
            "or" => BranchOp::Or,
            other => return Err(malformed(&format!("{at}/op"), format!("unknown branch operator {other:?}"))),
        };
        let left = node_from_json(field("left")?, &format!("{at}/left"))?;
        let right = node_from_json(field("right")?, &format!("{at}/right"))?;
        Ok(PolicyNode::branch(op, left, right))
    }
}

impl serde::Serialize for PolicyNode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        node_to_json(self).serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for PolicyNode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let json = Json::deserialize(d)?;
        node_from_json(&json, "").map_err(serde::de::Error::custom)
    }
}

impl serde::Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        policy_to_json(self).serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let json = Json::deserialize(d)?;
        policy_from_json(&json).map_err(serde::de::Error::custom)
    }
}
