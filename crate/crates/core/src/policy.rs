//! Resource model and access-control decision procedure.
//!
//! Resources are identified by typed absolute URLs: a *type* URL names a class
//! of digital twins, an *object* URL names one twin, and an *attribute* URL is
//! the object URL plus `/attribute-name`. A policy grants one consumer one
//! operation on one resource URL. The coverage relation lets a grant reach
//! down the hierarchy: a type grant covers the type's objects and their
//! attributes, an object grant covers the object's attributes.
//!
//! Everything here is pure: type information comes in through the
//! [`TypeOracle`] seam, unknown answers always deny, and no call touches the
//! network or any shared state.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Operations a consumer can perform against the broker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    Read,
    Write,
    Subscribe,
}

impl Operation {
    pub const ALL: [Operation; 3] = [Operation::Read, Operation::Write, Operation::Subscribe];

    pub fn as_str(&self) -> &'static str {
        match self {
            Operation::Read => "Read",
            Operation::Write => "Write",
            Operation::Subscribe => "Subscribe",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operation {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Read" | "read" => Ok(Operation::Read),
            "Write" | "write" => Ok(Operation::Write),
            "Subscribe" | "subscribe" => Ok(Operation::Subscribe),
            other => Err(PolicyError::UnknownOperation(other.to_string())),
        }
    }
}

/// Which level of the resource hierarchy a URL names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UrlKind {
    Type,
    Object,
    Attribute,
}

impl UrlKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UrlKind::Type => "type",
            UrlKind::Object => "object",
            UrlKind::Attribute => "attribute",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("not a syntactically valid absolute URL: {0:?}")]
    InvalidUrl(String),
    #[error("attribute URL does not decompose into object-url/attribute: {0:?}")]
    InvalidAttrUrl(String),
    #[error("attribute name must be non-empty and contain no '/': {0:?}")]
    InvalidAttrName(String),
    #[error("consumer id must be non-empty")]
    EmptyConsumerId,
    #[error("unknown operation {0:?}")]
    UnknownOperation(String),
}

/// A typed resource identifier. The kind is carried explicitly and never
/// inferred from the string shape; requests get their kind from the API
/// endpoint that named the resource, policies store it at authoring time.
///
/// Values are normalized by trimming a single trailing `/`; comparison is
/// exact byte equality afterwards.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawResourceUrl", into = "RawResourceUrl")]
pub struct ResourceUrl {
    kind: UrlKind,
    value: String,
}

/// Wire form: `{"kind": "type"|"object"|"attribute", "url": "..."}`.
#[derive(Serialize, Deserialize)]
struct RawResourceUrl {
    kind: UrlKind,
    url: String,
}

impl TryFrom<RawResourceUrl> for ResourceUrl {
    type Error = PolicyError;

    fn try_from(raw: RawResourceUrl) -> Result<Self, Self::Error> {
        ResourceUrl::new(raw.kind, raw.url)
    }
}

impl From<ResourceUrl> for RawResourceUrl {
    fn from(r: ResourceUrl) -> Self {
        RawResourceUrl { kind: r.kind, url: r.value }
    }
}

impl ResourceUrl {
    /// Validate and normalize. Attribute URLs must decompose as
    /// `object-url/attribute-name` with a parent that is itself a valid
    /// absolute URL.
    pub fn new(kind: UrlKind, value: impl Into<String>) -> Result<Self, PolicyError> {
        let value = normalize(value.into());
        if !is_absolute_url(&value) {
            return Err(PolicyError::InvalidUrl(value));
        }
        if kind == UrlKind::Attribute {
            let (parent, name) = value
                .rsplit_once('/')
                .ok_or_else(|| PolicyError::InvalidAttrUrl(value.clone()))?;
            if name.is_empty() || !is_absolute_url(parent) {
                return Err(PolicyError::InvalidAttrUrl(value));
            }
        }
        Ok(ResourceUrl { kind, value })
    }

    pub fn type_url(value: impl Into<String>) -> Result<Self, PolicyError> {
        Self::new(UrlKind::Type, value)
    }

    pub fn object_url(value: impl Into<String>) -> Result<Self, PolicyError> {
        Self::new(UrlKind::Object, value)
    }

    pub fn attr_url(value: impl Into<String>) -> Result<Self, PolicyError> {
        Self::new(UrlKind::Attribute, value)
    }

    /// Attribute URL under an object: `object.value + "/" + name`.
    pub fn attr_of(object: &ResourceUrl, name: &str) -> Result<Self, PolicyError> {
        if name.is_empty() || name.contains('/') {
            return Err(PolicyError::InvalidAttrName(name.to_string()));
        }
        Self::new(UrlKind::Attribute, format!("{}/{}", object.value, name))
    }

    pub fn kind(&self) -> UrlKind {
        self.kind
    }

    pub fn as_str(&self) -> &str {
        &self.value
    }

    /// For an attribute URL, the object URL it hangs under.
    pub fn attr_parent(&self) -> Option<ResourceUrl> {
        if self.kind != UrlKind::Attribute {
            return None;
        }
        let (parent, _) = self.value.rsplit_once('/')?;
        Some(ResourceUrl { kind: UrlKind::Object, value: parent.to_string() })
    }

    /// For an attribute URL, the trailing attribute name.
    pub fn attr_name(&self) -> Option<&str> {
        if self.kind != UrlKind::Attribute {
            return None;
        }
        self.value.rsplit_once('/').map(|(_, name)| name)
    }
}

impl fmt::Display for ResourceUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.value)
    }
}

fn normalize(mut s: String) -> String {
    if s.ends_with('/') {
        s.pop();
    }
    s
}

/// RFC 3986 absolute-URI shape: `scheme ":" non-empty-rest`, no whitespace
/// or control characters. Covers both `https://...` and `urn:...` forms.
fn is_absolute_url(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    if !first.is_ascii_alphabetic() {
        return false;
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.')) {
        return false;
    }
    !rest.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

/// An access-control policy: the tuple (consumer, operation, resource).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    pub consumer_id: String,
    pub operation: Operation,
    pub resource: ResourceUrl,
}

impl Policy {
    pub fn new(
        consumer_id: impl Into<String>,
        operation: Operation,
        resource: ResourceUrl,
    ) -> Result<Self, PolicyError> {
        let consumer_id = consumer_id.into();
        if consumer_id.is_empty() {
            return Err(PolicyError::EmptyConsumerId);
        }
        Ok(Policy { consumer_id, operation, resource })
    }
}

/// Type-inference seam. The decision procedure asks for an object's type URL;
/// `None` means unknown, and unknown always denies. Implementations must
/// answer consistently within one decision.
pub trait TypeOracle {
    fn type_of(&self, object: &ResourceUrl) -> Option<ResourceUrl>;
}

/// Oracle over a fixed object-URL → type-URL map. The workhorse for tests
/// and for snapshot-style decisions.
#[derive(Debug, Clone, Default)]
pub struct MapOracle {
    types: HashMap<String, ResourceUrl>,
}

impl MapOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, object: &ResourceUrl, type_url: ResourceUrl) {
        self.types.insert(object.as_str().to_string(), type_url);
    }

    pub fn insert_raw(&mut self, object_url: impl Into<String>, type_url: ResourceUrl) {
        self.types.insert(normalize(object_url.into()), type_url);
    }
}

impl TypeOracle for MapOracle {
    fn type_of(&self, object: &ResourceUrl) -> Option<ResourceUrl> {
        self.types.get(object.as_str()).cloned()
    }
}

/// Oracle that knows nothing; reduces decisions to exact-match semantics.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTypes;

impl TypeOracle for NoTypes {
    fn type_of(&self, _object: &ResourceUrl) -> Option<ResourceUrl> {
        None
    }
}

/// The coverage relation. `covers(a, b)` is true iff one of:
///
/// 1. `a = b` (same kind, same value);
/// 2. `a` is a type URL and `b` an object URL whose type is `a`;
/// 3. `a` is a type URL and `b` an attribute URL of an object whose type is `a`;
/// 4. `a` is an object URL and `b` an attribute URL of that object.
///
/// Unknown type information yields `false`, never an error.
pub fn covers(a: &ResourceUrl, b: &ResourceUrl, oracle: &dyn TypeOracle) -> bool {
    if a == b {
        return true;
    }
    match (a.kind(), b.kind()) {
        (UrlKind::Type, UrlKind::Object) => oracle.type_of(b).is_some_and(|t| t == *a),
        (UrlKind::Type, UrlKind::Attribute) => b
            .attr_parent()
            .and_then(|obj| oracle.type_of(&obj))
            .is_some_and(|t| t == *a),
        (UrlKind::Object, UrlKind::Attribute) => {
            b.attr_parent().is_some_and(|obj| obj.as_str() == a.as_str())
        }
        _ => false,
    }
}

/// Existential scan over the policy set: permit iff some policy matches the
/// consumer and operation and covers the requested resource. Order of the
/// policies cannot affect the outcome.
pub fn decide(
    policies: &[Policy],
    consumer_id: &str,
    operation: Operation,
    resource: &ResourceUrl,
    oracle: &dyn TypeOracle,
) -> bool {
    policies.iter().any(|p| {
        p.consumer_id == consumer_id
            && p.operation == operation
            && covers(&p.resource, resource, oracle)
    })
}
