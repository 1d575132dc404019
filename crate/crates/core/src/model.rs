//! Configuration option space, concrete configurations and state identity.
//!
//! A [`Schema`] fixes the option order for everything downstream: action
//! numbering, lattice indexing, state digests and CSV column order all follow
//! the order in which options are declared.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constraint::{parse_constraint, ConstraintExpr, ParseError};
use crate::valuegen::IncreasePolicy;

/// A single option value. Binary options hold `Off`/`On`, numerical options
/// hold an integer in option units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Off,
    On,
    Int(i64),
}

impl Value {
    /// Integer view used by constraint arithmetic: OFF = 0, ON = 1.
    pub fn as_i64(self) -> i64 {
        match self {
            Value::Off => 0,
            Value::On => 1,
            Value::Int(v) => v,
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Value::Off | Value::On)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Off => f.write_str("OFF"),
            Value::On => f.write_str("ON"),
            Value::Int(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Value {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "OFF" => Ok(Value::Off),
            "ON" => Ok(Value::On),
            other => other
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| format!("`{other}` is neither OFF, ON nor an integer")),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Off => serializer.serialize_str("OFF"),
            Value::On => serializer.serialize_str("ON"),
            Value::Int(v) => serializer.serialize_i64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(v) => Ok(Value::Int(v)),
            Raw::Str(s) => match s.as_str() {
                "OFF" => Ok(Value::Off),
                "ON" => Ok(Value::On),
                _ => Err(D::Error::custom(format!(
                    "binary values must be \"OFF\" or \"ON\", got {s:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Binary,
    Numerical,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SchemaError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate option name `{0}`")]
    DuplicateOption(String),
    #[error("invalid option name `{0}`")]
    InvalidName(String),
    #[error("option `{option}`: {message}")]
    Range { option: String, message: String },
    #[error("constraint `{constraint}` references unknown option `{name}`")]
    UnknownIdentifier { constraint: String, name: String },
    #[error("constraint `{text}`: {source}")]
    Constraint { text: String, source: ParseError },
    #[error("configuration: {0}")]
    Configuration(String),
}

/// Declarative description of one configuration option.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionSpec {
    name: String,
    kind: OptionKind,
    min: Option<i64>,
    recommended_max: Option<i64>,
    effective_max: Option<i64>,
    default: Value,
    weight: f64,
    increase_policy: Option<IncreasePolicy>,
}

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl OptionSpec {
    pub fn binary(name: impl Into<String>, default: Value) -> Result<Self, SchemaError> {
        let name = name.into();
        if !valid_identifier(&name) {
            return Err(SchemaError::InvalidName(name));
        }
        if !default.is_binary() {
            return Err(SchemaError::Range {
                option: name,
                message: format!("binary default must be OFF or ON, got {default}"),
            });
        }
        Ok(Self {
            name,
            kind: OptionKind::Binary,
            min: None,
            recommended_max: None,
            effective_max: None,
            default,
            weight: 1.0,
            increase_policy: None,
        })
    }

    pub fn numerical(
        name: impl Into<String>,
        min: i64,
        recommended_max: i64,
        default: i64,
    ) -> Result<Self, SchemaError> {
        let name = name.into();
        if !valid_identifier(&name) {
            return Err(SchemaError::InvalidName(name));
        }
        let range_err = |message: String| SchemaError::Range {
            option: name.clone(),
            message,
        };
        if min < 1 {
            return Err(range_err(format!("min must be at least 1, got {min}")));
        }
        if min > recommended_max {
            return Err(range_err(format!(
                "min {min} exceeds recommended_max {recommended_max}"
            )));
        }
        if default < min || default > recommended_max {
            return Err(range_err(format!(
                "default {default} outside [{min}, {recommended_max}]"
            )));
        }
        let effective_max = recommended_max
            .checked_mul(2)
            .ok_or_else(|| range_err("recommended_max too large".into()))?;
        Ok(Self {
            name,
            kind: OptionKind::Numerical,
            min: Some(min),
            recommended_max: Some(recommended_max),
            effective_max: Some(effective_max),
            default: Value::Int(default),
            weight: 1.0,
            increase_policy: None,
        })
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_increase_policy(mut self, policy: IncreasePolicy) -> Self {
        self.increase_policy = Some(policy);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> OptionKind {
        self.kind
    }

    pub fn min(&self) -> Option<i64> {
        self.min
    }

    pub fn recommended_max(&self) -> Option<i64> {
        self.recommended_max
    }

    /// Upper bound actually explored: twice the recommended max.
    pub fn effective_max(&self) -> Option<i64> {
        self.effective_max
    }

    pub fn default_value(&self) -> Value {
        self.default
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Per-option override of the run-wide increase policy, if any.
    pub fn increase_policy(&self) -> Option<IncreasePolicy> {
        self.increase_policy
    }

    /// Whether `value` is a legal value for this option.
    pub fn admits(&self, value: Value) -> bool {
        match (self.kind, value) {
            (OptionKind::Binary, v) => v.is_binary(),
            (OptionKind::Numerical, Value::Int(v)) => {
                v >= self.min.unwrap_or(1) && v <= self.effective_max.unwrap_or(i64::MAX)
            }
            (OptionKind::Numerical, _) => false,
        }
    }
}

/// The full option space: ordered options plus constraints over them.
#[derive(Debug, Clone)]
pub struct Schema {
    options: Vec<OptionSpec>,
    constraints: Vec<ConstraintExpr>,
    names: Arc<[String]>,
    index: HashMap<String, usize>,
}

impl PartialEq for Schema {
    fn eq(&self, other: &Self) -> bool {
        self.options == other.options && self.constraints == other.constraints
    }
}

impl Schema {
    /// Builds a schema, binding every constraint identifier to its option slot.
    pub fn new(
        options: Vec<OptionSpec>,
        constraints: Vec<ConstraintExpr>,
    ) -> Result<Self, SchemaError> {
        let mut index = HashMap::with_capacity(options.len());
        for (i, opt) in options.iter().enumerate() {
            if index.insert(opt.name.clone(), i).is_some() {
                return Err(SchemaError::DuplicateOption(opt.name.clone()));
            }
        }
        let mut bound = Vec::with_capacity(constraints.len());
        for mut c in constraints {
            c.bind(&index)
                .map_err(|name| SchemaError::UnknownIdentifier {
                    constraint: c.to_string(),
                    name,
                })?;
            bound.push(c);
        }
        let names: Arc<[String]> = options.iter().map(|o| o.name.clone()).collect();
        Ok(Self {
            options,
            constraints: bound,
            names,
            index,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty schema is valid")
    }

    pub fn options(&self) -> &[OptionSpec] {
        &self.options
    }

    pub fn constraints(&self) -> &[ConstraintExpr] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn option(&self, name: &str) -> Option<&OptionSpec> {
        self.index_of(name).map(|i| &self.options[i])
    }

    /// Number of actions: two per option.
    pub fn action_count(&self) -> usize {
        2 * self.options.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.options.iter().map(|o| o.weight).collect()
    }

    /// Overwrites option weights (schema order).
    pub fn set_weights(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.options.len(), "one weight per option");
        for (opt, w) in self.options.iter_mut().zip(weights) {
            opt.weight = *w;
        }
    }

    /// Builds a configuration from `(name, value)` pairs in any order.
    pub fn configuration<I, S>(&self, pairs: I) -> Result<Configuration, SchemaError>
    where
        I: IntoIterator<Item = (S, Value)>,
        S: AsRef<str>,
    {
        let mut values: Vec<Option<Value>> = vec![None; self.options.len()];
        for (name, value) in pairs {
            let name = name.as_ref();
            let i = self
                .index_of(name)
                .ok_or_else(|| SchemaError::Configuration(format!("unknown option `{name}`")))?;
            if values[i].replace(value).is_some() {
                return Err(SchemaError::Configuration(format!(
                    "option `{name}` assigned twice"
                )));
            }
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    SchemaError::Configuration(format!(
                        "option `{}` not assigned",
                        self.options[i].name
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.configuration_from_values(values)
    }

    /// Builds a configuration from values in schema order.
    pub fn configuration_from_values(
        &self,
        values: Vec<Value>,
    ) -> Result<Configuration, SchemaError> {
        if values.len() != self.options.len() {
            return Err(SchemaError::Configuration(format!(
                "expected {} values, got {}",
                self.options.len(),
                values.len()
            )));
        }
        for (opt, v) in self.options.iter().zip(&values) {
            if !opt.admits(*v) {
                return Err(SchemaError::Configuration(format!(
                    "value {v} out of range for option `{}`",
                    opt.name
                )));
            }
        }
        Ok(Configuration {
            names: Arc::clone(&self.names),
            values,
        })
    }

    /// Builds a configuration from its integer view (binary options as 0/1).
    pub fn configuration_from_ints(&self, ints: &[i64]) -> Result<Configuration, SchemaError> {
        let values = self
            .options
            .iter()
            .zip(ints)
            .map(|(opt, &v)| match opt.kind {
                OptionKind::Binary => {
                    if v == 0 {
                        Value::Off
                    } else {
                        Value::On
                    }
                }
                OptionKind::Numerical => Value::Int(v),
            })
            .collect();
        self.configuration_from_values(values)
    }

    /// Parses a JSON object mapping option names to values.
    pub fn parse_configuration(&self, text: &str) -> Result<Configuration, SchemaError> {
        let map: BTreeMap<String, Value> = serde_json::from_str(text).map_err(syntax_error)?;
        self.configuration(map)
    }

    /// Stable digest of the option space and constraints (weights excluded).
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for opt in &self.options {
            hasher.update(format!(
                "{}|{:?}|{:?}|{:?}|{}\n",
                opt.name, opt.kind, opt.min, opt.recommended_max, opt.default
            ));
        }
        for c in &self.constraints {
            hasher.update(format!("{c}\n"));
        }
        let bytes = hasher.finalize();
        bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A total assignment of values to a schema's options, stored in schema order.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    names: Arc<[String]>,
    values: Vec<Value>,
}

impl Configuration {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, index: usize) -> Value {
        self.values[index]
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    /// Returns a copy with option `index` set to `value`. Range checks are the
    /// caller's job; use [`Schema::configuration_from_values`] when in doubt.
    pub fn with_value(&self, index: usize, value: Value) -> Self {
        let mut next = self.clone();
        next.values[index] = value;
        next
    }

    pub fn ints(&self) -> Vec<i64> {
        self.values.iter().map(|v| v.as_i64()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Value)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.iter().map(|(k, v)| (k, v.to_string())))
            .finish()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}:{v}")?;
        }
        f.write_str("}")
    }
}

impl Serialize for Configuration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.values.len()))?;
        for (k, v) in self.iter() {
            map.serialize_entry(k, &v)?;
        }
        map.end()
    }
}

/// Canonical identity of a configuration: a 64-bit digest of its
/// `name=value` serialization in schema order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub u64);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for StateId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(StateId)
    }
}

impl Serialize for StateId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

pub fn state_id(config: &Configuration) -> StateId {
    let mut hasher = Sha256::new();
    for (name, value) in config.iter() {
        hasher.update(name.as_bytes());
        hasher.update(b"=");
        hasher.update(value.to_string().as_bytes());
        hasher.update(b";");
    }
    let bytes = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&bytes[..8]);
    StateId(u64::from_be_bytes(head))
}

/// Every option at its declared default. Constraints are not checked.
pub fn default_configuration(schema: &Schema) -> Configuration {
    Configuration {
        names: Arc::clone(&schema.names),
        values: schema.options.iter().map(|o| o.default).collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptionDoc {
    name: String,
    kind: OptionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    recommended_max: Option<i64>,
    default: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    increase_policy: Option<IncreasePolicy>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    options: Vec<OptionDoc>,
    #[serde(default)]
    constraints: Vec<String>,
}

fn syntax_error(e: serde_json::Error) -> SchemaError {
    SchemaError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses a schema document (see `docs/formats.md`).
pub fn parse_schema(text: &str) -> Result<Schema, SchemaError> {
    let doc: SchemaDoc = serde_json::from_str(text).map_err(syntax_error)?;
    let mut options = Vec::with_capacity(doc.options.len());
    for o in doc.options {
        let spec = match o.kind {
            OptionKind::Binary => {
                if o.min.is_some() || o.recommended_max.is_some() {
                    return Err(SchemaError::Range {
                        option: o.name,
                        message: "binary options take no min/recommended_max".into(),
                    });
                }
                OptionSpec::binary(o.name, o.default)?
            }
            OptionKind::Numerical => {
                let (Some(min), Some(max)) = (o.min, o.recommended_max) else {
                    return Err(SchemaError::Range {
                        option: o.name,
                        message: "numerical options require min and recommended_max".into(),
                    });
                };
                let Value::Int(default) = o.default else {
                    return Err(SchemaError::Range {
                        option: o.name,
                        message: "numerical default must be an integer".into(),
                    });
                };
                OptionSpec::numerical(o.name, min, max, default)?
            }
        };
        let spec = match o.weight {
            Some(w) if !(w > 0.0 && w.is_finite()) => {
                return Err(SchemaError::Range {
                    option: spec.name,
                    message: format!("weight must be positive, got {w}"),
                })
            }
            Some(w) => spec.with_weight(w),
            None => spec,
        };
        let spec = match o.increase_policy {
            Some(p) => spec.with_increase_policy(p),
            None => spec,
        };
        options.push(spec);
    }
    let mut constraints = Vec::with_capacity(doc.constraints.len());
    for text in doc.constraints {
        let c = parse_constraint(&text).map_err(|source| SchemaError::Constraint {
            text: text.clone(),
            source,
        })?;
        constraints.push(c);
    }
    Schema::new(options, constraints)
}

/// Renders a schema back into its document form. Weights are always written.
pub fn render_schema(schema: &Schema) -> String {
    let doc = SchemaDoc {
        options: schema
            .options
            .iter()
            .map(|o| OptionDoc {
                name: o.name.clone(),
                kind: o.kind,
                min: o.min,
                recommended_max: o.recommended_max,
                default: o.default,
                weight: Some(o.weight),
                increase_policy: o.increase_policy,
            })
            .collect(),
        constraints: schema.constraints.iter().map(|c| c.to_string()).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("schema documents always serialize")
}
