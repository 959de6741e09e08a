//! SELECT filtering and PARTITION keyed instancing.
//!
//! A partitioned model runs one independent [`EngineInstance`] per distinct
//! key value, created the first time the key is seen. All instances share
//! one compiled [`Program`] and nothing else.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::engine::{ApplyError, ChangeSet, EngineInstance, Program};
use crate::formula::CellAddr;
use crate::model::{Diagnostic, Literal, SheetModel, StreamDecl};
use crate::value::{format_number, Value};

pub const DEFAULT_MAX_PARTITIONS: usize = 10_000;

/// Partition key. Numbers compare by value (`-0` equals `0`), text
/// case-sensitively.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Number(KeyNumber),
    Text(String),
}

/// Finite number with total equality, used as a map key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyNumber(f64);

impl Eq for KeyNumber {}

impl Ord for KeyNumber {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for KeyNumber {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::hash::Hash for KeyNumber {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl Key {
    pub fn from_value(v: &Value) -> Option<Key> {
        match v {
            Value::Number(n) if n.is_finite() => Some(Key::Number(KeyNumber(if *n == 0.0 { 0.0 } else { *n }))),
            Value::Text(s) => Some(Key::Text(s.clone())),
            _ => None,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Key::Number(n) => Value::Number(n.0),
            Key::Text(s) => Value::Text(s.clone()),
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Number(n) => f.write_str(&format_number(n.0)),
            Key::Text(s) => f.write_str(s),
        }
    }
}

/// True iff the stream has no select clause or the tuple's select attribute
/// equals the literal exactly.
pub fn admit(decl: &StreamDecl, tuple: &[Value]) -> bool {
    let Some(sel) = &decl.select else { return true };
    let Some(v) = decl.attr_index(&sel.attr).and_then(|i| tuple.get(i)) else {
        return false;
    };
    match (&sel.value, v) {
        (Literal::Text(want), Value::Text(got)) => want == got,
        (Literal::Number(want), Value::Number(got)) => want == got,
        _ => false,
    }
}

/// Key agreement: in a partitioned model every stream partitions by the
/// same attribute name with the same type.
pub fn check_keys(model: &SheetModel) -> Vec<Diagnostic> {
    if !model.partitioned() {
        return Vec::new();
    }
    let mut diags = Vec::new();
    let missing: Vec<&str> =
        model.streams.iter().filter(|s| s.partition_by.is_none()).map(|s| s.name.as_str()).collect();
    if !missing.is_empty() {
        diags.push(Diagnostic::new(
            format!("streams {}", missing.join(", ")),
            "partition key agreement: all streams must declare partition_by",
        ));
    }
    let keyed: Vec<(&StreamDecl, &str)> =
        model.streams.iter().filter_map(|s| s.partition_by.as_deref().map(|k| (s, k))).collect();
    let Some(&(first, first_key)) = keyed.first() else { return diags };
    for &(s, key) in &keyed[1..] {
        if key != first_key {
            diags.push(Diagnostic::new(
                format!("streams {}, {}", first.name, s.name),
                format!(
                    "partition key agreement: {}.{first_key} and {}.{key} partition by different keys",
                    first.name, s.name
                ),
            ));
        }
        let (Some(a), Some(b)) = (first.attr(first_key), s.attr(key)) else { continue };
        if a.ty != b.ty {
            diags.push(Diagnostic::new(
                format!("streams {}, {}", first.name, s.name),
                format!(
                    "partition key types differ: {}.{first_key} is {} but {}.{key} is {}",
                    first.name, a.ty, s.name, b.ty
                ),
            ));
        }
    }
    diags
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("model is not partitioned")]
    NotPartitioned,
    #[error("stream `{stream}` tuple has no usable partition key")]
    MissingKey { stream: String },
    #[error("key `{key}` would create partition {count}, exceeding the limit of {max} partitions")]
    TooManyPartitions { key: String, count: usize, max: usize },
    #[error(transparent)]
    Apply(#[from] ApplyError),
}

#[derive(Debug)]
pub struct PartitionManager {
    program: Arc<Program>,
    instances: HashMap<Key, EngineInstance>,
    creation_order: Vec<Key>,
    max_partitions: usize,
}

impl PartitionManager {
    pub fn new(program: Arc<Program>, max_partitions: usize) -> Self {
        Self { program, instances: HashMap::new(), creation_order: Vec::new(), max_partitions: max_partitions.max(1) }
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn max_partitions(&self) -> usize {
        self.max_partitions
    }

    /// Keys in first-occurrence order.
    pub fn keys(&self) -> &[Key] {
        &self.creation_order
    }

    pub fn instance(&self, key: &Key) -> Option<&EngineInstance> {
        self.instances.get(key)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Sends the tuple to its key's instance, creating the instance on first
    /// sight. No other instance is touched.
    pub fn route(&mut self, stream: &str, tuple: &[Value], ts: u64) -> Result<(Key, ChangeSet), RouteError> {
        let model = self.program.model();
        let decl = model.stream(stream).ok_or_else(|| ApplyError::UnknownStream(stream.to_string()))?;
        let attr = decl.partition_by.as_deref().ok_or(RouteError::NotPartitioned)?;
        let key = decl
            .attr_index(attr)
            .and_then(|i| tuple.get(i))
            .and_then(Key::from_value)
            .ok_or_else(|| RouteError::MissingKey { stream: stream.to_string() })?;
        if !self.instances.contains_key(&key) {
            if self.instances.len() >= self.max_partitions {
                return Err(RouteError::TooManyPartitions {
                    key: key.to_string(),
                    count: self.instances.len() + 1,
                    max: self.max_partitions,
                });
            }
            // validate before creating so a rejected tuple leaves no instance behind
            crate::engine::check_tuple(decl, tuple)?;
            self.instances.insert(key.clone(), EngineInstance::new(Arc::clone(&self.program)));
            self.creation_order.push(key.clone());
        }
        let instance = self.instances.get_mut(&key).expect("instance exists");
        let changes = instance.apply_tuple(stream, tuple, ts)?;
        Ok((key, changes))
    }

    /// Switches every instance to `program`; returns each instance's changes
    /// in creation order.
    pub fn rebind(&mut self, program: Arc<Program>) -> Vec<(Key, ChangeSet)> {
        self.program = Arc::clone(&program);
        self.creation_order
            .iter()
            .map(|k| {
                let inst = self.instances.get_mut(k).expect("instance exists");
                (k.clone(), inst.rebind(Arc::clone(&program)))
            })
            .collect()
    }
}

/// What happened to one input tuple.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Dropped by the stream's SELECT clause.
    Dropped,
    Applied {
        key: Option<Key>,
        changes: ChangeSet,
    },
}

/// A runnable operator: one instance for unpartitioned models, a
/// [`PartitionManager`] otherwise.
#[derive(Debug)]
pub enum Operator {
    Single(EngineInstance),
    Keyed(PartitionManager),
}

impl Operator {
    pub fn new(program: Arc<Program>, max_partitions: usize) -> Self {
        if program.model().partitioned() {
            Operator::Keyed(PartitionManager::new(program, max_partitions))
        } else {
            Operator::Single(EngineInstance::new(program))
        }
    }

    pub fn program(&self) -> &Arc<Program> {
        match self {
            Operator::Single(e) => e.program(),
            Operator::Keyed(m) => m.program(),
        }
    }

    pub fn model(&self) -> &SheetModel {
        self.program().model()
    }

    /// SELECT, then route or apply.
    pub fn process(&mut self, stream: &str, tuple: &[Value], ts: u64) -> Result<Outcome, RouteError> {
        let decl = self.model().stream(stream).ok_or_else(|| ApplyError::UnknownStream(stream.to_string()))?;
        if !admit(decl, tuple) {
            return Ok(Outcome::Dropped);
        }
        match self {
            Operator::Single(e) => Ok(Outcome::Applied { key: None, changes: e.apply_tuple(stream, tuple, ts)? }),
            Operator::Keyed(m) => {
                let (key, changes) = m.route(stream, tuple, ts)?;
                Ok(Outcome::Applied { key: Some(key), changes })
            }
        }
    }

    /// Instance for `key` (ignored when unpartitioned).
    pub fn instance(&self, key: Option<&Key>) -> Option<&EngineInstance> {
        match (self, key) {
            (Operator::Single(e), _) => Some(e),
            (Operator::Keyed(m), Some(k)) => m.instance(k),
            (Operator::Keyed(_), None) => None,
        }
    }

    pub fn keys(&self) -> &[Key] {
        match self {
            Operator::Single(_) => &[],
            Operator::Keyed(m) => m.keys(),
        }
    }

    pub fn partitions(&self) -> usize {
        match self {
            Operator::Single(_) => 0,
            Operator::Keyed(m) => m.len(),
        }
    }

    fn apply_program(&mut self, program: Program) -> Vec<(Option<Key>, ChangeSet)> {
        let program = Arc::new(program);
        match self {
            Operator::Single(e) => vec![(None, e.rebind(program))],
            Operator::Keyed(m) => m.rebind(program).into_iter().map(|(k, c)| (Some(k), c)).collect(),
        }
    }

    /// Edits a formula in every instance. Nothing changes on error.
    pub fn set_formula(
        &mut self,
        addr: CellAddr,
        text: &str,
    ) -> Result<Vec<(Option<Key>, ChangeSet)>, Vec<Diagnostic>> {
        let program = self.program().with_formula(addr, text)?;
        Ok(self.apply_program(program))
    }

    pub fn set_export(
        &mut self,
        addr: CellAddr,
        name: &str,
        on: bool,
    ) -> Result<Vec<(Option<Key>, ChangeSet)>, Vec<Diagnostic>> {
        let program = self.program().with_export(addr, name, on)?;
        Ok(self.apply_program(program))
    }
}
