//! Websocket session protocol: JSON messages, one per frame.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sheetstream_core::{CellAddr, EngineInstance, Key, Value};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowView {
    pub count: usize,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
}

/// Cell value on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "lowercase")]
pub enum WireValue {
    Num(f64),
    Text(String),
    Bool(bool),
    Blank,
    Err(String),
    Win(WindowView),
}

impl WireValue {
    /// Reads `addr` from `instance`. Cells of an absent instance are blank.
    pub fn of(instance: Option<&EngineInstance>, addr: CellAddr) -> WireValue {
        let Some(inst) = instance else { return WireValue::Blank };
        match inst.read_cell(addr) {
            Value::Number(n) => WireValue::Num(n),
            Value::Text(s) => WireValue::Text(s),
            Value::Bool(b) => WireValue::Bool(b),
            Value::Blank => WireValue::Blank,
            Value::Error(e) => WireValue::Err(e.code().to_string()),
            Value::Window(_) => match inst.window_at(addr) {
                Some(w) => WireValue::Win(WindowView { count: w.count(), sum: w.sum(), min: w.min(), max: w.max() }),
                None => WireValue::Err("#VALUE!".into()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    pub addr: String,
    pub formula: Option<String>,
    pub value: WireValue,
    pub export: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub addr: String,
    pub value: WireValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Snapshot { instance: Option<serde_json::Value>, seq: u64, cells: Vec<CellView> },
    Delta { seq: u64, changes: Vec<CellDelta> },
    Keys { keys: Vec<serde_json::Value> },
    Error { msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Pause,
    Resume,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    SetFormula { addr: String, formula: String },
    MarkExport { addr: String, name: String, on: bool },
    SelectInstance { key: serde_json::Value },
    Control { action: Control },
}

pub fn key_json(key: &Key) -> serde_json::Value {
    match key.to_value() {
        Value::Number(n) => serde_json::Number::from_f64(n).map_or(serde_json::Value::Null, serde_json::Value::Number),
        other => serde_json::Value::String(other.to_string()),
    }
}

pub fn key_from_json(v: &serde_json::Value) -> Option<Key> {
    match v {
        serde_json::Value::String(s) => Key::from_value(&Value::text(s.as_str())),
        serde_json::Value::Number(n) => Key::from_value(&Value::number(n.as_f64()?)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub value: WireValue,
    pub formula: Option<String>,
    pub export: Option<String>,
}

/// Client-side view folded from server messages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grid {
    pub cells: BTreeMap<String, GridCell>,
    pub seq: u64,
    pub instance: Option<serde_json::Value>,
    pub keys: Vec<serde_json::Value>,
    pub last_error: Option<String>,
}

impl Grid {
    pub fn apply(&mut self, msg: &ServerMsg) {
        match msg {
            ServerMsg::Snapshot { instance, seq, cells } => {
                self.cells = cells
                    .iter()
                    .map(|c| {
                        let cell =
                            GridCell { value: c.value.clone(), formula: c.formula.clone(), export: c.export.clone() };
                        (c.addr.clone(), cell)
                    })
                    .collect();
                self.seq = *seq;
                self.instance = instance.clone();
            }
            ServerMsg::Delta { seq, changes } => {
                if *seq <= self.seq {
                    return;
                }
                self.seq = *seq;
                for c in changes {
                    let cell = self.cells.entry(c.addr.clone()).or_insert(GridCell {
                        value: WireValue::Blank,
                        formula: None,
                        export: None,
                    });
                    cell.value = c.value.clone();
                }
            }
            ServerMsg::Keys { keys } => self.keys = keys.clone(),
            ServerMsg::Error { msg } => self.last_error = Some(msg.clone()),
        }
    }
}
