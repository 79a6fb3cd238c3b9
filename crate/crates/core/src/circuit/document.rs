//! JSON circuit documents: parsing into [`CircuitIr`] and serializing back.
//!
//! serde_json does not keep source positions, so a small scanner records the
//! position of every JSON value in textual order. Walking the parsed value
//! tree in the same (pre-)order lets each node look up its own line/column.

use serde_json::{Map, Value};
use thiserror::Error;

use super::expr::{parse_angle, parse_index, AngleExpr, ExprError, IndexExpr, RESERVED};
use super::{BodyNode, CircuitIr, GateKind, GateNode, LoopNode, MeasureNode, Measurement, Observable, Range};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", self.render())]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    /// Location inside the document tree, e.g. `body[0].body[1].angle`.
    pub path: String,
    pub message: String,
}

impl ParseError {
    fn render(&self) -> String {
        if self.path.is_empty() {
            format!("line {}, column {}: {}", self.line, self.column, self.message)
        } else {
            format!(
                "line {}, column {} (at {}): {}",
                self.line, self.column, self.path, self.message
            )
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Pos {
    line: usize,
    column: usize,
}

/// Records the start of every JSON value (not object keys) in textual order.
fn scan_value_positions(src: &str) -> Vec<Pos> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    let advance = |c: char, line: &mut usize, col: &mut usize| {
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        match c {
            '"' => {
                let start = Pos { line, column: col };
                advance(c, &mut line, &mut col);
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    if chars[i] == '\\' && i + 1 < chars.len() {
                        advance(chars[i], &mut line, &mut col);
                        i += 1;
                    }
                    advance(chars[i], &mut line, &mut col);
                    i += 1;
                }
                if i < chars.len() {
                    advance(chars[i], &mut line, &mut col);
                    i += 1;
                }
                let mut j = i;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                let is_key = j < chars.len() && chars[j] == ':';
                if !is_key {
                    out.push(start);
                }
            }
            '{' | '[' | '-' | '0'..='9' | 't' | 'f' | 'n' => {
                out.push(Pos { line, column: col });
                if c == '{' || c == '[' {
                    advance(c, &mut line, &mut col);
                    i += 1;
                } else {
                    while i < chars.len() && !matches!(chars[i], ',' | ']' | '}' | ':')
                        && !chars[i].is_whitespace()
                    {
                        advance(chars[i], &mut line, &mut col);
                        i += 1;
                    }
                }
            }
            _ => {
                advance(c, &mut line, &mut col);
                i += 1;
            }
        }
    }
    out
}

struct Walker {
    positions: Vec<Pos>,
    next: usize,
}

/// One JSON node together with its source position and tree path.
#[derive(Clone)]
struct Node<'v> {
    value: &'v Value,
    pos: Pos,
    path: String,
}

impl Walker {
    /// Assigns a position to `value` and to all of its descendants, in pre-order.
    fn visit<'v>(&mut self, value: &'v Value, path: String, out: &mut Vec<Node<'v>>) {
        let pos = self.positions.get(self.next).copied().unwrap_or_default();
        self.next += 1;
        out.push(Node {
            value,
            pos,
            path: path.clone(),
        });
        match value {
            Value::Array(items) => {
                for (k, item) in items.iter().enumerate() {
                    self.visit(item, format!("{path}[{k}]"), out);
                }
            }
            Value::Object(map) => {
                for (key, item) in map {
                    let child = if path.is_empty() {
                        key.clone()
                    } else {
                        format!("{path}.{key}")
                    };
                    self.visit(item, child, out);
                }
            }
            _ => {}
        }
    }
}

struct Ctx<'v> {
    nodes: Vec<Node<'v>>,
}

impl<'v> Ctx<'v> {
    fn node(&self, value: &'v Value) -> &Node<'v> {
        self.nodes
            .iter()
            .find(|n| std::ptr::eq(n.value, value))
            .expect("every value was visited")
    }

    fn err(&self, value: &'v Value, message: impl Into<String>) -> ParseError {
        let n = self.node(value);
        ParseError {
            line: n.pos.line,
            column: n.pos.column,
            path: n.path.clone(),
            message: message.into(),
        }
    }

    fn expr_err(&self, value: &'v Value, e: ExprError) -> ParseError {
        let n = self.node(value);
        // column of the opening quote + 1 + offset inside the string
        let column = if value.is_string() {
            n.pos.column + 1 + e.offset
        } else {
            n.pos.column
        };
        ParseError {
            line: n.pos.line,
            column,
            path: n.path.clone(),
            message: format!("{} in expression `{}`", e.message, e.source_text),
        }
    }

    fn object(&self, value: &'v Value, what: &str) -> Result<&'v Map<String, Value>, ParseError> {
        value
            .as_object()
            .ok_or_else(|| self.err(value, format!("expected {what} object, found {}", kind_of(value))))
    }

    fn array(&self, value: &'v Value, what: &str) -> Result<&'v Vec<Value>, ParseError> {
        value
            .as_array()
            .ok_or_else(|| self.err(value, format!("expected {what} array, found {}", kind_of(value))))
    }

    fn check_keys(
        &self,
        value: &'v Value,
        map: &Map<String, Value>,
        allowed: &[&str],
        what: &str,
    ) -> Result<(), ParseError> {
        for key in map.keys() {
            if key != "comment" && !allowed.contains(&key.as_str()) {
                return Err(self.err(
                    &map[key],
                    format!(
                        "unknown key `{key}` in {what}; allowed keys: {}",
                        allowed.join(", ")
                    ),
                ));
            }
        }
        let _ = value;
        Ok(())
    }

    fn required(
        &self,
        value: &'v Value,
        map: &'v Map<String, Value>,
        key: &str,
        what: &str,
    ) -> Result<&'v Value, ParseError> {
        map.get(key)
            .ok_or_else(|| self.err(value, format!("{what} is missing required key `{key}`")))
    }

    fn positive(&self, value: &'v Value, what: &str) -> Result<usize, ParseError> {
        match value.as_u64() {
            Some(v) if v >= 1 => Ok(v as usize),
            _ => Err(self.err(value, format!("{what} must be a positive integer, found {value}"))),
        }
    }

    fn index_expr(&self, value: &'v Value) -> Result<IndexExpr, ParseError> {
        match value {
            Value::Number(n) => n
                .as_i64()
                .map(IndexExpr::Lit)
                .ok_or_else(|| self.err(value, format!("index must be an integer, found {n}"))),
            Value::String(s) => parse_index(s).map_err(|e| self.expr_err(value, e)),
            other => Err(self.err(
                value,
                format!("expected an index expression (integer or string), found {}", kind_of(other)),
            )),
        }
    }

    fn angle_expr(&self, value: &'v Value) -> Result<AngleExpr, ParseError> {
        match value {
            Value::Number(n) => Ok(AngleExpr::Lit(n.as_f64().unwrap_or(f64::NAN))),
            Value::String(s) => parse_angle(s).map_err(|e| self.expr_err(value, e)),
            other => Err(self.err(
                value,
                format!("expected an angle expression (number or string), found {}", kind_of(other)),
            )),
        }
    }

    fn range(&self, value: &'v Value) -> Result<Range, ParseError> {
        let items = self.array(value, "range")?;
        if !(items.len() == 2 || items.len() == 3) {
            return Err(self.err(
                value,
                format!("range must be [start, stop] or [start, stop, step], found {} entries", items.len()),
            ));
        }
        Ok(Range {
            start: self.index_expr(&items[0])?,
            stop: self.index_expr(&items[1])?,
            step: match items.get(2) {
                Some(v) => self.index_expr(v)?,
                None => IndexExpr::Lit(1),
            },
        })
    }

    fn loop_var(&self, value: &'v Value) -> Result<String, ParseError> {
        let name = value
            .as_str()
            .ok_or_else(|| self.err(value, "loop variable must be a string"))?;
        let valid = name
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(self.err(value, format!("`{name}` is not a valid loop variable name")));
        }
        if RESERVED.contains(&name) {
            return Err(self.err(value, format!("`{name}` is reserved and cannot be a loop variable")));
        }
        Ok(name.to_string())
    }

    fn body(&self, value: &'v Value) -> Result<Vec<BodyNode>, ParseError> {
        let items = self.array(value, "body")?;
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let map = self.object(item, "gate or loop")?;
            if map.contains_key("for") {
                self.check_keys(item, map, &["for", "range", "body"], "loop")?;
                out.push(BodyNode::Loop(LoopNode {
                    var: self.loop_var(&map["for"])?,
                    range: self.range(self.required(item, map, "range", "loop")?)?,
                    body: self.body(self.required(item, map, "body", "loop")?)?,
                }));
            } else if map.contains_key("gate") {
                self.check_keys(item, map, &["gate", "wires", "angle", "angles"], "gate")?;
                out.push(BodyNode::Gate(self.gate(item, map)?));
            } else if map.keys().all(|k| k == "comment") {
                continue;
            } else {
                return Err(self.err(
                    item,
                    "body entries must be a gate ({\"gate\": ...}) or a loop ({\"for\": ...})",
                ));
            }
        }
        Ok(out)
    }

    fn gate(&self, item: &'v Value, map: &'v Map<String, Value>) -> Result<GateNode, ParseError> {
        let token_value = &map["gate"];
        let token = token_value
            .as_str()
            .ok_or_else(|| self.err(token_value, "gate name must be a string"))?;
        let kind = GateKind::from_name(token).ok_or_else(|| {
            self.err(
                token_value,
                format!(
                    "unknown gate `{token}`; allowed gates: {}",
                    GateKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        let wires_value = self.required(item, map, "wires", "gate")?;
        let wires = match wires_value {
            Value::Array(ws) => ws.iter().map(|w| self.index_expr(w)).collect::<Result<Vec<_>, _>>()?,
            // a lone wire is accepted for single-qubit gates
            Value::Number(_) | Value::String(_) => vec![self.index_expr(wires_value)?],
            other => {
                return Err(self.err(other, format!("wires must be an array, found {}", kind_of(other))))
            }
        };
        if wires.len() != kind.n_wires() {
            return Err(self.err(
                wires_value,
                format!("{} acts on {} wire(s), found {}", kind.name(), kind.n_wires(), wires.len()),
            ));
        }
        let angles = match (map.get("angle"), map.get("angles")) {
            (Some(_), Some(_)) => {
                return Err(self.err(item, "use either `angle` or `angles`, not both"));
            }
            (Some(a), None) => vec![self.angle_expr(a)?],
            (None, Some(list)) => self
                .array(list, "angles")?
                .iter()
                .map(|a| self.angle_expr(a))
                .collect::<Result<Vec<_>, _>>()?,
            (None, None) => Vec::new(),
        };
        if angles.len() != kind.n_angles() {
            return Err(self.err(
                item,
                format!("{} takes {} angle(s), found {}", kind.name(), kind.n_angles(), angles.len()),
            ));
        }
        Ok(GateNode { kind, wires, angles })
    }

    fn measurements(&self, value: &'v Value) -> Result<Vec<MeasureNode>, ParseError> {
        let items = self.array(value, "measurements")?;
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let map = self.object(item, "measurement")?;
            if map.contains_key("for") {
                self.check_keys(item, map, &["for", "range", "body"], "measurement loop")?;
                out.push(MeasureNode::Loop {
                    var: self.loop_var(&map["for"])?,
                    range: self.range(self.required(item, map, "range", "measurement loop")?)?,
                    body: self.measurements(self.required(item, map, "body", "measurement loop")?)?,
                });
            } else if map.contains_key("observable") {
                self.check_keys(item, map, &["observable", "wire"], "measurement")?;
                let obs_value = &map["observable"];
                let name = obs_value
                    .as_str()
                    .ok_or_else(|| self.err(obs_value, "observable must be a string"))?;
                let observable = Observable::from_name(name).ok_or_else(|| {
                    self.err(
                        obs_value,
                        format!("unknown observable `{name}`; allowed: PauliX, PauliY, PauliZ"),
                    )
                })?;
                let wire = self.index_expr(self.required(item, map, "wire", "measurement")?)?;
                out.push(MeasureNode::Measure(Measurement { observable, wire }));
            } else if map.keys().all(|k| k == "comment") {
                continue;
            } else {
                return Err(self.err(
                    item,
                    "measurement entries must be {\"observable\": ..., \"wire\": ...} or a loop",
                ));
            }
        }
        Ok(out)
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Parses a circuit document. Only syntax, vocabulary and arity are checked
/// here; index bounds and loop bindings are checked by unrolling.
pub fn parse_circuit(document: &str) -> Result<CircuitIr, ParseError> {
    let root: Value = serde_json::from_str(document).map_err(|e| ParseError {
        line: e.line(),
        column: e.column(),
        path: String::new(),
        message: format!("invalid JSON: {e}"),
    })?;
    let mut walker = Walker {
        positions: scan_value_positions(document),
        next: 0,
    };
    let mut nodes = Vec::new();
    walker.visit(&root, String::new(), &mut nodes);
    let ctx = Ctx { nodes };

    let map = ctx.object(&root, "circuit document")?;
    ctx.check_keys(
        &root,
        map,
        &["n_qubits", "weights_shape", "body", "measurements", "name"],
        "circuit document",
    )?;
    let n_qubits = ctx.positive(ctx.required(&root, map, "n_qubits", "circuit document")?, "n_qubits")?;
    let shape_value = ctx.required(&root, map, "weights_shape", "circuit document")?;
    let weights_shape = ctx
        .array(shape_value, "weights_shape")?
        .iter()
        .map(|d| ctx.positive(d, "weights_shape entry"))
        .collect::<Result<Vec<_>, _>>()?;
    let body = match map.get("body") {
        Some(b) => ctx.body(b)?,
        None => Vec::new(),
    };
    let measurements = ctx.measurements(ctx.required(&root, map, "measurements", "circuit document")?)?;
    Ok(CircuitIr {
        n_qubits,
        weights_shape,
        body,
        measurements,
    })
}

fn index_value(e: &IndexExpr) -> Value {
    match e {
        IndexExpr::Lit(v) => Value::from(*v),
        other => Value::String(other.to_string()),
    }
}

fn angle_value(e: &AngleExpr) -> Value {
    Value::String(e.to_string())
}

fn range_value(r: &Range) -> Value {
    Value::Array(vec![index_value(&r.start), index_value(&r.stop), index_value(&r.step)])
}

fn body_value(body: &[BodyNode]) -> Value {
    Value::Array(
        body.iter()
            .map(|node| match node {
                BodyNode::Gate(g) => {
                    let mut m = Map::new();
                    m.insert("gate".into(), Value::String(g.kind.name().into()));
                    m.insert("wires".into(), Value::Array(g.wires.iter().map(index_value).collect()));
                    match g.angles.len() {
                        0 => {}
                        1 => {
                            m.insert("angle".into(), angle_value(&g.angles[0]));
                        }
                        _ => {
                            m.insert("angles".into(), Value::Array(g.angles.iter().map(angle_value).collect()));
                        }
                    }
                    Value::Object(m)
                }
                BodyNode::Loop(l) => {
                    let mut m = Map::new();
                    m.insert("for".into(), Value::String(l.var.clone()));
                    m.insert("range".into(), range_value(&l.range));
                    m.insert("body".into(), body_value(&l.body));
                    Value::Object(m)
                }
            })
            .collect(),
    )
}

fn measure_value(nodes: &[MeasureNode]) -> Value {
    Value::Array(
        nodes
            .iter()
            .map(|node| match node {
                MeasureNode::Measure(m) => {
                    let mut o = Map::new();
                    o.insert("observable".into(), Value::String(m.observable.name().into()));
                    o.insert("wire".into(), index_value(&m.wire));
                    Value::Object(o)
                }
                MeasureNode::Loop { var, range, body } => {
                    let mut o = Map::new();
                    o.insert("for".into(), Value::String(var.clone()));
                    o.insert("range".into(), range_value(range));
                    o.insert("body".into(), measure_value(body));
                    Value::Object(o)
                }
            })
            .collect(),
    )
}

impl CircuitIr {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("n_qubits".into(), Value::from(self.n_qubits));
        m.insert(
            "weights_shape".into(),
            Value::Array(self.weights_shape.iter().map(|d| Value::from(*d)).collect()),
        );
        m.insert("body".into(), body_value(&self.body));
        m.insert("measurements".into(), measure_value(&self.measurements));
        Value::Object(m)
    }

    /// Pretty-printed document accepted by [`parse_circuit`].
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("circuit JSON serializes")
    }
}
