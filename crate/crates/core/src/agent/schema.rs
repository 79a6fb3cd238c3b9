//! Tool schemas and the system prompt shown to the design agent.

use serde::{Deserialize, Serialize};

use crate::circuit::{GateKind, MAX_QUBITS, RECOMMENDED_MAX_QUBITS};
use crate::tools::Variant;

/// Bumped whenever the prompt or docstrings change; recorded in every run.
pub const PROMPT_VERSION: &str = "vqclab-prompt/3";

pub const EXAMPLE_SIMPLE: &str = include_str!("../../tests/fixtures/simple_ring.json");
pub const EXAMPLE_QUANV: &str = include_str!("../../tests/fixtures/quanv_rot.json");
pub const EXAMPLE_FULL: &str = include_str!("../../tests/fixtures/full_recurrent.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Circuit,
    Shape,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    pub kind: ParamKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub docstring: String,
    pub parameters: Vec<ParamDescriptor>,
}

impl ToolSchema {
    /// Function-tool entry in the chat-completions `tools` array.
    pub fn to_wire(&self) -> serde_json::Value {
        let mut props = serde_json::Map::new();
        for p in &self.parameters {
            let schema = match p.kind {
                ParamKind::Circuit => serde_json::json!({
                    "type": "string",
                    "description": p.description,
                }),
                ParamKind::Shape => serde_json::json!({
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "description": p.description,
                }),
                ParamKind::Integer => serde_json::json!({
                    "type": "integer",
                    "minimum": 1,
                    "description": p.description,
                }),
            };
            props.insert(p.name.clone(), schema);
        }
        let required: Vec<&str> = self.parameters.iter().map(|p| p.name.as_str()).collect();
        serde_json::json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.docstring,
                "parameters": {"type": "object", "properties": props, "required": required},
            }
        })
    }
}

fn param(name: &str, kind: ParamKind, description: &str) -> ParamDescriptor {
    ParamDescriptor { name: name.into(), kind, description: description.into() }
}

const RESULT_FIELDS: &str = "\
Returns a JSON object with test_RMSE, val_RMSE_history (one value per epoch), \
train_RMSE_last_batch, n_gates_in_VQC, n_trainable_params_total, n_trainable_params_VQC, \
circuit_depth, lr_history and wall_time (seconds). On failure it returns the error phase \
(parse, validate, build or train) and a message explaining what to fix.";

fn docstring(variant: Variant) -> String {
    let (model, rules, example, example_args) = match variant {
        Variant::Simple => (
            "Model: a linear layer maps the 21 input samples to q_enc_size values, a sigmoid \
             times pi puts them in [0, pi], your circuit turns them into q_out_size expectation \
             values, and a linear layer plus sigmoid produces the prediction in [0, 1].",
            "inputs[0..q_enc_size) are available inside the circuit. The number of measurements \
             must equal q_out_size.",
            EXAMPLE_SIMPLE,
            "VQC_weights_shape = [9, 2], q_enc_size = 9, q_out_size = 9, epochs = 10",
        ),
        Variant::Quanv => (
            "Model: a window of kernel_size samples slides over the 21 inputs with the given \
             stride. Each window, multiplied by pi, is fed to your circuit, and the \
             VQC_output_dim expectation values become the channels of a feature map. A classical \
             head (two residual 1D convolutions, adaptive average pooling, three dense layers, \
             sigmoid) produces the prediction.",
            "inputs[0..kernel_size) hold one window. The number of measurements must equal \
             VQC_output_dim. kernel_size may not exceed 21.",
            EXAMPLE_QUANV,
            "VQC_weights_shape = [1, 5, 3], kernel_size = 5, stride = 2, VQC_output_dim = 10, epochs = 10",
        ),
        Variant::FullQuantum => (
            "Model: all 21 inputs, multiplied by pi, go straight into your circuit; its \
             q_out_size expectation values pass through a linear layer and a sigmoid.",
            "inputs[0..21) are available. There are more inputs than qubits you should use, so \
             the circuit needs a strategy such as re-uploading inputs one after another. The \
             number of measurements must equal q_out_size.",
            EXAMPLE_FULL,
            "VQC_weights_shape = [2, 9, 2], q_out_size = 3, epochs = 10",
        ),
    };
    format!(
        "Trains a hybrid quantum neural network whose quantum part is the circuit you supply, \
         then reports its metrics.\n\nTask: each sample is a noisy Gaussian bump on 21 grid \
         points in [0, 1], min-max normalised; the target is the bump centre.\n\n{model}\n\n\
         Circuit rules: {rules} VQC_weights_shape must equal the document's weights_shape. \
         Training takes longer with more qubits; stay below {} qubits.\n\n{RESULT_FIELDS}\n\n\
         Example VQC_code:\n{example}\nwith {example_args}.",
        RECOMMENDED_MAX_QUBITS + 1
    )
}

pub fn tool_schema(variant: Variant) -> ToolSchema {
    let code = param(
        "VQC_code",
        ParamKind::Circuit,
        "The circuit document (JSON text) in the circuit language described in the system prompt.",
    );
    let shape = param("VQC_weights_shape", ParamKind::Shape, "Shape of the trainable weights tensor.");
    let epochs = param("epochs", ParamKind::Integer, "Number of training epochs.");
    let q_out = param("q_out_size", ParamKind::Integer, "Number of circuit outputs (measurements).");
    let mut parameters = vec![code, shape];
    match variant {
        Variant::Simple => {
            parameters.push(param("q_enc_size", ParamKind::Integer, "Number of circuit inputs."));
            parameters.push(q_out);
        }
        Variant::Quanv => {
            parameters.push(param("kernel_size", ParamKind::Integer, "Window length seen by the circuit."));
            parameters.push(param("stride", ParamKind::Integer, "Step between consecutive windows."));
            parameters.push(param("VQC_output_dim", ParamKind::Integer, "Number of circuit outputs per window."));
        }
        Variant::FullQuantum => parameters.push(q_out),
    }
    parameters.push(epochs);
    ToolSchema { name: variant.tool_name().to_string(), docstring: docstring(variant), parameters }
}

/// The agent sees exactly one tool: the one for the run's architecture.
pub fn tool_schemas(variant: Variant) -> Vec<ToolSchema> {
    vec![tool_schema(variant)]
}

pub fn system_prompt(variant: Variant) -> String {
    let gates: Vec<&str> = GateKind::ALL.iter().map(|g| g.name()).collect();
    format!(
        "You design variational quantum circuits for a regression model and evaluate each \
design by calling the {tool} tool. After every result, decide what to change and try again.\n\
\n\
Circuits are JSON documents with these keys:\n\
- \"n_qubits\": integer, at most {max}; keep it at {rec} or fewer, larger registers train slowly.\n\
- \"weights_shape\": list of positive integers (use [] for a circuit without weights).\n\
- \"body\": list of statements. A gate is {{\"gate\": NAME, \"wires\": [...], \"angle\": EXPR}} \
(\"angles\": [a, b, c] for ROT). A loop is {{\"for\": VAR, \"range\": [start, stop] or \
[start, stop, step], \"body\": [...]}} with Python range semantics.\n\
- \"measurements\": list of {{\"observable\": \"PauliX\" | \"PauliY\" | \"PauliZ\", \"wire\": W}} \
entries, or loops of them. Their count is the number of circuit outputs.\n\
- \"comment\" keys are allowed anywhere and ignored.\n\
\n\
Gates: {gates}. ROT(a, b, c) applies RZ(a), then RY(b), then RZ(c). CNOT and CZ take two \
distinct wires, control first.\n\
Wires and indices are integer expressions over loop variables and n_qubits using + - * // %. \
Angles are real expressions over numbers, pi, loop variables, inputs[i] and weights[i, j, ...] \
with + - * /. Every weights index must match weights_shape.\n\
\n\
Rules: the document must parse and validate, the measurement count must equal the output size \
the tool expects, and only the listed gates and observables exist. Errors come back with the \
phase and a message; fix the circuit and call the tool again.\n\
\n\
When you have finished, write a line starting with DONE: followed by a short summary.",
        tool = variant.tool_name(),
        max = MAX_QUBITS,
        rec = RECOMMENDED_MAX_QUBITS,
        gates = gates.join(", "),
    )
}
