//! The closed design loop: an assistant proposes circuits through tool calls,
//! the tools train and report, and a human may steer between iterations.

mod backend;
mod message;
mod run;
mod runlog;
mod schema;

pub use backend::{
    llm_chat, BackendError, ChatBackend, EndpointConfig, HttpBackend, Playlist, RetryPolicy, ScriptEntry,
    ScriptedBackend, ScriptedCall,
};
pub use message::{Message, Role, ToolCall, Usage};
pub use run::{
    backend_for, execute_call, inject_user_steering, replay, run_agent_loop, run_agent_loop_with, train_settings,
    AgentError, LoopOptions, ReplayReport, SteeringHandle,
};
pub use runlog::{
    now_secs, read_events, BackendConfig, IterationRecord, Listener, LoggedEvent, Outcome, RunConfig, RunEvent, RunLog,
    RunLogError, RunRecorder, RunStatus, RunSummary, SteeringEvent, EVENTS_FILE, SUMMARY_FILE,
};
pub use schema::{
    system_prompt, tool_schema, tool_schemas, ParamDescriptor, ParamKind, ToolSchema, EXAMPLE_FULL, EXAMPLE_QUANV,
    EXAMPLE_SIMPLE, PROMPT_VERSION,
};
