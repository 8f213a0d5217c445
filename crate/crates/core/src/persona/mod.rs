//! Markov-chain user personas and the interleaving of obfuscation visits.

mod arrival;
mod build;
mod mc;
mod trace;

pub use arrival::{plan_rate, ArrivalKind, ArrivalPlan};
pub use build::{
    build_persona, read_personas_jsonl, sample_user_type, user_ids, write_personas_jsonl, Persona, PersonaRngs, PersonaSpec, Source, Visit,
};
pub use mc::{fit_mc, popular_categories, state_of, FitConfig, McDiagnostics, McModel, UserType, UserWalker, STATES};
pub use trace::{generate_traces, read_traces_csv, write_traces_csv, BrowsingTrace, SyntheticTraceConfig, TraceVisit};
