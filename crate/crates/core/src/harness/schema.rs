//! The published config schemas and validation against them.

use std::sync::OnceLock;

use jsonschema::Validator;
use serde_json::Value;

use crate::error::{Error, Result};

pub const EXPERIMENT_SCHEMA: &str = include_str!("../../schema/experiment.schema.json");
pub const SWEEP_SCHEMA: &str = include_str!("../../schema/sweep.schema.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Experiment,
    Sweep,
}

impl Schema {
    pub fn source(self) -> &'static str {
        match self {
            Schema::Experiment => EXPERIMENT_SCHEMA,
            Schema::Sweep => SWEEP_SCHEMA,
        }
    }

    fn compiled(self) -> &'static Validator {
        static EXP: OnceLock<Validator> = OnceLock::new();
        static SWEEP: OnceLock<Validator> = OnceLock::new();
        let cell = match self {
            Schema::Experiment => &EXP,
            Schema::Sweep => &SWEEP,
        };
        cell.get_or_init(|| {
            let schema: Value = serde_json::from_str(self.source()).expect("bundled schema is JSON");
            jsonschema::validator_for(&schema).expect("bundled schema compiles")
        })
    }
}

/// Every violation, joined, as one validation error.
pub fn validate_schema(v: &Value, schema: Schema) -> Result<()> {
    let errs: Vec<String> = schema.compiled().iter_errors(v).map(|e| format!("{}: {e}", e.instance_path())).collect();
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!("schema: {}", errs.join("; "))))
    }
}
