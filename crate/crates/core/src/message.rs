//! Versioned architecture description consumed by the training worker.
//!
//! The message is a JSON object; see `docs/protocol.md` for the field list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phenotype::ArchitectureSpec;

pub const ARCHITECTURE_SCHEMA: &str = "emrp-architecture";
pub const ARCHITECTURE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MessageError {
    #[error("malformed architecture message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported architecture schema {schema} v{version}")]
    Schema { schema: String, version: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureMessage {
    pub schema: String,
    pub version: u32,
    pub architecture: ArchitectureSpec,
}

impl ArchitectureMessage {
    pub fn new(arch: &ArchitectureSpec) -> Self {
        Self {
            schema: ARCHITECTURE_SCHEMA.to_string(),
            version: ARCHITECTURE_VERSION,
            architecture: arch.clone(),
        }
    }

    fn check(self) -> Result<Self, MessageError> {
        if self.schema != ARCHITECTURE_SCHEMA || self.version != ARCHITECTURE_VERSION {
            return Err(MessageError::Schema {
                schema: self.schema,
                version: self.version,
            });
        }
        Ok(self)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, MessageError> {
        serde_json::from_value::<Self>(value)?.check()
    }
}

pub fn to_architecture_message(arch: &ArchitectureSpec) -> String {
    serde_json::to_string(&ArchitectureMessage::new(arch)).expect("architecture serializes")
}

pub fn parse_architecture_message(text: &str) -> Result<ArchitectureSpec, MessageError> {
    let msg: ArchitectureMessage = serde_json::from_str(text)?;
    Ok(msg.check()?.architecture)
}
