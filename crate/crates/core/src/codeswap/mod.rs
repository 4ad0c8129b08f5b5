//! Active-code replacement: custom modules, validation, signing, per-user
//! storage and isolated execution.
//!
//! A custom module is a Rhai script defining `fn custom_code(x)`, where `x` is
//! an array of floats. It must return a number or an array of numbers, all
//! finite. Assignment parameters are available read-only through `params()`;
//! on clients running a connected flow, `params().input_model` holds the
//! previous off-board result (unit on the first iteration).

mod exec;
mod script;
mod store;
mod validate;

pub use exec::{sandbox_main, CustomResult, ExecError, Sandbox, SANDBOX_BIN};
pub use script::{capability_scan, CapabilityHit, ENTRY_POINT};
pub use store::{CodeStore, StoreError};
pub use validate::{
    probe_inputs, validate_custom, Stage, ValidationOptions, ValidationReport,
};

use std::fmt;
use std::str::FromStr;
use std::time::SystemTime;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::wire::{DEPLOY_OFFBOARD, DEPLOY_ONBOARD};

/// md5 of the source bytes as 32 lowercase hex characters.
pub fn signature(source: &str) -> String {
    let digest = Md5::digest(source.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Onboard,
    Offboard,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Onboard => "onboard",
            Target::Offboard => "offboard",
        }
    }

    pub fn deploy_mode(self) -> &'static str {
        match self {
            Target::Onboard => DEPLOY_ONBOARD,
            Target::Offboard => DEPLOY_OFFBOARD,
        }
    }

    pub fn from_deploy_mode(mode: &str) -> Option<Self> {
        match mode {
            DEPLOY_ONBOARD => Some(Target::Onboard),
            DEPLOY_OFFBOARD => Some(Target::Offboard),
            _ => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "onboard" => Ok(Target::Onboard),
            "offboard" => Ok(Target::Offboard),
            _ => Err(format!("target must be onboard or offboard, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomModule {
    pub source: String,
    pub user_id: String,
    pub target: Target,
    pub signature: String,
    pub deployed_at: SystemTime,
}

impl CustomModule {
    pub fn new(source: impl Into<String>, user_id: impl Into<String>, target: Target) -> Self {
        let source = source.into();
        Self {
            signature: signature(&source),
            source,
            user_id: user_id.into(),
            target,
            deployed_at: SystemTime::now(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_digests() {
        assert_eq!(signature(""), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(signature("abc"), "900150983cd24fb0d6963f7d28e17f72");
        assert_eq!(signature("abc"), signature("abc"));
    }

    #[test]
    fn target_modes() {
        assert_eq!(Target::from_deploy_mode("deploy_onboard"), Some(Target::Onboard));
        assert_eq!(Target::Offboard.deploy_mode(), "deploy_offboard");
        assert_eq!("offboard".parse::<Target>(), Ok(Target::Offboard));
        assert!("cloud".parse::<Target>().is_err());
    }
}
