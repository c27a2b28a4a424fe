use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    Backend, CaptionErrorModel, Captioner, ModelCall, ModularBackend, MonolithicBackend, OracleBackend, OutputSchema,
    RemoteChatClient, RemoteConfig, TextPlanner,
};
use crate::oracle::Oracle;

pub const BACKEND_IDS: [&str; 4] = ["oracle", "modular-sim", "modular-remote", "monolithic-remote"];

/// Everything needed to build any backend by id. Remote backends read the
/// API key from the environment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub p_state_omit: f64,
    pub p_object_miss: f64,
    /// Caption noise seed; run `r` uses `seed + r`.
    pub seed: u64,
    pub base_url: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub max_in_flight: usize,
    pub schema: OutputSchema,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            p_state_omit: 0.0,
            p_object_miss: 0.0,
            seed: 42,
            base_url: None,
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: 2048,
            timeout_secs: 60,
            max_attempts: 3,
            max_in_flight: 4,
            schema: OutputSchema::FullPlan,
        }
    }
}

impl BackendSettings {
    fn model_call(&self, id: &str) -> Result<ModelCall, String> {
        let base_url = self.base_url.clone().ok_or_else(|| format!("backend '{id}' needs a base URL"))?;
        let mut config = RemoteConfig::from_env(base_url);
        config.max_attempts = self.max_attempts;
        config.max_in_flight = self.max_in_flight;
        let client = RemoteChatClient::new(config).map_err(|e| e.to_string())?;
        let mut call = ModelCall::new(Arc::new(client), self.model.clone());
        call.temperature = self.temperature;
        call.max_tokens = self.max_tokens;
        call.timeout = Duration::from_secs(self.timeout_secs);
        Ok(call)
    }
}

/// Build the backend named `id` for run number `run`.
pub fn build_backend(oracle: &Oracle, id: &str, settings: &BackendSettings, run: usize) -> Result<Box<dyn Backend>, String> {
    match id {
        "oracle" => Ok(Box::new(OracleBackend::new(oracle.clone()))),
        "modular-sim" => {
            let seed = settings.seed.wrapping_add(run as u64);
            let em = CaptionErrorModel::new(settings.p_state_omit, settings.p_object_miss, seed)?;
            Ok(Box::new(ModularBackend::simulated(oracle.clone(), em)))
        }
        "modular-remote" => {
            let call = settings.model_call(id)?;
            let backend = ModularBackend::new(oracle.clone(), Captioner::Remote(call.clone()), TextPlanner::Remote(call));
            Ok(Box::new(backend.with_schema(settings.schema)))
        }
        "monolithic-remote" => {
            let call = settings.model_call(id)?;
            Ok(Box::new(MonolithicBackend::new(oracle.clone(), call).with_schema(settings.schema)))
        }
        other => Err(format!("unknown backend '{other}' (expected one of {})", BACKEND_IDS.join(", "))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_offline_backends() {
        let o = Oracle::default();
        let s = BackendSettings::default();
        assert_eq!(build_backend(&o, "oracle", &s, 0).unwrap().descriptor().label, "Oracle");
        assert_eq!(build_backend(&o, "modular-sim", &s, 2).unwrap().descriptor().id, "modular-sim");
        assert!(build_backend(&o, "nope", &s, 0).err().unwrap().contains("unknown backend"));
    }

    #[test]
    fn remote_needs_base_url() {
        let o = Oracle::default();
        let e = build_backend(&o, "monolithic-remote", &BackendSettings::default(), 0).err().unwrap();
        assert!(e.contains("base URL"));
        let bad = BackendSettings { p_state_omit: 2.0, ..BackendSettings::default() };
        assert!(build_backend(&o, "modular-sim", &bad, 0).is_err());
    }
}
