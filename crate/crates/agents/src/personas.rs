//! Persona sets: which backend answers for each LLM-capable role.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::Value;

use crate::events::Agent;
use crate::gateway::{GatewayEnv, PersonaConfig, PersonaHandle, PersonaMode, PromptTemplate, RetryPolicy, Schema, Transport};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PersonaKind {
    #[default]
    Deterministic,
    Llm,
    Mock,
}

impl std::str::FromStr for PersonaKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "llm" => Ok(Self::Llm),
            "mock" => Ok(Self::Mock),
            other => Err(format!("unknown persona mode `{other}` (expected deterministic, llm or mock)")),
        }
    }
}

/// Scripted replies per role. Entries may be JSON strings or JSON values;
/// values are re-serialized compactly. Roles without entries stay
/// deterministic. The `report` key scripts the report writer.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct Transcript(pub BTreeMap<String, Vec<Value>>);

impl Transcript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn replies(&self, key: &str) -> Option<Vec<String>> {
        self.0.get(key).map(|entries| {
            entries
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect()
        })
    }
}

#[derive(Debug, Clone)]
pub struct PersonaSet {
    pub scientist: PersonaHandle,
    pub validator: PersonaHandle,
    pub reviewer: PersonaHandle,
    pub critic: PersonaHandle,
    /// Writes the report narrative; recorded under the orchestrator.
    pub reporter: PersonaHandle,
}

fn roles() -> [(Agent, &'static str, PromptTemplate, Schema); 5] {
    [
        (Agent::Scientist, "scientist", prompts::scientist(), Schema::SpecFragment),
        (Agent::Validator, "validator", prompts::validator(), Schema::FindingList),
        (Agent::Reviewer, "reviewer", prompts::reviewer(), Schema::RefinementDirective),
        (Agent::Critic, "critic", prompts::critic(), Schema::Verdict),
        (Agent::Orchestrator, "report", prompts::reporter(), Schema::ReportText),
    ]
}

impl PersonaSet {
    fn build(mut make: impl FnMut(Agent, &str, PromptTemplate, Schema) -> PersonaHandle) -> Self {
        let [s, v, r, c, w] = roles().map(|(agent, key, template, schema)| make(agent, key, template, schema));
        Self { scientist: s, validator: v, reviewer: r, critic: c, reporter: w }
    }

    pub fn deterministic() -> Self {
        Self::build(|agent, _, template, _| PersonaHandle::deterministic(agent, template))
    }

    pub fn mock(transcript: &Transcript) -> Self {
        Self::build(|agent, key, template, _| match transcript.replies(key) {
            Some(replies) => PersonaHandle::mock(agent, template, replies),
            None => PersonaHandle::deterministic(agent, template),
        })
    }

    pub fn llm(transport: Arc<dyn Transport>, max_tokens: u32, supports_images: bool) -> Self {
        Self::build(|agent, _, template, schema| PersonaHandle {
            agent,
            mode: PersonaMode::Llm {
                config: PersonaConfig { model: GatewayEnv::model_for(agent), max_tokens, schema, supports_images },
                transport: transport.clone(),
                retry: RetryPolicy::default(),
            },
            template,
        })
    }

    pub fn all_deterministic(&self) -> bool {
        [&self.scientist, &self.validator, &self.reviewer, &self.critic, &self.reporter]
            .iter()
            .all(|p| p.is_deterministic())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcript_entries_become_text() {
        let t = Transcript::from_json(r#"{"critic": [{"criteria": []}, "raw text"]}"#).unwrap();
        assert_eq!(t.replies("critic").unwrap(), vec![r#"{"criteria":[]}"#.to_string(), "raw text".to_string()]);
        let set = PersonaSet::mock(&t);
        assert!(!set.critic.is_deterministic());
        assert!(set.scientist.is_deterministic());
    }

    #[test]
    fn persona_kinds_parse() {
        assert_eq!("mock".parse::<PersonaKind>(), Ok(PersonaKind::Mock));
        assert!("gpt".parse::<PersonaKind>().is_err());
    }
}
