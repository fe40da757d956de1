//! The three embedded use-case scenarios.

use super::{parse_scenario, Scenario, ScenarioError};

/// Names accepted by [`load_fixture`].
pub const FIXTURE_NAMES: [&str; 3] = ["intersection", "mri", "emergency"];

/// Raw document text of a fixture.
pub fn fixture_text(name: &str) -> Option<&'static str> {
    match name {
        "intersection" => Some(include_str!("../../fixtures/intersection.json")),
        "mri" => Some(include_str!("../../fixtures/mri.json")),
        "emergency" => Some(include_str!("../../fixtures/emergency.json")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FixtureError {
    #[error("unknown fixture `{0}` (known: intersection, mri, emergency)")]
    Unknown(String),
    #[error("embedded fixture `{name}` is invalid: {source}")]
    Invalid { name: String, source: ScenarioError },
}

pub fn load_fixture(name: &str) -> Result<Scenario, FixtureError> {
    let text = fixture_text(name).ok_or_else(|| FixtureError::Unknown(name.to_string()))?;
    parse_scenario(text).map_err(|source| FixtureError::Invalid {
        name: name.to_string(),
        source,
    })
}
