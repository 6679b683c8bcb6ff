//! Versioned prompt templates compiled into the binary.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::{GatewayError, Message, Role};

pub struct Template {
    pub id: &'static str,
    pub text: &'static str,
}

macro_rules! template {
    ($id:literal) => {
        Template { id: $id, text: include_str!(concat!("../../assets/prompts/", $id, ".txt")) }
    };
}

pub static TEMPLATES: &[Template] = &[
    template!("convert_entities"),
    template!("convert_episodes"),
    template!("convert_causal"),
    template!("perturb_identity"),
    template!("perturb_visit"),
    template!("perturb_steb"),
    template!("perturb_mse"),
    template!("generate_lead"),
    template!("generate_symptom"),
    template!("generate_tail"),
    template!("baseline_sdc"),
    template!("llm_only_rewrite"),
    template!("llm_only_critique"),
    template!("judge_risk"),
    template!("eval_diagnose"),
];

pub fn get(id: &str) -> Result<&'static Template, GatewayError> {
    TEMPLATES.iter().find(|t| t.id == id).ok_or_else(|| GatewayError::Template(format!("unknown template `{id}`")))
}

/// sha256 of every template asset, keyed by id.
pub fn asset_hashes() -> BTreeMap<String, String> {
    TEMPLATES.iter().map(|t| (t.id.to_string(), hex::encode(Sha256::digest(t.text.as_bytes())))).collect()
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

impl Template {
    /// Placeholder names in order of first appearance.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in placeholder().captures_iter(self.text) {
            let name = c.get(1).unwrap().as_str();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Substitute `{name}` placeholders in one pass (inserted values are not
    /// rescanned) and split into messages.
    ///
    /// A template starting with `SYSTEM:` is split at the `USER:` line into
    /// a system and a user message; otherwise the whole text is one user
    /// message.
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<Vec<Message>, GatewayError> {
        if let Some(missing) = self.variables().into_iter().find(|v| !vars.contains_key(*v)) {
            return Err(GatewayError::Template(format!("template `{}` needs variable `{missing}`", self.id)));
        }
        let fill = |s: &str| {
            placeholder().replace_all(s, |c: &regex::Captures| vars[c.get(1).unwrap().as_str()].clone()).into_owned()
        };
        if let Some(rest) = self.text.strip_prefix("SYSTEM:\n") {
            if let Some((system, user)) = rest.split_once("\n\nUSER:\n") {
                return Ok(vec![
                    Message { role: Role::System, content: fill(system) },
                    Message { role: Role::User, content: fill(user) },
                ]);
            }
        }
        Ok(vec![Message { role: Role::User, content: fill(self.text) }])
    }
}
