//! Outline planning and surface realization of de-identified narratives.

mod outline;
mod realize;
mod time;

pub use outline::{
    lead_summary, plan_outline, Block, InducedCluster, LeadSummary, NarrativeOutline, PrepassEntry, Tail,
};
pub use realize::{
    append_tail, check_lead, check_symptom_sentence, check_tail, fallback_tail, narrate_history, narrate_lead, pronoun,
    proper_name_tokens, strip_meta, RealizeLog, GENERATE_RETRIES,
};
pub use time::{choose_lexicon, spell, time_phrase, Lexicon, ADMISSION_SETTINGS};

use serde::{Deserialize, Serialize};

use crate::converter::CaseNarrative;
use crate::gateway::{Gateway, GatewayError};
use crate::graph::SemanticGraph;

#[derive(Debug, thiserror::Error)]
pub enum NarratorError {
    #[error("gateway failure during {stage}: {source}")]
    Gateway {
        stage: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error("lead rejected after retries: {}", rejections.join("; "))]
    Lead { rejections: Vec<String> },
    #[error("tail needs a nonempty draft")]
    EmptyDraft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub lead: RealizeLog,
    pub history: RealizeLog,
    pub tail: RealizeLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub narrative: CaseNarrative,
    pub outline: NarrativeOutline,
    pub log: GenerationLog,
}

/// Plan and realize the narrative for a (perturbed) graph.
pub fn generate(case_id: &str, g: &SemanticGraph, gw: &Gateway) -> Result<Generation, NarratorError> {
    let outline = plan_outline(g);
    let (lead, lead_log) = narrate_lead(&outline, gw)?;
    let (history, history_log) = narrate_history(g, &outline, gw);
    let draft = if history.is_empty() { lead } else { format!("{lead}\n\n{history}") };
    let (text, tail_log) = append_tail(&draft, g, &outline, gw)?;
    Ok(Generation {
        narrative: CaseNarrative {
            case_id: case_id.to_string(),
            text: format!("{}\n", text.trim_end()),
            ground_truth_diagnoses: g.diagnoses.iter().map(|d| d.label.clone()).collect(),
        },
        outline,
        log: GenerationLog { lead: lead_log, history: history_log, tail: tail_log },
    })
}
