use crate::client::VlmError;

const FORMAT_V1: &str = "Answer with a JSON array of points such as [{\"x\": 41.5, \"y\": 63.0}]. \
Coordinates are percentages of the image width (x) and height (y), measured from the top-left corner, in [0, 100].";

/// Prompt text for first and refinement turns.
///
/// Placeholders: `{query}`, `{turn}` (refinement only) and `{format}`, the
/// coordinate-format instruction, which both templates must contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub first_turn: String,
    pub refinement_turn: String,
    pub format_instruction: String,
}

impl PromptTemplate {
    pub fn poivre_v1() -> Self {
        Self {
            id: "poivre-v1".into(),
            first_turn: "Point to the following in the image: {query}\n{format}".into(),
            refinement_turn: "Point to the following in the image: {query}\n\
This is turn {turn}. The brown dots, labelled with turn numbers, mark your own previous answers. \
If they are not on the target, give corrected coordinates; otherwise repeat them.\n{format}"
                .into(),
            format_instruction: FORMAT_V1.into(),
        }
    }

    pub fn by_id(id: &str) -> Result<Self, VlmError> {
        match id {
            "poivre-v1" => Ok(Self::poivre_v1()),
            other => Err(VlmError::Config(format!("unknown prompt template {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<(), VlmError> {
        for (name, t) in [("first_turn", &self.first_turn), ("refinement_turn", &self.refinement_turn)] {
            if !t.contains("{format}") {
                return Err(VlmError::Config(format!("{name} template lacks {{format}}")));
            }
        }
        if self.format_instruction.trim().is_empty() {
            return Err(VlmError::Config("format instruction is empty".into()));
        }
        Ok(())
    }

    /// Text for 1-based `turn`.
    pub fn render(&self, query: &str, turn: usize) -> String {
        let t = if turn <= 1 {
            &self.first_turn
        } else {
            &self.refinement_turn
        };
        t.replace("{format}", &self.format_instruction)
            .replace("{turn}", &turn.to_string())
            .replace("{query}", query)
    }
}
