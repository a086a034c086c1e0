use std::sync::Arc;

/// Encoded text prompt. Immutable once built; cloning shares the buffers.
///
/// `conditional` holds the embedding of the prompt itself; `unconditional`
/// the embedding of the empty prompt, when the encoder provides one for
/// classifier-free guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    source_text: Arc<str>,
    encoder_id: Arc<str>,
    shape: Arc<[usize]>,
    conditional: Arc<[f32]>,
    unconditional: Option<Arc<[f32]>>,
}

impl PromptEmbedding {
    pub fn new(
        source_text: &str,
        encoder_id: &str,
        shape: Vec<usize>,
        conditional: Vec<f32>,
        unconditional: Option<Vec<f32>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), conditional.len());
        Self {
            source_text: source_text.into(),
            encoder_id: encoder_id.into(),
            shape: shape.into(),
            conditional: conditional.into(),
            unconditional: unconditional.map(Into::into),
        }
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn conditional(&self) -> &[f32] {
        &self.conditional
    }

    pub fn unconditional(&self) -> Option<&[f32]> {
        self.unconditional.as_deref()
    }
}
