//! Text-generation client over a [`JsonTransport`]: `{"prompt","images"}` in,
//! `{"text"}` out.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::transport::{JsonTransport, TranscriptMode, TransportError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub prompt: String,
    #[serde(default)]
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
}

#[derive(Clone)]
pub struct ModelClient {
    transport: Arc<dyn JsonTransport>,
}

impl std::fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelClient").field("mode", &self.mode()).finish()
    }
}

impl ModelClient {
    pub fn new(transport: Arc<dyn JsonTransport>) -> Self {
        Self { transport }
    }

    /// Client backed by an in-process function from prompt to response text.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&str) -> Result<String, TransportError> + Send + Sync + 'static,
    {
        Self::new(Arc::new(FnTransport(f)))
    }

    pub fn mode(&self) -> TranscriptMode {
        self.transport.mode()
    }

    pub fn complete(&self, prompt: &str, images: &[String]) -> Result<String, TransportError> {
        let req = ModelRequest {
            prompt: prompt.to_string(),
            images: images.to_vec(),
        };
        let value = serde_json::to_value(&req).expect("serializable request");
        let resp: ModelResponse = serde_json::from_value(self.transport.call(&value)?)
            .map_err(|e| TransportError::Payload(e.to_string()))?;
        Ok(resp.text)
    }
}

struct FnTransport<F>(F);

impl<F> JsonTransport for FnTransport<F>
where
    F: Fn(&str) -> Result<String, TransportError> + Send + Sync,
{
    fn call(&self, request: &Value) -> Result<Value, TransportError> {
        let req: ModelRequest =
            serde_json::from_value(request.clone()).map_err(|e| TransportError::Payload(e.to_string()))?;
        let text = (self.0)(&req.prompt)?;
        Ok(serde_json::to_value(ModelResponse { text }).expect("serializable response"))
    }
}

/// Build the transcript entry a live model would have produced for `prompt`.
pub fn transcript_entry(prompt: &str, text: &str) -> crate::transport::TranscriptEntry {
    let req = serde_json::to_value(ModelRequest {
        prompt: prompt.to_string(),
        images: Vec::new(),
    })
    .expect("serializable request");
    let resp = serde_json::to_value(ModelResponse { text: text.to_string() }).expect("serializable response");
    crate::transport::TranscriptEntry::new(req, resp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::ReplayTransport;

    #[test]
    fn replayed_entry_answers_matching_prompt() {
        let client = ModelClient::new(Arc::new(ReplayTransport::from_entries([transcript_entry(
            "hi", "there",
        )])));
        assert_eq!(client.complete("hi", &[]).unwrap(), "there");
        assert_eq!(client.mode(), TranscriptMode::Replay);
        assert!(client.complete("other", &[]).is_err());
    }

    #[test]
    fn payload_without_text_is_an_error() {
        struct Bad;
        impl JsonTransport for Bad {
            fn call(&self, _: &Value) -> Result<Value, TransportError> {
                Ok(serde_json::json!({"nope": 1}))
            }
        }
        let client = ModelClient::new(Arc::new(Bad));
        assert!(matches!(client.complete("x", &[]), Err(TransportError::Payload(_))));
    }
}
