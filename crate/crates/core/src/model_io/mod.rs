//! Exchange formats with the extractor: the prompt manifest going out and
//! the tensor bundle coming back.

pub mod bundle;
pub mod manifest;

pub use bundle::{read_bundle, BundleError, Matrix, PromptTensors, TensorBundle};
pub use manifest::{
    build_manifest, chain_prompt_ids, prompt_id, read_tokenization, step_prompt_id, CeatRequest,
    FillStep, Manifest, ManifestError, ManifestOptions, ManifestRecord, Subword, TensorRequest,
    Tokenization,
};
