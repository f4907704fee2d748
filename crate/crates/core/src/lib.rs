//! Measuring group–trait stereotype associations in masked language models.
//!
//! The language model itself stays outside this crate: an extractor runs the
//! prompts listed in a [`model_io::Manifest`] and returns a
//! [`model_io::TensorBundle`]. Everything downstream of that bundle (the four
//! association measures, alignment with human ratings, and the intersectional
//! analyses) lives here.

pub mod alignment;
pub mod intersect;
pub mod lexicon;
pub mod model_io;
pub mod pipeline;
pub mod provenance;
pub mod scoring;
pub mod squish;
pub mod synthetic;
