//! Corpus processing and evaluation for text-image translation with region
//! grounding: OCR filtering, spatial merging of lines into blocks, layout
//! refinement, scenario classification, instruction building, prediction
//! parsing and BLEU/IoU scoring.

pub mod corpus;
pub mod eval;
pub mod filters;
pub mod geometry;
pub mod instruct;
pub mod merge;
pub mod par;
pub mod pipeline;
pub mod predparse;
pub mod refine;
pub mod scenario;
pub mod text;

pub use corpus::{ImageAnnotation, LangPair, LayoutBlock, OcrLine};
pub use geometry::{BBox, CoordSpace, ImageDims};
pub use par::Exec;
