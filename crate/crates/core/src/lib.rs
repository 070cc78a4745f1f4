//! Solidity bad-practice auditing: lexical parsing, context-enriched
//! function slicing, vector retrieval over a knowledge base of known
//! patterns, three-layer model-backed verification, JSON reporting and a
//! retrieval robustness evaluation harness.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod kb;
pub mod lexer;
pub mod llm;
pub mod report;
pub mod slicer;
pub mod source;
pub mod verifier;
