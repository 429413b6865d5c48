//! Byte-level deep packet inspection with few-shot malware classification.
//!
//! The pipeline: PCAP captures are parsed into transport-layer payloads,
//! labeled against ground-truth rules, deduplicated, balanced, and tokenized
//! into fixed-length integer sequences. A transformer byte encoder is
//! pretrained on pairs of known classes, pooled embeddings are extracted,
//! and a prototypical-network head classifies novel classes from a handful
//! of labeled examples. An encryption harness measures how AES-256-CBC and
//! Fernet encryption affect classifiability of the same byte streams.

pub mod crypto;
pub mod encoder;
pub mod fewshot;
pub mod ingest;
pub mod seed;
pub mod synth;
pub mod tensor;
