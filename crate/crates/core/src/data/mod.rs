//! Datasets: SQuAD 2.0 ingestion, the synthetic mismatch task, vocabulary
//! and padded batches.

mod batch;
mod example;
mod squad;
mod synthetic;
mod tokenize;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

pub use batch::{batchify, encode_batch, EncodedBatch, Vocab, PAD_ID, UNK_ID};
pub use example::{read_jsonl, write_jsonl, Example, Span};
pub use squad::{align_answer, parse_squad_v2, SquadParse};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use tokenize::{tokenize, tokenize_words, Token};

use crate::error::Result;

/// Loads line-delimited examples (`.jsonl`) or a SQuAD 2.0 document
/// (anything else).
pub fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl(BufReader::new(File::open(path)?))
    } else {
        let parsed = parse_squad_v2(&std::fs::read_to_string(path)?)?;
        if parsed.skipped > 0 {
            log::warn!("{}: skipped {} unalignable questions", path.display(), parsed.skipped);
        }
        Ok(parsed.examples)
    }
}
