//! Loading inputs and writing outputs. Every output goes through
//! [`write_atomic`], so an interrupted run never leaves a truncated file.

use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use arnn_core::corpus::{read_corpus, RawDialogue, Vocabulary};
use arnn_core::models::{read_checkpoint, Model};
use arnn_core::topics::TopicModel;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes to a temporary file in the target directory, then renames it
/// over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(dir).map_err(|e| CliError::from(e).at(dir))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::from(e).at(dir))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| CliError::from(e.error).at(path))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::from(e).at(path))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::from(e).at(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_vocab(path: &Path) -> CliResult<Vocabulary> {
    Vocabulary::from_file_str(&read_text(path)?).map_err(|e| CliError::from(e).at(path))
}

pub fn load_corpus(path: &Path) -> CliResult<Vec<RawDialogue>> {
    let file = fs::File::open(path).map_err(|e| CliError::from(e).at(path))?;
    read_corpus(BufReader::new(file)).map_err(|e| CliError::from(e).at(path))
}

/// Reads a checkpoint and refuses it unless it was trained with `vocab`.
pub fn load_model(path: &Path, vocab: &Vocabulary) -> CliResult<Model> {
    let bytes = read_bytes(path)?;
    let (header, model) = read_checkpoint(bytes.as_slice()).map_err(|e| CliError::from(e).at(path))?;
    let hash = vocab.hash();
    if header.vocab_hash != hash {
        return Err(CliError::Data(format!(
            "{}: vocabulary hash mismatch (checkpoint {}, vocabulary {hash}); refusing to run",
            path.display(),
            header.vocab_hash
        )));
    }
    if model.vocab_size() != vocab.len() {
        return Err(CliError::Data(format!(
            "{}: checkpoint vocabulary size {} differs from {}",
            path.display(),
            model.vocab_size(),
            vocab.len()
        )));
    }
    Ok(model)
}

pub fn load_topic_model(path: &Path, vocab: &Vocabulary) -> CliResult<TopicModel> {
    let bytes = read_bytes(path)?;
    let tm = TopicModel::read(bytes.as_slice()).map_err(|e| CliError::from(e).at(path))?;
    if tm.vocab != vocab.len() {
        return Err(CliError::Data(format!(
            "{}: topic model vocabulary size {} differs from {}",
            path.display(),
            tm.vocab,
            vocab.len()
        )));
    }
    Ok(tm)
}
