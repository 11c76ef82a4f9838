use std::io::Write;
use std::path::Path;

use crate::corpus::{
    parse_conll, scan_entity_types, AnnotatedSentence, ParseOptions, TagVocabulary,
};
use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file in the target directory, then renames it
/// into place. Parent directories are created as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Uses `types` when given, otherwise the types named in `files`.
pub fn load_vocabulary(types: &[String], files: &[&Path]) -> Result<TagVocabulary> {
    if !types.is_empty() {
        return TagVocabulary::new(types);
    }
    let texts = files
        .iter()
        .map(|p| read_text(p))
        .collect::<Result<Vec<_>>>()?;
    let scanned = scan_entity_types(&texts);
    if scanned.is_empty() {
        return Err(Error::Usage("no entity types found; pass --types".into()));
    }
    TagVocabulary::new(&scanned)
}

pub fn load_corpus(path: &Path, vocab: &TagVocabulary) -> Result<Vec<AnnotatedSentence>> {
    let text = read_text(path)?;
    parse_conll(&text, vocab, ParseOptions::default()).map_err(|e| match e {
        Error::Format { line, message } => Error::Format {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Validation {
            line,
            position,
            message,
        } => Error::Validation {
            line,
            position,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
