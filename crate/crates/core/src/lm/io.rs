//! Model directory: `config.txt` (key = value), `vocab.txt` (line number =
//! id), `manifest.txt` (tensor name, shape, byte offset) and `weights.bin`
//! (little-endian f32 in manifest order).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::model::{Layout, Model};
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};

const MANIFEST_HEADER: &str = "dager-weights 1";

/// A model together with the vocabulary it was trained on.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub tokenizer: Tokenizer,
    pub model: Model,
}

fn manifest(layout: &Layout) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MANIFEST_HEADER}");
    let _ = writeln!(s, "dtype f32 le");
    for t in &layout.tensors {
        let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "tensor {} {} {}", t.name, shape.join(","), t.offset * 4);
    }
    let _ = writeln!(s, "total_bytes {}", layout.total * 4);
    s
}

pub fn save_model(lm: &LanguageModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write("config.txt", lm.model.config().to_text().as_bytes())?;
    lm.tokenizer.save(&dir.join("vocab.txt"))?;
    write("manifest.txt", manifest(lm.model.layout()).as_bytes())?;
    let bytes: Vec<u8> = lm.model.params().iter().flat_map(|p| p.to_le_bytes()).collect();
    write("weights.bin", &bytes)
}

pub fn load_model(dir: &Path) -> Result<LanguageModel> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(p, e))
    };
    let config = ModelConfig::from_text(&read("config.txt")?)?;
    let tokenizer = Tokenizer::load(&dir.join("vocab.txt"))?;
    if tokenizer.len() != config.vocab_size {
        return Err(Error::ModelFormat(format!(
            "config vocab_size {} but vocab.txt lists {} tokens",
            config.vocab_size,
            tokenizer.len()
        )));
    }
    let layout = Layout::new(&config);
    let expected = manifest(&layout);
    let found = read("manifest.txt")?;
    if found.lines().next() != Some(MANIFEST_HEADER) {
        return Err(Error::ModelFormat("unsupported manifest version".into()));
    }
    if let Some((want, got)) = expected.lines().zip(found.lines()).find(|(a, b)| a != b) {
        return Err(Error::ModelFormat(format!(
            "manifest disagrees with config: expected `{want}`, found `{got}`"
        )));
    }
    if expected.lines().count() != found.lines().count() {
        return Err(Error::ModelFormat("manifest tensor count differs from config".into()));
    }
    let path = dir.join("weights.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != layout.total * 4 {
        return Err(Error::ModelFormat(format!(
            "weights.bin holds {} bytes, manifest declares {}",
            bytes.len(),
            layout.total * 4
        )));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(LanguageModel {
        tokenizer,
        model: Model::from_parts(config, params),
    })
}
