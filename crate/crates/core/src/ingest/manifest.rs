use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error reading manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: expected `keyword=CATEGORY`, found {text:?}")]
    BadLine { line: usize, text: String },
}

/// Ordered filename-keyword rules; the first rule whose keyword appears in
/// the lowercased filename decides the category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelManifest {
    rules: Vec<(String, String)>,
}

const DEFAULT_MANIFEST: &str = "\
# category keywords matched against lowercased capture filenames
vimeo=STREAMING
netflix=STREAMING
youtube=STREAMING
chat=CHAT
ssh=C2
rdp=C2
sftp=FILE_TRANSFER
rsync=FILE_TRANSFER
scp=FILE_TRANSFER
voip=VOIP
";

impl Default for LabelManifest {
    fn default() -> Self {
        Self::parse(DEFAULT_MANIFEST).expect("built-in manifest parses")
    }
}

impl LabelManifest {
    pub fn new(rules: Vec<(String, String)>) -> Self {
        let rules = rules
            .into_iter()
            .filter(|(k, _)| !k.is_empty())
            .map(|(k, c)| (k.to_lowercase(), c))
            .collect();
        Self { rules }
    }

    /// Parses `keyword=CATEGORY` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || ManifestError::BadLine {
                line: i + 1,
                text: raw.to_string(),
            };
            let (kw, cat) = line.split_once('=').ok_or_else(bad)?;
            let (kw, cat) = (kw.trim(), cat.trim());
            if kw.is_empty() || cat.is_empty() {
                return Err(bad());
            }
            rules.push((kw.to_lowercase(), cat.to_string()));
        }
        Ok(Self { rules })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }

    pub fn label(&self, filename: &str) -> Option<&str> {
        let name = filename.to_lowercase();
        self.rules
            .iter()
            .find(|(kw, _)| name.contains(kw.as_str()))
            .map(|(_, cat)| cat.as_str())
    }
}

/// Category for a capture filename, or `None` when no keyword matches.
pub fn label_from_filename(filename: &str, manifest: &LabelManifest) -> Option<String> {
    manifest.label(filename).map(str::to_string)
}
