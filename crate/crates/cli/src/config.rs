use std::path::Path;

use serde::Deserialize;

use crate::CliError;

/// Optional TOML settings. Flags and `REASONSEG_*` variables take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub min_image_side: Option<u32>,
    pub min_area: Option<u64>,
    pub retries: Option<u32>,
    pub endpoint: Option<String>,
    pub token: Option<String>,
    pub model: Option<String>,
    pub image_root: Option<String>,
    /// Category ids that keep a single mask in instance modes.
    #[serde(default)]
    pub uncountable_categories: Vec<u64>,
    pub area_tolerance: Option<f64>,
    pub center: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}
