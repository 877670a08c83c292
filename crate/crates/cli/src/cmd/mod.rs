pub mod diagnose;
pub mod generate;
pub mod gradcheck;
pub mod predict;
pub mod train;

/// Header entries every output file carries (the tool version is written
/// by the file formats themselves).
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            seed,
        }
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("config_hash".into(), self.config_hash.clone()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}
