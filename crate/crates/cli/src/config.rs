use std::path::{Path, PathBuf};

use btilab::harness::MatrixCell;
use btilab::scan::ScanConfig;
use btilab::symex::{EntryModel, ExplorationConfig};
use btilab::uarch::{Countermeasures, CpuModel, UarchConfig};
use serde::Deserialize;

/// Environment variable naming a config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "BTILAB_CONFIG";

/// Everything a config file can set. Absent tables keep built-in defaults;
/// command-line flags are applied on top afterwards.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub entry: EntryModel,
    pub explore: ExplorationConfig,
    pub scan2: ScanConfig,
    pub uarch: UarchConfig,
}

impl FileConfig {
    pub fn load(explicit: Option<&Path>) -> Result<FileConfig, String> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = read(&path)?;
        let cfg: FileConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.entry.selector().map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.explore.validate().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(cfg)
    }
}

pub fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    cell: Vec<CellSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct CellSpec {
    name: String,
    #[serde(default = "skylake")]
    cpu: CpuModel,
    #[serde(default)]
    countermeasures: Countermeasures,
    poison_core: Option<u8>,
}

fn skylake() -> CpuModel {
    CpuModel::Skylake
}

/// `[[cell]]` tables, each with a name, optional cpu, countermeasures and
/// poisoning core.
pub fn matrix_from_toml(text: &str) -> Result<Vec<MatrixCell>, String> {
    let m: MatrixFile = toml::from_str(text).map_err(|e| e.to_string())?;
    Ok(m.cell
        .into_iter()
        .map(|c| MatrixCell {
            name: c.name,
            cpu: c.cpu,
            countermeasures: c.countermeasures,
            poison_core: c.poison_core,
        })
        .collect())
}
