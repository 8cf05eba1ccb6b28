use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use arn::graph::TuningPolicy;
use arn::vision::{ReorderOp, DEFAULT_K_CAP, MAX_PERTURBATION_DEGREES};
use arn::{PipelineConfig, TilingSpec};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a command needs, as read from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// IDX image file (gzip or raw).
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Separate held-out IDX pair; when absent the test set is drawn from
    /// the training pool, disjoint from the training sample.
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub n_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub network: NetworkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub rho: f64,
    pub threshold: f64,
    pub l2_rho: f64,
    pub l2_threshold: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub k_cap: u32,
    pub mask_floor: Option<f64>,
    pub angles: Vec<f64>,
    pub reorders: Vec<ReorderOp>,
    pub max_epochs: usize,
    pub tuning: TuningPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            images: PathBuf::from("data/mnist-10k-images-idx3-ubyte.gz"),
            labels: PathBuf::from("data/mnist-10k-labels-idx1-ubyte.gz"),
            test_images: None,
            test_labels: None,
            n_per_class: 50,
            test_per_class: 15,
            seed: 1,
            out_dir: PathBuf::from("runs"),
            network: NetworkConfig::default(),
        }
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            rho: p.l1_rho,
            threshold: p.l1_threshold,
            l2_rho: p.l2_rho,
            l2_threshold: p.l2_threshold,
            grid_rows: p.tiling.rows,
            grid_cols: p.tiling.cols,
            k_cap: DEFAULT_K_CAP,
            mask_floor: p.mask_floor,
            angles: p.perturbation_angles,
            reorders: p.feature_reorders,
            max_epochs: p.max_epochs,
            tuning: p.l1_tuning,
        }
    }
}

/// Flags that override config-file fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Resonance control for both layers.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Trigger threshold for both layers.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub l2_rho: Option<f64>,
    #[arg(long)]
    pub l2_threshold: Option<f64>,
    /// Tiling grid as ROWSxCOLS.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub k_cap: Option<u32>,
    #[arg(long)]
    pub mask_floor: Option<f64>,
    /// Comma-separated rotation angles in degrees.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub angles: Option<Vec<f64>>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> anyhow::Result<Self> {
        let mut c = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))
                    .map_err(crate::CliError::io)?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident).+ <- $flag:ident) => {
                if let Some(v) = &o.$flag {
                    c.$($field).+ = v.clone();
                }
            };
        }
        set!(images <- images);
        set!(labels <- labels);
        set!(n_per_class <- n_per_class);
        set!(test_per_class <- test_per_class);
        set!(seed <- seed);
        set!(out_dir <- out);
        if let Some(r) = o.rho {
            c.network.rho = r;
            c.network.l2_rho = r;
        }
        set!(network.k_cap <- k_cap);
        set!(network.angles <- angles);
        set!(network.max_epochs <- max_epochs);
        set!(network.l2_rho <- l2_rho);
        if let Some(p) = &o.test_images {
            c.test_images = Some(p.clone());
        }
        if let Some(p) = &o.test_labels {
            c.test_labels = Some(p.clone());
        }
        if let Some(t) = o.threshold {
            c.network.threshold = t;
            c.network.l2_threshold = t;
        }
        set!(network.l2_threshold <- l2_threshold);
        if let Some(f) = o.mask_floor {
            c.network.mask_floor = Some(f);
        }
        if let Some(g) = &o.grid {
            let (r, cc) = parse_grid(g)?;
            c.network.grid_rows = r;
            c.network.grid_cols = cc;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let n = &self.network;
        for (name, t) in [("threshold", n.threshold), ("l2_threshold", n.l2_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                bail!("{name} must lie in (0, 1), got {t}");
            }
        }
        for (name, r) in [("rho", n.rho), ("l2_rho", n.l2_rho)] {
            if !(r > 0.0 && r.is_finite()) {
                bail!("{name} must be positive, got {r}");
            }
        }
        if let Some(a) = n
            .angles
            .iter()
            .find(|a| a.is_nan() || a.abs() > MAX_PERTURBATION_DEGREES)
        {
            bail!("angle {a} outside ±{MAX_PERTURBATION_DEGREES}");
        }
        if self.test_images.is_some() != self.test_labels.is_some() {
            bail!("test_images and test_labels must be given together");
        }
        self.pipeline()?;
        Ok(())
    }

    pub fn pipeline(&self) -> anyhow::Result<PipelineConfig> {
        let n = &self.network;
        let p = PipelineConfig {
            tiling: TilingSpec::new(28, 28, n.grid_rows, n.grid_cols)?,
            l1_threshold: n.threshold,
            l1_rho: n.rho,
            l1_tuning: n.tuning,
            l2_threshold: n.l2_threshold,
            l2_rho: n.l2_rho,
            k_cap: n.k_cap,
            mask_floor: n.mask_floor,
            perturbation_angles: n.angles.clone(),
            feature_reorders: n.reorders.clone(),
            max_epochs: n.max_epochs,
            ..PipelineConfig::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short hash of the resolved configuration, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let keyed = RunConfig {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        hex::encode(&Sha256::digest(keyed.to_toml().as_bytes())[..8])
    }

    /// Writes the resolved config as `<out>/<command>.config.toml`.
    pub fn write_resolved(&self, command: &str) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join(format!("{command}.config.toml"));
        write_file(&path, &self.to_toml())?;
        Ok(path)
    }
}

fn parse_grid(s: &str) -> anyhow::Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid {s:?} is not ROWSxCOLS"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

pub fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(crate::CliError::io)?;
    }
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(crate::CliError::io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("4x4").unwrap(), (4, 4));
        assert_eq!(parse_grid("2X7").unwrap(), (2, 7));
        assert!(parse_grid("44").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.hash().len(), 16);
        let moved = RunConfig {
            out_dir: "elsewhere".into(),
            ..c.clone()
        };
        assert_eq!(moved.hash(), c.hash());
        let reseeded = RunConfig { seed: 2, ..c.clone() };
        assert_ne!(reseeded.hash(), c.hash());
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides {
            threshold: Some(0.85),
            rho: Some(4.0),
            grid: Some("7x7".into()),
            ..Default::default()
        };
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!(c.network.threshold, 0.85);
        assert_eq!(c.network.l2_threshold, 0.85);
        assert_eq!(c.network.rho, 4.0);
        assert_eq!(c.network.l2_rho, 4.0);
        assert_eq!(c.pipeline().unwrap().tiling.tile_len(), 16);
    }

    #[test]
    fn rejects_bad_values() {
        for o in [
            Overrides {
                threshold: Some(1.0),
                ..Default::default()
            },
            Overrides {
                rho: Some(0.0),
                ..Default::default()
            },
            Overrides {
                angles: Some(vec![20.0]),
                ..Default::default()
            },
            Overrides {
                grid: Some("3x3".into()),
                ..Default::default()
            },
        ] {
            assert!(RunConfig::resolve(&o).is_err());
        }
    }
}
