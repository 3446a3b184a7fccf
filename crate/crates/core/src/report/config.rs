use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{SignalStrengths, SynthConfig};
use crate::error::{Error, IoContext, Result};
use crate::evalharness::{scenario_matrix, HarnessConfig, PhaseSet, ScenarioSpec};
use crate::latents::{Ae2dConfig, Mae3dConfig};
use crate::seed::child_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Narrow networks and short schedules sized for one CPU core.
    Desk,
    /// Full-size reference hyperparameters.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum PhaseChoice {
    #[serde(rename = "both")]
    #[value(name = "both")]
    Both,
    #[serde(rename = "pre_op")]
    #[value(name = "pre_op")]
    PreOp,
}

/// Everything one pipeline run depends on. Read from a flat TOML file; each
/// key has a same-named command-line flag that takes precedence.
///
/// Sub-seeds are `child_seed(seed, component)`: `cohort`, `folds`,
/// `ae2d/fold{f}`, `mae3d/fold{f}` and `scenarios`. SSL pretraining uses
/// `ssl_seed` instead so that its checkpoint can be shared between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Cohort directory to ingest; a synthetic cohort is generated when unset.
    pub cohort: Option<PathBuf>,
    pub n_subjects: usize,
    pub n_positive: usize,
    pub volume_shape: [usize; 3],
    pub spacing_mm: f64,
    pub signal_tabular_pre: f64,
    pub signal_tabular_post: f64,
    pub signal_imaging: f64,
    pub missing_rate: f64,
    pub k: usize,
    pub volume_bins: usize,
    pub roi_mm: f64,
    pub phase: PhaseChoice,
    /// Scenario ids or prefixes (`gbt`, `daft/daft-3dssl`); empty runs all.
    pub scenarios: Vec<String>,
    pub profile: Profile,
    pub ae2d_epochs: Option<usize>,
    pub mae_pretrain_epochs: Option<usize>,
    pub mae_finetune_epochs: Option<usize>,
    /// Size of the separate cohort the 3D MAE is pretrained on.
    pub ssl_subjects: usize,
    pub ssl_seed: u64,
    /// Pretrained MAE checkpoint; reused when present, written otherwise.
    pub ssl_checkpoint: Option<PathBuf>,
    pub resnet_epochs: Option<usize>,
    pub daft_epochs_2d: Option<usize>,
    pub daft_epochs_3d: Option<usize>,
    pub gbt_rounds: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            seed: 42,
            out: PathBuf::from("runs/default"),
            cohort: None,
            n_subjects: s.n_subjects,
            n_positive: s.n_positive,
            volume_shape: s.volume_shape,
            spacing_mm: s.spacing_mm[0],
            signal_tabular_pre: s.signal_strengths.tabular_pre,
            signal_tabular_post: s.signal_strengths.tabular_post,
            signal_imaging: s.signal_strengths.imaging,
            missing_rate: s.missing_rate,
            k: 5,
            volume_bins: 3,
            roi_mm: 160.0,
            phase: PhaseChoice::Both,
            scenarios: Vec::new(),
            profile: Profile::Desk,
            ae2d_epochs: None,
            mae_pretrain_epochs: None,
            mae_finetune_epochs: None,
            ssl_subjects: 200,
            ssl_seed: 7,
            ssl_checkpoint: None,
            resnet_epochs: None,
            daft_epochs_2d: None,
            daft_epochs_3d: None,
            gbt_rounds: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(format!("config file {}", path.display())));
        }
        Self::from_toml(&fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k = {} (need at least 2 folds)", self.k)));
        }
        if !(self.roi_mm > 0.0) {
            return Err(Error::Config(format!("roi_mm = {} must be positive", self.roi_mm)));
        }
        if let Some(p) = &self.cohort {
            if !p.exists() {
                return Err(Error::Missing(format!("cohort directory {}", p.display())));
            }
        } else {
            self.synth_config().validate()?;
        }
        self.specs()?;
        Ok(())
    }

    pub fn sub_seed(&self, component: &str) -> u64 {
        child_seed(self.seed, component)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_subjects: self.n_subjects,
            n_positive: self.n_positive,
            volume_shape: self.volume_shape,
            spacing_mm: [self.spacing_mm; 3],
            signal_strengths: SignalStrengths {
                tabular_pre: self.signal_tabular_pre,
                tabular_post: self.signal_tabular_post,
                imaging: self.signal_imaging,
            },
            seed: self.sub_seed("cohort"),
            missing_rate: self.missing_rate,
        }
    }

    /// The external cohort the MAE is pretrained on: same acquisition grid,
    /// independent subjects, fixed by `ssl_seed`.
    pub fn ssl_synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_subjects: self.ssl_subjects,
            n_positive: (self.ssl_subjects / 10).max(1),
            seed: child_seed(self.ssl_seed, "cohort"),
            ..self.synth_config()
        }
    }

    pub fn ae2d_config(&self, slice_hw: [usize; 2], fold: usize) -> Ae2dConfig {
        let seed = self.sub_seed(&format!("ae2d/fold{fold}"));
        let mut c = match self.profile {
            Profile::Desk => Ae2dConfig {
                epochs: 20,
                ..Ae2dConfig::desk(seed)
            },
            Profile::Paper => Ae2dConfig::paper(seed),
        };
        c.input_hw = slice_hw;
        if let Some(e) = self.ae2d_epochs {
            c.epochs = e;
        }
        c
    }

    /// Pretraining configuration; per-fold fine-tuning reseeds it with
    /// `mae3d/fold{f}`.
    pub fn mae3d_config(&self, roi_shape: [usize; 3]) -> Mae3dConfig {
        let seed = child_seed(self.ssl_seed, "mae3d/pretrain");
        let mut c = match self.profile {
            Profile::Desk => Mae3dConfig {
                finetune_epochs: 5,
                ..Mae3dConfig::desk(seed)
            },
            Profile::Paper => Mae3dConfig::paper(seed),
        };
        c.roi_shape = roi_shape;
        if let Some(e) = self.mae_pretrain_epochs {
            c.pretrain_epochs = e;
        }
        if let Some(e) = self.mae_finetune_epochs {
            c.finetune_epochs = e;
        }
        c
    }

    pub fn harness(&self) -> HarnessConfig {
        let mut h = match self.profile {
            Profile::Desk => HarnessConfig::desk(),
            Profile::Paper => HarnessConfig::paper(),
        };
        if let Some(e) = self.resnet_epochs {
            h.resnet.epochs = e;
        }
        if let Some(e) = self.daft_epochs_2d {
            h.daft.epochs_2d = e;
        }
        if let Some(e) = self.daft_epochs_3d {
            h.daft.epochs_3d = e;
        }
        if let Some(r) = self.gbt_rounds {
            h.gbt.n_rounds = r;
        }
        h
    }

    /// Selected scenarios in matrix order.
    pub fn specs(&self) -> Result<Vec<ScenarioSpec>> {
        let all = scenario_matrix(self.sub_seed("scenarios"));
        for want in &self.scenarios {
            if !all.iter().any(|s| matches_filter(s, want)) {
                return Err(Error::Config(format!("scenario filter {want:?} matches nothing")));
            }
        }
        let out: Vec<ScenarioSpec> = all
            .into_iter()
            .filter(|s| self.scenarios.is_empty() || self.scenarios.iter().any(|w| matches_filter(s, w)))
            .filter(|s| self.phase == PhaseChoice::Both || s.phase != Some(PhaseSet::PrePost))
            .collect();
        if out.is_empty() {
            return Err(Error::Config("no scenarios selected".into()));
        }
        Ok(out)
    }

    /// Hash of everything that determines the results (not output paths).
    pub fn result_hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.ssl_checkpoint = None;
        crate::seed::config_hash(&c)
    }
}

/// Command-line mirror of every [`RunConfig`] key; set flags win over the
/// config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ingest this cohort directory instead of generating one.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long)]
    pub n_positive: Option<usize>,
    /// Voxels as z,y,x.
    #[arg(long, value_name = "Z,Y,X", value_parser = parse_shape)]
    pub volume_shape: Option<[usize; 3]>,
    #[arg(long)]
    pub spacing_mm: Option<f64>,
    #[arg(long)]
    pub signal_tabular_pre: Option<f64>,
    #[arg(long)]
    pub signal_tabular_post: Option<f64>,
    #[arg(long)]
    pub signal_imaging: Option<f64>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub volume_bins: Option<usize>,
    #[arg(long)]
    pub roi_mm: Option<f64>,
    #[arg(long, value_enum)]
    pub phase: Option<PhaseChoice>,
    /// Comma-separated scenario ids or prefixes.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    #[arg(long)]
    pub ae2d_epochs: Option<usize>,
    #[arg(long)]
    pub mae_pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub mae_finetune_epochs: Option<usize>,
    #[arg(long)]
    pub ssl_subjects: Option<usize>,
    #[arg(long)]
    pub ssl_seed: Option<u64>,
    #[arg(long)]
    pub ssl_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub resnet_epochs: Option<usize>,
    #[arg(long)]
    pub daft_epochs_2d: Option<usize>,
    #[arg(long)]
    pub daft_epochs_3d: Option<usize>,
    #[arg(long)]
    pub gbt_rounds: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone();
                }
            )*};
        }
        macro_rules! set_opt {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = Some(v.clone());
                }
            )*};
        }
        set!(
            seed, out, n_subjects, n_positive, spacing_mm, signal_tabular_pre, signal_tabular_post, signal_imaging,
            missing_rate, k, volume_bins, roi_mm, phase, scenarios, profile, ssl_subjects, ssl_seed
        );
        set_opt!(
            cohort, ae2d_epochs, mae_pretrain_epochs, mae_finetune_epochs, ssl_checkpoint, resnet_epochs,
            daft_epochs_2d, daft_epochs_3d, gbt_rounds
        );
        if let Some(v) = self.volume_shape {
            c.volume_shape = v;
        }
    }
}

fn parse_shape(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected three sizes z,y,x, got {}", v.len()))
}

fn matches_filter(s: &ScenarioSpec, want: &str) -> bool {
    let id = s.id();
    id == want || id.starts_with(&format!("{want}/"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_keys_and_defaults() {
        let c = RunConfig::from_toml("seed = 3\nscenarios = [\"gbt\"]\nphase = \"pre_op\"\nk = 4\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.k, 4);
        assert_eq!(c.roi_mm, 160.0);
        let ids: Vec<String> = c.specs().unwrap().iter().map(|s| s.id()).collect();
        assert_eq!(ids, ["gbt/tabular/pre_op", "gbt/latent2d", "gbt/tabular+latent2d/pre_op"]);
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn seeds_follow_the_global_seed() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 43, ..a.clone() };
        assert_ne!(a.synth_config().seed, b.synth_config().seed);
        assert_eq!(a.synth_config().seed, child_seed(42, "cohort"));
        assert_ne!(a.ae2d_config([32, 32], 0).seed, a.ae2d_config([32, 32], 1).seed);
        // the external pretraining cohort does not depend on the run seed
        assert_eq!(a.ssl_synth_config(), b.ssl_synth_config());
        assert_eq!(a.mae3d_config([20; 3]), b.mae3d_config([20; 3]));
        assert_eq!(a.result_hash(), RunConfig { out: "elsewhere".into(), ..a.clone() }.result_hash());
        assert_ne!(a.result_hash(), b.result_hash());
    }

    #[test]
    fn flags_override_the_file() {
        let mut c = RunConfig::from_toml("seed = 3\nk = 4\n").unwrap();
        Overrides {
            seed: Some(9),
            scenarios: Some(vec!["daft".into()]),
            volume_shape: Some([12, 16, 16]),
            ..Default::default()
        }
        .apply(&mut c);
        assert_eq!((c.seed, c.k, c.volume_shape), (9, 4, [12, 16, 16]));
        assert_eq!(c.specs().unwrap().len(), 6);
    }

    #[test]
    fn unknown_scenario_filter_is_rejected() {
        let c = RunConfig {
            scenarios: vec!["gbt/tab".into()],
            ..Default::default()
        };
        assert!(c.specs().is_err());
    }
}
