//! Network hyperparameters and presets.

use crate::config::KvConfig;
use crate::error::{Error, Result};

/// How sensitivity maps evolve across phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapsMode {
    /// Full model: initialization network plus per-phase refinement.
    Learned,
    /// Ablation: estimate maps once with the initialization network, then
    /// hold them fixed (refinement module removed).
    FrozenInit,
    /// Ablation: externally supplied maps held fixed; all map-estimation
    /// subnetworks are removed.
    FrozenExternal,
}

impl std::str::FromStr for MapsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(MapsMode::Learned),
            "frozen-init" => Ok(MapsMode::FrozenInit),
            "frozen-external" => Ok(MapsMode::FrozenExternal),
            other => Err(Error::Config(format!("unknown maps mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JdsiConfig {
    /// Unrolled phase count K.
    pub phases: usize,
    pub coils: usize,
    pub height: usize,
    pub width: usize,
    /// Encoder-decoder base filter count; doubles per level up to `unet_max`.
    pub unet_base: usize,
    pub unet_max: usize,
    pub d_layers: usize,
    pub d_filters: usize,
    pub c_layers: usize,
    pub c_filters: usize,
    pub s_layers: usize,
    pub s_filters: usize,
    /// Layers in each of the two thresholding convolution stacks.
    pub i_layers: usize,
    pub i_filters: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub seed: u64,
    pub lambda_init: f64,
    pub gamma_init: f64,
    pub rho_init: f64,
    pub maps_mode: MapsMode,
    /// Use the freshly refined maps inside the gradient step instead of the
    /// previous phase's maps (ablation switch; default keeps the previous).
    pub refreshed_maps_in_grad: bool,
}

impl Default for JdsiConfig {
    /// Full-scale preset: the published layer/filter counts.
    fn default() -> Self {
        Self {
            phases: 5,
            coils: 16,
            height: 320,
            width: 320,
            unet_base: 32,
            unet_max: 256,
            d_layers: 15,
            d_filters: 64,
            c_layers: 5,
            c_filters: 64,
            s_layers: 5,
            s_filters: 64,
            i_layers: 4,
            i_filters: 32,
            epochs: 200,
            lr: 0.001,
            lr_decay: 0.99,
            batch: 2,
            alpha1: 0.1,
            alpha2: 0.1,
            seed: 0,
            lambda_init: 1e6,
            gamma_init: 1.0,
            rho_init: 0.001,
            maps_mode: MapsMode::Learned,
            refreshed_maps_in_grad: false,
        }
    }
}

impl JdsiConfig {
    /// Desk-scale preset: 64x64 four-coil phantoms with slimmed filter
    /// counts so a full training run fits a two-core CPU budget.
    pub fn desk() -> Self {
        Self {
            phases: 5,
            coils: 4,
            height: 64,
            width: 64,
            unet_base: 8,
            unet_max: 64,
            d_layers: 7,
            d_filters: 8,
            c_layers: 5,
            c_filters: 8,
            s_layers: 5,
            s_filters: 8,
            i_layers: 4,
            i_filters: 8,
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases == 0 {
            return Err(Error::Config("phase count must be >= 1".into()));
        }
        for (name, v) in [
            ("coils", self.coils),
            ("unet_base", self.unet_base),
            ("d_layers", self.d_layers),
            ("d_filters", self.d_filters),
            ("c_layers", self.c_layers),
            ("c_filters", self.c_filters),
            ("s_layers", self.s_layers),
            ("s_filters", self.s_filters),
            ("i_layers", self.i_layers),
            ("i_filters", self.i_filters),
            ("batch", self.batch),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(Error::Config(format!(
                "image dims must be divisible by 16 for the 4-level encoder, got {}x{}",
                self.height, self.width
            )));
        }
        if self.lr <= 0.0 || self.lr_decay <= 0.0 || self.lr_decay > 1.0 {
            return Err(Error::Config("bad learning-rate schedule".into()));
        }
        if self.lambda_init < 0.0 || self.rho_init < 0.0 {
            return Err(Error::Config("lambda and rho must start >= 0".into()));
        }
        Ok(())
    }

    /// Build from a key=value config: `preset` selects `desk` (default) or
    /// `paper`, any other key overrides one field.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut cfg = match kv.raw("preset").unwrap_or("desk") {
            "desk" => Self::desk(),
            "paper" => Self::default(),
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        };
        cfg.phases = kv.get_usize("phases", cfg.phases)?;
        cfg.coils = kv.get_usize("coils", cfg.coils)?;
        cfg.height = kv.get_usize("height", cfg.height)?;
        cfg.width = kv.get_usize("width", cfg.width)?;
        cfg.unet_base = kv.get_usize("unet_base", cfg.unet_base)?;
        cfg.unet_max = kv.get_usize("unet_max", cfg.unet_max)?;
        cfg.d_layers = kv.get_usize("d_layers", cfg.d_layers)?;
        cfg.d_filters = kv.get_usize("d_filters", cfg.d_filters)?;
        cfg.c_layers = kv.get_usize("c_layers", cfg.c_layers)?;
        cfg.c_filters = kv.get_usize("c_filters", cfg.c_filters)?;
        cfg.s_layers = kv.get_usize("s_layers", cfg.s_layers)?;
        cfg.s_filters = kv.get_usize("s_filters", cfg.s_filters)?;
        cfg.i_layers = kv.get_usize("i_layers", cfg.i_layers)?;
        cfg.i_filters = kv.get_usize("i_filters", cfg.i_filters)?;
        cfg.epochs = kv.get_usize("epochs", cfg.epochs)?;
        cfg.lr = kv.get_f64("lr", cfg.lr)?;
        cfg.lr_decay = kv.get_f64("lr_decay", cfg.lr_decay)?;
        cfg.batch = kv.get_usize("batch", cfg.batch)?;
        cfg.alpha1 = kv.get_f64("alpha1", cfg.alpha1)?;
        cfg.alpha2 = kv.get_f64("alpha2", cfg.alpha2)?;
        cfg.seed = kv.get_u64("seed", cfg.seed)?;
        cfg.lambda_init = kv.get_f64("lambda", cfg.lambda_init)?;
        cfg.gamma_init = kv.get_f64("gamma", cfg.gamma_init)?;
        cfg.rho_init = kv.get_f64("rho", cfg.rho_init)?;
        if let Some(mode) = kv.raw("maps_mode") {
            cfg.maps_mode = mode.parse()?;
        }
        cfg.refreshed_maps_in_grad =
            kv.get_bool("refreshed_maps_in_grad", cfg.refreshed_maps_in_grad)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
