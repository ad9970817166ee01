//! Flat key=value run configuration with defaults matching each module's
//! design constants. Unknown keys are rejected to catch typos; dumping the
//! effective config and re-running with it reproduces the run.

use std::path::Path;

use aifield::align::{AlignConfig, FlowParams, RansacParams};
use aifield::fusion::StagePlan;
use aifield::scenegen::GenOptions;
use aifield::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // Seeds and dataset shape.
    pub master_seed: u64,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Train against the foreground-focused main variant (else background).
    pub use_fg: bool,

    // Stage plan.
    pub k_samples: usize,
    pub stage1_iters: usize,
    pub stage1_batch: usize,
    pub stage2_iters: usize,
    pub stage2_patches: usize,
    pub patch_size: usize,
    pub stage2_pad: usize,
    pub stage2_views: usize,
    pub stage3_iters: usize,
    pub stage3_batch: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub lr_stage3: f64,
    pub a_init: f64,
    pub d_f_init: f64,
    pub log_every: usize,

    // Bokeh constants.
    pub gamma: f64,
    pub beta: f64,

    // Alignment thresholds.
    pub ransac_iters: usize,
    pub ransac_tol: f64,
    pub flow_levels: usize,
    pub flow_window: usize,
    pub flow_iters: usize,
    pub flow_damping: f64,
    pub conf_t: f64,

    // Default paths (normally given as flags).
    pub dataset_dir: String,
    pub bundle_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plan = StagePlan::default();
        let ransac = RansacParams::default();
        let flow = FlowParams::default();
        RunConfig {
            master_seed: 42,
            views: 24,
            width: 96,
            height: 72,
            use_fg: true,
            k_samples: plan.k_samples,
            stage1_iters: plan.stage1_iters,
            stage1_batch: plan.stage1_batch,
            stage2_iters: plan.stage2_iters,
            stage2_patches: plan.stage2_patches,
            patch_size: plan.patch_size,
            stage2_pad: plan.stage2_pad,
            stage2_views: plan.stage2_views,
            stage3_iters: plan.stage3_iters,
            stage3_batch: plan.stage3_batch,
            lr_stage1: plan.lr_stage1,
            lr_stage2: plan.lr_stage2,
            lr_stage3: plan.lr_stage3,
            a_init: plan.a_init,
            d_f_init: plan.d_f_init,
            log_every: plan.log_every,
            gamma: plan.gamma,
            beta: plan.beta,
            ransac_iters: ransac.iters,
            ransac_tol: ransac.inlier_tol_px,
            flow_levels: flow.levels,
            flow_window: flow.window,
            flow_iters: flow.iters,
            flow_damping: flow.damping,
            conf_t: 1.0,
            dataset_dir: String::new(),
            bundle_dir: String::new(),
        }
    }
}

macro_rules! config_keys {
    ($self:ident, $key:ident, $value:ident, { $($name:literal => $field:ident : $ty:ty),+ $(,)? }) => {
        match $key {
            $($name => {
                $self.$field = $value.parse::<$ty>().map_err(|_| {
                    Error::Parameter(format!("config key `{}`: cannot parse `{}`", $key, $value))
                })?;
            })+
            other => {
                return Err(Error::Parameter(format!("unknown config key `{other}`")));
            }
        }
    };
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        config_keys!(self, key, value, {
            "master_seed" => master_seed: u64,
            "views" => views: usize,
            "width" => width: usize,
            "height" => height: usize,
            "use_fg" => use_fg: bool,
            "k_samples" => k_samples: usize,
            "stage1_iters" => stage1_iters: usize,
            "stage1_batch" => stage1_batch: usize,
            "stage2_iters" => stage2_iters: usize,
            "stage2_patches" => stage2_patches: usize,
            "patch_size" => patch_size: usize,
            "stage2_pad" => stage2_pad: usize,
            "stage2_views" => stage2_views: usize,
            "stage3_iters" => stage3_iters: usize,
            "stage3_batch" => stage3_batch: usize,
            "lr_stage1" => lr_stage1: f64,
            "lr_stage2" => lr_stage2: f64,
            "lr_stage3" => lr_stage3: f64,
            "a_init" => a_init: f64,
            "d_f_init" => d_f_init: f64,
            "log_every" => log_every: usize,
            "gamma" => gamma: f64,
            "beta" => beta: f64,
            "ransac_iters" => ransac_iters: usize,
            "ransac_tol" => ransac_tol: f64,
            "flow_levels" => flow_levels: usize,
            "flow_window" => flow_window: usize,
            "flow_iters" => flow_iters: usize,
            "flow_damping" => flow_damping: f64,
            "conf_t" => conf_t: f64,
            "dataset_dir" => dataset_dir: String,
            "bundle_dir" => bundle_dir: String,
        });
        Ok(())
    }

    /// Parse a config file (comments with `#`, blank lines allowed) and
    /// apply `key=value` overrides on top.
    pub fn from_sources(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Parameter(format!(
                        "{}:{}: expected key=value, got `{line}`",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                cfg.set(key.trim(), value)?;
            }
        }
        for kv in overrides {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                Error::Parameter(format!("--set expects key=value, got `{kv}`"))
            })?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    /// Canonical dump; parsing it back yields an identical config.
    pub fn dump(&self) -> String {
        format!(
            "master_seed={}\nviews={}\nwidth={}\nheight={}\nuse_fg={}\n\
             k_samples={}\nstage1_iters={}\nstage1_batch={}\nstage2_iters={}\n\
             stage2_patches={}\npatch_size={}\nstage2_pad={}\nstage2_views={}\n\
             stage3_iters={}\nstage3_batch={}\nlr_stage1={}\nlr_stage2={}\n\
             lr_stage3={}\na_init={}\nd_f_init={}\nlog_every={}\ngamma={}\nbeta={}\n\
             ransac_iters={}\nransac_tol={}\nflow_levels={}\nflow_window={}\n\
             flow_iters={}\nflow_damping={}\nconf_t={}\ndataset_dir={}\nbundle_dir={}\n",
            self.master_seed,
            self.views,
            self.width,
            self.height,
            self.use_fg,
            self.k_samples,
            self.stage1_iters,
            self.stage1_batch,
            self.stage2_iters,
            self.stage2_patches,
            self.patch_size,
            self.stage2_pad,
            self.stage2_views,
            self.stage3_iters,
            self.stage3_batch,
            self.lr_stage1,
            self.lr_stage2,
            self.lr_stage3,
            self.a_init,
            self.d_f_init,
            self.log_every,
            self.gamma,
            self.beta,
            self.ransac_iters,
            self.ransac_tol,
            self.flow_levels,
            self.flow_window,
            self.flow_iters,
            self.flow_damping,
            self.conf_t,
            self.dataset_dir,
            self.bundle_dir,
        )
    }

    pub fn stage_plan(&self) -> StagePlan {
        StagePlan {
            stage1_iters: self.stage1_iters,
            stage1_batch: self.stage1_batch,
            stage2_iters: self.stage2_iters,
            stage2_patches: self.stage2_patches,
            patch_size: self.patch_size,
            stage2_pad: self.stage2_pad,
            stage2_views: self.stage2_views,
            stage3_iters: self.stage3_iters,
            stage3_batch: self.stage3_batch,
            k_samples: self.k_samples,
            lr_stage1: self.lr_stage1,
            lr_stage2: self.lr_stage2,
            lr_stage3: self.lr_stage3,
            a_init: self.a_init,
            d_f_init: self.d_f_init,
            gamma: self.gamma,
            beta: self.beta,
            seed: self.master_seed,
            log_every: self.log_every,
            ..StagePlan::default()
        }
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            ransac: RansacParams {
                iters: self.ransac_iters,
                inlier_tol_px: self.ransac_tol,
                seed: self.master_seed,
            },
            flow: FlowParams {
                levels: self.flow_levels,
                window: self.flow_window,
                iters: self.flow_iters,
                damping: self.flow_damping,
            },
            conf_t: self.conf_t,
        }
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            views: self.views,
            width: self.width,
            height: self.height,
            master_seed: self.master_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_dump() {
        let cfg = RunConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, cfg.dump()).unwrap();
        let parsed = RunConfig::from_sources(Some(&path), &[]).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_sources(None, &["stage1_itersx=5".into()]);
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "master_seed=7\nviews=8\n").unwrap();
        let cfg =
            RunConfig::from_sources(Some(&path), &["views=12".into()]).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.views, 12);
    }

    #[test]
    fn bad_value_is_a_parameter_error() {
        let err = RunConfig::from_sources(None, &["views=notanumber".into()]);
        assert!(matches!(err, Err(Error::Parameter(_))));
    }
}
