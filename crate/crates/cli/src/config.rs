use std::path::{Path, PathBuf};

use ridgewalk::bifurcation::GamePointSettings;
use ridgewalk::games::{
    bilinear, double_well, ipd, matching_pennies_in, mixed_game, quadratic_bowl, random_subspace, small_ipd_with,
    IpdConfig, ParamSpace, SmallIpd, DEFAULT_MIX_TAU,
};
use ridgewalk::grr::GrrConfig;
use ridgewalk::lyapunov::{Grid2D, HeatmapMode};
use ridgewalk::optimizers::{lola, sim_sgd, LolaVariant};
use ridgewalk::{Game, StepOperator};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One JSON file per run. Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub game: GameSpec,
    /// Optimizer for trajectories, exponents and branch optimization.
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerSpec,
    /// Optimizer whose exponents drive starting-point tuning; `optimizer` when absent.
    #[serde(default)]
    pub tune_optimizer: Option<OptimizerSpec>,
    #[serde(default)]
    pub lyapunov: LyapunovSpec,
    #[serde(default)]
    pub grr: GrrConfig,
    #[serde(default)]
    pub grid: Option<Grid2D>,
    /// Point for `spectrum` and `classify`, in parameter coordinates.
    #[serde(default)]
    pub point: Option<Vec<f64>>,
    #[serde(default)]
    pub axis: Option<Vec<f64>>,
    #[serde(default)]
    pub classify: GamePointSettings,
    #[serde(default)]
    pub phase: PhaseSpec,
    #[serde(default)]
    pub ipd_table: IpdTableSpec,
    pub output_dir: PathBuf,
}

fn default_optimizer() -> OptimizerSpec {
    OptimizerSpec::SimSgd { alpha: 0.1 }
}

fn default_tau() -> f64 {
    DEFAULT_MIX_TAU
}

fn default_defect_coop() -> f64 {
    SmallIpd::default().defect_coop
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSpec {
    MatchingPennies {
        #[serde(default)]
        space: ParamSpace,
    },
    Ipd {
        #[serde(default)]
        config: IpdConfig,
    },
    SmallIpd {
        #[serde(default)]
        config: IpdConfig,
        #[serde(default = "default_defect_coop")]
        defect_coop: f64,
        #[serde(default)]
        space: ParamSpace,
    },
    MixedGame {
        #[serde(default = "default_tau")]
        tau: f64,
    },
    RandomSubspace {
        base: Box<GameSpec>,
        seed: u64,
    },
    QuadraticBowl {
        curvatures: Vec<f64>,
        split: usize,
    },
    DoubleWell,
    Bilinear {
        m: Vec<Vec<f64>>,
    },
}

impl GameSpec {
    pub fn build(&self) -> CliResult<Game> {
        Ok(match self {
            GameSpec::MatchingPennies { space } => matching_pennies_in(*space),
            GameSpec::Ipd { config } => ipd(*config)?,
            GameSpec::SmallIpd { config, defect_coop, space } => {
                config.validate()?;
                if !(0.0..=1.0).contains(defect_coop) {
                    return Err(CliError::Config(format!("defect_coop {defect_coop} outside [0, 1]")));
                }
                small_ipd_with(SmallIpd { config: *config, defect_coop: *defect_coop, space: *space })
            }
            GameSpec::MixedGame { tau } => mixed_game(*tau)?,
            GameSpec::RandomSubspace { base, seed } => random_subspace(&base.build()?, *seed),
            GameSpec::QuadraticBowl { curvatures, split } => {
                if curvatures.is_empty() || *split > curvatures.len() {
                    return Err(CliError::Config(format!(
                        "quadratic bowl needs a split within 0..={} and at least one curvature",
                        curvatures.len()
                    )));
                }
                if curvatures.iter().any(|c| !c.is_finite()) {
                    return Err(CliError::Config("curvatures must be finite".into()));
                }
                quadratic_bowl(curvatures, *split)
            }
            GameSpec::DoubleWell => double_well(),
            GameSpec::Bilinear { m } => {
                let cols = m.first().map_or(0, Vec::len);
                if cols == 0 || m.iter().any(|r| r.len() != cols || r.iter().any(|v| !v.is_finite())) {
                    return Err(CliError::Config("bilinear matrix must be non-empty, rectangular and finite".into()));
                }
                bilinear(m.clone())
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    SimSgd {
        alpha: f64,
    },
    Lola {
        alpha: f64,
        eta: f64,
        #[serde(default)]
        variant: LolaVariant,
    },
}

impl OptimizerSpec {
    pub fn build(&self, game: &Game) -> CliResult<Box<dyn StepOperator>> {
        match *self {
            OptimizerSpec::SimSgd { alpha } => {
                check_alpha(alpha)?;
                Ok(Box::new(sim_sgd(game, alpha)))
            }
            OptimizerSpec::Lola { alpha, eta, variant } => {
                check_alpha(alpha)?;
                if !(eta.is_finite() && eta >= 0.0) {
                    return Err(CliError::Config(format!("eta must be non-negative, got {eta}")));
                }
                Ok(Box::new(lola(game, alpha, eta).with_variant(variant)))
            }
        }
    }
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("alpha must be positive, got {alpha}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSpec {
    pub k: usize,
    pub mode: HeatmapMode,
}

impl Default for LyapunovSpec {
    fn default() -> Self {
        Self { k: 10, mode: HeatmapMode::Max }
    }
}

/// Phase portraits run both optimizers from every grid start. The grid is
/// given in strategy coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSpec {
    pub steps: usize,
    pub sim_sgd_alpha: f64,
    pub lola_alpha: f64,
    pub lola_eta: f64,
    pub divergence_bound: f64,
}

impl Default for PhaseSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            sim_sgd_alpha: 0.1,
            lola_alpha: 0.1,
            lola_eta: 0.5,
            divergence_bound: 1e6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpdTableSpec {
    pub baseline_inits: usize,
    pub baseline_steps: usize,
    pub sim_sgd_alpha: f64,
    pub lola_alpha: f64,
    pub lola_eta: f64,
}

impl Default for IpdTableSpec {
    fn default() -> Self {
        Self {
            baseline_inits: 20,
            baseline_steps: 2000,
            sim_sgd_alpha: 1.0,
            lola_alpha: 1.0,
            lola_eta: 10.0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without running a command.
    pub fn validate(&self) -> CliResult<Game> {
        let game = self.game.build()?;
        self.optimizer.build(&game)?;
        if let Some(t) = &self.tune_optimizer {
            t.build(&game)?;
        }
        self.grr.validate()?;
        if let Some(init) = &self.grr.init {
            game.joint_params(init.clone())?;
        }
        for (name, v) in [("point", &self.point), ("axis", &self.axis)] {
            if let Some(v) = v {
                if v.len() != game.dim() {
                    return Err(CliError::Config(format!(
                        "{name} has length {}, game {} has {} parameters",
                        v.len(),
                        game.name(),
                        game.dim()
                    )));
                }
            }
        }
        if let Some(g) = &self.grid {
            if g.lo.iter().chain(&g.hi).any(|v| !v.is_finite()) {
                return Err(CliError::Config("grid bounds must be finite".into()));
            }
        }
        if !(self.classify.tol > 0.0 && self.classify.recenter_radius >= 0.0) {
            return Err(CliError::Config("classify tolerances must be positive".into()));
        }
        let p = &self.phase;
        for (name, v) in [("sim_sgd_alpha", p.sim_sgd_alpha), ("lola_alpha", p.lola_alpha)] {
            check_alpha(v).map_err(|_| CliError::Config(format!("phase.{name} must be positive")))?;
        }
        if !(p.lola_eta >= 0.0 && p.divergence_bound > 0.0) {
            return Err(CliError::Config("phase.lola_eta and phase.divergence_bound must be non-negative".into()));
        }
        let t = &self.ipd_table;
        check_alpha(t.sim_sgd_alpha)?;
        check_alpha(t.lola_alpha)?;
        if !(t.lola_eta.is_finite() && t.lola_eta >= 0.0) {
            return Err(CliError::Config("ipd_table.lola_eta must be non-negative".into()));
        }
        Ok(game)
    }
}

/// Thread count from the `RIDGEWALK_THREADS` value.
pub fn parse_threads(value: &str) -> CliResult<usize> {
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(CliError::Config(format!(
            "RIDGEWALK_THREADS must be a positive integer, got {value:?}"
        ))),
    }
}
