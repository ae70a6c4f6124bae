//! Training loop: sample designs, evaluate the physics loss, take an Adam step.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ChipStack, Component, PowerSpec, DEFAULT_TILE_UNIT_POWER};
use crate::error::{Error, Result};
use crate::field::TemperatureField;
use crate::io::atomic_write;
use crate::nn::{AdamConfig, AdamState};
use crate::operator::{Encoding, ModelSpec, OperatorModel};

use super::physics::{LossWeights, PhysicsProblem};
use super::sampling::{sample_floorplan, sample_grf, GrfSampler};

pub const LOSS_CSV_HEADER: &str = "iter,L,L_r,L_b,lr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// Surface power maps from a squared-exponential GRF on `tiles × tiles`.
    Grf {
        tiles: usize,
        #[serde(default = "default_length_scale")]
        length_scale: f64,
        #[serde(default = "default_unit_power")]
        unit_power: f64,
    },
    /// Random placements of fixed components on a tile grid.
    Floorplan {
        grid: [usize; 2],
        layer: usize,
        components: Vec<Component>,
    },
}

fn default_length_scale() -> f64 {
    0.3
}
fn default_unit_power() -> f64 {
    DEFAULT_TILE_UNIT_POWER
}

/// Ready-to-draw design generator.
#[derive(Debug)]
pub enum DesignSampler {
    Grf {
        grf: GrfSampler,
        unit_power: f64,
    },
    Floorplan {
        grid: [usize; 2],
        layer: usize,
        components: Vec<Component>,
    },
}

impl DesignSampler {
    pub fn new(spec: &SamplerSpec) -> Result<Self> {
        Ok(match spec {
            SamplerSpec::Grf {
                tiles,
                length_scale,
                unit_power,
            } => DesignSampler::Grf {
                grf: GrfSampler::new(*tiles, *length_scale)?,
                unit_power: *unit_power,
            },
            SamplerSpec::Floorplan {
                grid,
                layer,
                components,
            } => {
                if components.is_empty() {
                    return Err(Error::Config("floorplan sampler needs components".into()));
                }
                DesignSampler::Floorplan {
                    grid: *grid,
                    layer: *layer,
                    components: components.clone(),
                }
            }
        })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<PowerSpec> {
        Ok(match self {
            DesignSampler::Grf { grf, unit_power } => {
                PowerSpec::SurfaceTiles(sample_grf(grf, *unit_power, rng)?)
            }
            DesignSampler::Floorplan {
                grid,
                layer,
                components,
            } => PowerSpec::Floorplan(sample_floorplan(components, grid[0], grid[1], *layer, rng)?),
        })
    }

    /// Areal density of the hottest tile a single design element can
    /// produce; used as the model's encoding scale.
    pub fn power_scale(&self, stack: &ChipStack) -> f64 {
        match self {
            DesignSampler::Grf { grf, unit_power } => {
                let t = grf.tiles() as f64;
                unit_power / (stack.extent_x / t * stack.extent_y / t)
            }
            DesignSampler::Floorplan {
                grid, components, ..
            } => {
                let tile_area = stack.extent_x / grid[0] as f64 * stack.extent_y / grid[1] as f64;
                let max = components
                    .iter()
                    .map(|c| c.power / (c.width * c.height) as f64)
                    .fold(0.0, f64::max);
                max / tile_area
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub weights: LossWeights,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint every this many iterations; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_batch() -> usize {
    8
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.weights.residual > 0.0 && self.weights.boundary > 0.0) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Settings that must agree between a checkpoint and a resumed run.
    fn replay_key(&self) -> Self {
        Self {
            iterations: 0,
            checkpoint_every: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    pub loss: f64,
    pub residual: f64,
    pub boundary: f64,
    /// Learning rate used by this iteration's step.
    pub lr: f64,
}

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.iteration, self.loss, self.residual, self.boundary, self.lr
        )
    }
}

/// Designs of iteration `iteration` (1-based): a function of the seed and
/// the iteration only, so resumed runs replay the same sequence.
pub fn iteration_designs(
    sampler: &DesignSampler,
    seed: u64,
    iteration: usize,
    count: usize,
) -> Result<Vec<PowerSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    (0..count).map(|_| sampler.sample(&mut rng)).collect()
}

#[derive(Debug)]
pub struct Trainer {
    pub model: OperatorModel,
    problem: PhysicsProblem,
    config: TrainConfig,
    sampler: DesignSampler,
    adam: AdamState,
    iteration: usize,
}

impl Trainer {
    /// Fresh model initialised from the seed.
    pub fn init(spec: ModelSpec, problem: PhysicsProblem, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sampler = DesignSampler::new(&config.sampler)?;
        let [nx, ny, _] = problem.mesh().dims();
        let encoding = Encoding {
            sensors: [nx, ny],
            power_scale: sampler.power_scale(problem.stack()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = OperatorModel::new(spec, problem.stack().clone(), encoding, &mut rng)?;
        Self::with_model(model, problem, config)
    }

    pub fn with_model(
        model: OperatorModel,
        problem: PhysicsProblem,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        problem.check_model(&model)?;
        let sampler = DesignSampler::new(&config.sampler)?;
        // Fail before training when sampled designs do not fit the mesh.
        problem.prepare(
            &model,
            &[sampler.sample(&mut ChaCha8Rng::seed_from_u64(0))?],
        )?;
        let adam = AdamState::new(config.adam, model.param_count());
        Ok(Self {
            model,
            problem,
            config,
            sampler,
            adam,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn problem(&self) -> &PhysicsProblem {
        &self.problem
    }

    pub fn sampler(&self) -> &DesignSampler {
        &self.sampler
    }

    pub fn step(&mut self) -> Result<LossRecord> {
        let it = self.iteration + 1;
        let designs = iteration_designs(&self.sampler, self.config.seed, it, self.config.batch)?;
        let batch = self.problem.prepare(&self.model, &designs)?;
        let (loss, grad) = self
            .problem
            .loss(&self.model, &batch, self.config.weights)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("iteration {it}: {msg}")),
                other => other,
            })?;
        let lr = self.adam.current_lr();
        self.adam.step(&mut self.model.param_slices_mut(), &grad)?;
        self.iteration = it;
        Ok(LossRecord {
            iteration: it,
            loss: loss.total,
            residual: loss.residual,
            boundary: loss.boundary,
            lr,
        })
    }

    /// Runs until `config.iterations`, streaming loss rows to `loss_csv` (no
    /// header) and writing checkpoints to `checkpoint` at the configured
    /// cadence and at the end. On a numeric failure the last good state is
    /// checkpointed before the error is returned.
    pub fn run<W: Write>(
        &mut self,
        mut loss_csv: Option<&mut W>,
        checkpoint: Option<&Path>,
    ) -> Result<Vec<LossRecord>> {
        let mut history = Vec::new();
        while self.iteration < self.config.iterations {
            let rec = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    if let Some(path) = checkpoint {
                        self.save_to(path)?;
                    }
                    return Err(e);
                }
            };
            if let Some(w) = loss_csv.as_deref_mut() {
                writeln!(w, "{}", rec.csv_row())?;
            }
            history.push(rec);
            if let Some(path) = checkpoint {
                let every = self.config.checkpoint_every;
                if every > 0
                    && self.iteration % every == 0
                    && self.iteration < self.config.iterations
                {
                    self.save_to(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save_to(path)?;
        }
        Ok(history)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let meta = serde_json::json!({
            "iteration": self.iteration,
            "adam_step": self.adam.step,
            "mesh": self.problem.mesh().dims(),
            "train": self.config,
        });
        self.model.save(
            w,
            meta,
            &[
                ("adam.m".into(), &self.adam.m),
                ("adam.v".into(), &self.adam.v),
            ],
        )
    }

    pub fn save_to(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| self.save(w))
    }

    /// Continues a checkpointed run. `config` may extend `iterations` but
    /// must otherwise match the checkpointed settings.
    pub fn resume<R: BufRead>(r: R, problem: PhysicsProblem, config: TrainConfig) -> Result<Self> {
        let (model, file) = OperatorModel::load(r)?;
        let extra = &file.meta["extra"];
        let saved: TrainConfig = serde_json::from_value(extra["train"].clone())
            .map_err(|e| Error::Format(format!("checkpoint lacks training state: {e}")))?;
        if saved.replay_key() != config.replay_key() {
            return Err(Error::Config(
                "training settings differ from the checkpointed run".into(),
            ));
        }
        let iteration = extra["iteration"]
            .as_u64()
            .ok_or_else(|| Error::Format("checkpoint lacks iteration".into()))?
            as usize;
        let step = extra["adam_step"]
            .as_u64()
            .ok_or_else(|| Error::Format("checkpoint lacks optimiser step".into()))?;
        let mut trainer = Self::with_model(model, problem, config)?;
        let (m, v) = (file.get("adam.m")?, file.get("adam.v")?);
        if m.len() != trainer.adam.m.len() || v.len() != trainer.adam.v.len() {
            return Err(Error::Format(
                "optimiser state does not match the model".into(),
            ));
        }
        trainer.adam.m.copy_from_slice(m);
        trainer.adam.v.copy_from_slice(v);
        trainer.adam.step = step;
        trainer.iteration = iteration;
        Ok(trainer)
    }

    pub fn into_model(self) -> OperatorModel {
        self.model
    }
}

/// Mean absolute percentage error over all nodes.
pub fn mape(pred: &TemperatureField, reference: &TemperatureField) -> Result<f64> {
    if pred.dims() != reference.dims() {
        return Err(Error::Dimension(format!(
            "fields {:?} and {:?} differ in shape",
            pred.dims(),
            reference.dims()
        )));
    }
    if let Some(bad) = reference.values().iter().find(|v| **v <= 0.0) {
        return Err(Error::Domain(format!(
            "reference temperature {bad} is not positive"
        )));
    }
    let n = pred.values().len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(reference.values())
        .map(|(p, r)| (p - r).abs() / r)
        .sum::<f64>()
        / n
        * 100.0)
}
