//! Experiment configuration files.
//!
//! A config is a JSON object. Only `experiment` is required; every other
//! key falls back to the defaults of that experiment kind, and unknown keys
//! are rejected. Dynamics and pareto default to a desk-scale world
//! (m=40, n=160, K=20, k=10, d=8) instead of the full review-data scale.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{DynamicsConfig, InitMode, MethodKind, SplitMode, Target};
use crate::error::{Error, Result};
use crate::learning::{TrainConfig, LAMBDA_BRACKET};

use super::verify::Level;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Overlap,
    Dispersion,
    CostTime,
    Dynamics,
    Pareto,
    Verify,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Overlap => "overlap",
            ExperimentKind::Dispersion => "dispersion",
            ExperimentKind::CostTime => "cost-time",
            ExperimentKind::Dynamics => "dynamics",
            ExperimentKind::Pareto => "pareto",
            ExperimentKind::Verify => "verify",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub sigma_x: f64,
    pub sigma_u_star: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphConfig {
    /// Every user lists `list_size` uniformly drawn items.
    Uniform { list_size: usize },
    /// `blocks` disjoint groups, then `swaps` degree-preserving swaps
    /// (overridden per cell by the `swaps` grid of an overlap sweep).
    BlockShuffled { list_size: usize, blocks: usize, swaps: usize },
}

/// NDCG target of a tuned method: a number, or `"base"` for the NDCG of
/// the unregularized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Ndcg(f64),
    Named(String),
}

impl TargetSpec {
    pub fn to_target(&self) -> Result<Target> {
        match self {
            TargetSpec::Ndcg(b) => Ok(Target::Ndcg(*b)),
            TargetSpec::Named(s) if s == "base" => Ok(Target::Base),
            TargetSpec::Named(s) => Err(config_err("grids.targets", format!("{s:?} is neither a number nor \"base\""))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub swaps: Vec<usize>,
    pub sigma_u_star: Vec<f64>,
    pub targets: Vec<TargetSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub world: WorldConfig,
    pub graph: GraphConfig,
    pub train: TrainConfig,
    pub grids: Grids,
    pub methods: Vec<MethodKind>,
    pub theta_mmr: f64,
    pub rounds: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub split: SplitMode,
    pub init: InitMode,
    pub tolerance: f64,
    /// Interval searched when tuning lambda to an NDCG target.
    pub lambda_bracket: [f64; 2],
    pub max_trainings: usize,
    pub verify_level: Level,
    pub out_dir: String,
}

fn config_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    /// Defaults of one experiment kind.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let synth_world = WorldConfig {
            m: 50,
            n: 200,
            d: 2,
            sigma_x: 1.0,
            sigma_u_star: 0.1,
        };
        let desk_world = WorldConfig {
            m: 40,
            n: 160,
            d: 8,
            sigma_x: 1.0,
            sigma_u_star: 0.1,
        };
        let train = TrainConfig::default();
        let mut cfg = Self {
            experiment: kind,
            comment: None,
            world: synth_world,
            graph: GraphConfig::Uniform { list_size: 10 },
            train,
            grids: Grids {
                lambdas: vec![0.0, 0.1, 1.0],
                alphas: vec![0.0],
                swaps: vec![0],
                sigma_u_star: vec![0.1],
                targets: vec![TargetSpec::Ndcg(0.9)],
            },
            methods: vec![MethodKind::Baseline],
            theta_mmr: 0.5,
            rounds: 1,
            repetitions: 100,
            seed: 0,
            split: SplitMode::Full,
            init: InitMode::default(),
            tolerance: 0.01,
            lambda_bracket: [LAMBDA_BRACKET.0, LAMBDA_BRACKET.1],
            max_trainings: 12,
            verify_level: Level::Fast,
            out_dir: "results".into(),
        };
        match kind {
            ExperimentKind::Overlap => {
                cfg.world.m = 20;
                cfg.world.n = 80;
                cfg.graph = GraphConfig::BlockShuffled {
                    list_size: 8,
                    blocks: 10,
                    swaps: 0,
                };
                cfg.train.k = 4;
                cfg.grids.swaps = vec![0, 16, 32, 64, 128];
                cfg.repetitions = 20;
            }
            ExperimentKind::Dispersion => {
                cfg.grids.sigma_u_star = vec![0.1, 0.5, 1.0];
                cfg.grids.lambdas = vec![0.0, 0.05, 0.1, 1.0];
                cfg.repetitions = 20;
            }
            ExperimentKind::CostTime => {
                cfg.grids.alphas = vec![0.25, 0.5, 1.0, 2.0];
                cfg.grids.lambdas = vec![100.0];
                cfg.rounds = 10;
                cfg.repetitions = 10;
            }
            ExperimentKind::Dynamics | ExperimentKind::Pareto => {
                cfg.world = desk_world;
                cfg.graph = GraphConfig::Uniform { list_size: 20 };
                cfg.train.temperatures.topk = 1.0;
                cfg.grids.alphas = vec![0.1];
                cfg.rounds = 10;
                cfg.repetitions = 10;
                if kind == ExperimentKind::Dynamics {
                    cfg.methods = vec![
                        MethodKind::Baseline,
                        MethodKind::NonStrategic,
                        MethodKind::Strategic,
                        MethodKind::Hybrid { switch_round: 5 },
                        MethodKind::Mmr,
                        MethodKind::Random,
                    ];
                } else {
                    cfg.grids.lambdas = vec![0.0, 0.1, 1.0, 10.0];
                    cfg.repetitions = 3;
                }
            }
            ExperimentKind::Verify => {}
        }
        cfg
    }

    /// Named-field range checks.
    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        let check = |ok: bool, field: &str, reason: String| if ok { Ok(()) } else { Err(config_err(field, reason)) };
        check(w.m >= 1, "world.m", format!("must be at least 1, got {}", w.m))?;
        check(w.n >= 2, "world.n", format!("must be at least 2, got {}", w.n))?;
        check(w.d >= 2, "world.d", format!("must be at least 2, got {}", w.d))?;
        check(
            w.sigma_x >= 0.0 && w.sigma_x.is_finite(),
            "world.sigma_x",
            format!("must be >= 0, got {}", w.sigma_x),
        )?;
        check(
            w.sigma_u_star >= 0.0 && w.sigma_u_star.is_finite(),
            "world.sigma_u_star",
            format!("must be >= 0, got {}", w.sigma_u_star),
        )?;
        let list_size = match self.graph {
            GraphConfig::Uniform { list_size } => list_size,
            GraphConfig::BlockShuffled { list_size, blocks, .. } => {
                check(
                    blocks >= 1 && w.m % blocks == 0 && w.n % blocks == 0,
                    "graph.blocks",
                    format!("{blocks} must divide m = {} and n = {}", w.m, w.n),
                )?;
                check(
                    list_size <= w.n / blocks.max(1),
                    "graph.list_size",
                    format!("{list_size} exceeds block size {}", w.n / blocks.max(1)),
                )?;
                list_size
            }
        };
        check(
            list_size >= 2 && list_size <= w.n,
            "graph.list_size",
            format!("{list_size} outside [2, {}]", w.n),
        )?;
        let t = &self.train;
        check(
            t.lambda >= 0.0 && t.lambda.is_finite(),
            "train.lambda",
            format!("must be >= 0, got {}", t.lambda),
        )?;
        check(
            t.alpha >= 0.0 && t.alpha.is_finite(),
            "train.alpha",
            format!("must be >= 0, got {}", t.alpha),
        )?;
        check(
            t.k >= 2 && t.k <= list_size,
            "train.k",
            format!("{} outside [2, list_size = {list_size}]", t.k),
        )?;
        check(
            t.learning_rate >= 0.0 && t.learning_rate.is_finite(),
            "train.learning_rate",
            format!("must be >= 0, got {}", t.learning_rate),
        )?;
        check(t.max_epochs >= 1, "train.max_epochs", "must be at least 1".into())?;
        for (name, v) in [
            ("train.temperatures.ndcg", t.temperatures.ndcg),
            ("train.temperatures.perm", t.temperatures.perm),
            ("train.temperatures.topk", t.temperatures.topk),
        ] {
            check(v > 0.0 && v.is_finite(), name, format!("must be positive, got {v}"))?;
        }
        let g = &self.grids;
        for &l in &g.lambdas {
            check(l >= 0.0 && l.is_finite(), "grids.lambdas", format!("lambda must be >= 0, got {l}"))?;
        }
        for &a in &g.alphas {
            check(a >= 0.0 && a.is_finite(), "grids.alphas", format!("alpha must be >= 0, got {a}"))?;
        }
        for &s in &g.sigma_u_star {
            check(s >= 0.0 && s.is_finite(), "grids.sigma_u_star", format!("must be >= 0, got {s}"))?;
        }
        for tg in &g.targets {
            if let Target::Ndcg(b) = tg.to_target()? {
                check((0.0..=1.0).contains(&b), "grids.targets", format!("{b} outside [0, 1]"))?;
            }
        }
        check(self.repetitions >= 1, "repetitions", "must be at least 1".into())?;
        check(self.rounds >= 1, "rounds", "must be at least 1".into())?;
        check(
            (0.0..=1.0).contains(&self.theta_mmr),
            "theta_mmr",
            format!("{} outside [0, 1]", self.theta_mmr),
        )?;
        check(self.tolerance >= 0.0, "tolerance", format!("must be >= 0, got {}", self.tolerance))?;
        let [lo, hi] = self.lambda_bracket;
        check(
            lo > 0.0 && hi > lo && hi.is_finite(),
            "lambda_bracket",
            format!("need 0 < low < high, got [{lo}, {hi}]"),
        )?;
        check(
            self.max_trainings >= 3,
            "max_trainings",
            format!("must be at least 3, got {}", self.max_trainings),
        )?;
        if let SplitMode::Subsample { visible, train } = self.split {
            check(
                visible > 0.0 && visible <= 1.0,
                "split.visible",
                format!("{visible} outside (0, 1]"),
            )?;
            check(train > 0.0 && train <= 1.0, "split.train", format!("{train} outside (0, 1]"))?;
        }
        for m in &self.methods {
            if let MethodKind::Hybrid { switch_round } = m {
                check(
                    *switch_round <= self.rounds,
                    "methods",
                    format!("hybrid@{switch_round} switches after the last round {}", self.rounds),
                )?;
            }
        }
        let nonempty = |v: usize, field: &str| check(v > 0, field, "grid is empty".into());
        match self.experiment {
            ExperimentKind::Overlap => {
                nonempty(g.swaps.len(), "grids.swaps")?;
                nonempty(g.lambdas.len(), "grids.lambdas")?;
                check(
                    matches!(self.graph, GraphConfig::BlockShuffled { .. }),
                    "graph.kind",
                    "overlap needs a block-shuffled graph".into(),
                )?;
            }
            ExperimentKind::Dispersion => {
                nonempty(g.sigma_u_star.len(), "grids.sigma_u_star")?;
                nonempty(g.lambdas.len(), "grids.lambdas")?;
            }
            ExperimentKind::CostTime => {
                nonempty(g.alphas.len(), "grids.alphas")?;
                nonempty(g.lambdas.len(), "grids.lambdas")?;
            }
            ExperimentKind::Dynamics => {
                nonempty(self.methods.len(), "methods")?;
                nonempty(g.alphas.len(), "grids.alphas")?;
                let tuned = self
                    .methods
                    .iter()
                    .any(|m| matches!(m, MethodKind::NonStrategic | MethodKind::Strategic | MethodKind::Hybrid { .. }));
                if tuned {
                    check(
                        !g.targets.is_empty() || !g.lambdas.is_empty(),
                        "grids.targets",
                        "tuned methods need targets or lambdas".into(),
                    )?;
                }
            }
            ExperimentKind::Pareto => {
                nonempty(g.lambdas.len(), "grids.lambdas")?;
                check(
                    g.alphas.len() == 1,
                    "grids.alphas",
                    format!("pareto takes exactly one alpha, got {}", g.alphas.len()),
                )?;
            }
            ExperimentKind::Verify => {}
        }
        Ok(())
    }

    /// Dynamics settings for one cell.
    pub fn dynamics(&self, alpha: f64, seed: u64) -> DynamicsConfig {
        DynamicsConfig {
            train: TrainConfig {
                alpha,
                seed,
                ..self.train.clone()
            },
            init: self.init,
            rounds: self.rounds,
            split: self.split,
            tolerance: self.tolerance,
            lambda_bracket: (self.lambda_bracket[0], self.lambda_bracket[1]),
            max_trainings: self.max_trainings,
            seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    // a different graph kind replaces the whole section
                    Some(slot) if k != "graph" && k != "split" => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a config from JSON text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        reason: format!("column {}: {e}", e.column()),
    })?;
    let obj = value.as_object().ok_or_else(|| config_err("<root>", "expected a JSON object"))?;
    let kind_value = obj.get("experiment").ok_or_else(|| config_err("experiment", "missing"))?.clone();
    let kind: ExperimentKind = serde_json::from_value(kind_value).map_err(|e| config_err("experiment", e.to_string()))?;

    let mut merged = serde_json::to_value(ExperimentConfig::defaults(kind)).expect("defaults serialize");
    merge(&mut merged, value);
    let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| {
        let msg = e.to_string();
        let field = msg.split('`').nth(1).map(str::to_string).unwrap_or_else(|| "<config>".to_string());
        config_err(field, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_verify_gets_defaults() {
        let cfg = parse_config(r#"{"experiment": "verify"}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ExperimentKind::Verify));
        assert_eq!(cfg.train.max_epochs, 200);
        assert_eq!(cfg.train.learning_rate, 0.1);
    }

    #[test]
    fn negative_lambda_names_field() {
        let err = parse_config(r#"{"experiment": "verify", "train": {"lambda": -1}}"#).unwrap_err();
        match err {
            Error::Config { field, .. } => assert!(field.contains("lambda"), "{field}"),
            e => panic!("{e:?}"),
        }
        let err = parse_config(r#"{"experiment": "dispersion", "grids": {"lambdas": [1, -1]}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "grids.lambdas"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config(r#"{"experiment": "verify", "train": {"lamda": 1}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "lamda"), "{err:?}");
        assert!(parse_config(r#"{"experiment": "verify", "colour": 1}"#).is_err());
    }

    #[test]
    fn parse_error_has_line() {
        let err = parse_config("{\n\"experiment\": \"verify\",\n oops}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn round_trip() {
        let text = r#"{"experiment": "dynamics", "grids": {"targets": [0.9, "base"]}, "methods": ["strategic", "hybrid@3"], "split": {"kind": "subsample", "visible": 0.75, "train": 0.6666666666666666}}"#;
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_json(), again.to_json());
        assert_eq!(cfg.grids.targets[1].to_target().unwrap(), Target::Base);
    }

    #[test]
    fn graph_kind_switch_replaces_section() {
        let cfg =
            parse_config(r#"{"experiment": "overlap", "graph": {"kind": "block-shuffled", "list_size": 4, "blocks": 10, "swaps": 0}}"#)
                .unwrap();
        assert_eq!(
            cfg.graph,
            GraphConfig::BlockShuffled {
                list_size: 4,
                blocks: 10,
                swaps: 0
            }
        );
        assert!(parse_config(r#"{"experiment": "overlap", "graph": {"kind": "uniform", "list_size": 8}}"#).is_err());
    }
}
