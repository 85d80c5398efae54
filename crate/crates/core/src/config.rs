//! TOML run configuration.
//!
//! A config names either a built-in preset (`model = "consensus"`) or an inline
//! `[system]`. Matrices are row-major nested arrays; discrete valuations in
//! guards and updates are tables keyed by variable name. `[run]` values
//! override the preset's suggestions.
//!
//! ```toml
//! model = "heating"
//!
//! [run]
//! epsilon = 0.6
//! horizon = 32
//! seed = 7
//!
//! [heating]
//! threshold = 70.0
//! ```

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lts::{
    AffineAction, DiscreteState, DiscreteUpdate, DiscreteVar, Guard, HalfSpace, InitialSet, Norm, Offset,
    TransitionSystem,
};
use crate::models::{self, HeatingParams, ModelPreset};
use crate::reach::SafetyQuery;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heating: Option<HeatingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetyConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// `"2"` or `"inf"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Random valid executions drawn by the oracle check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tuples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_budget: Option<usize>,
    /// Also write every tuple of every step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_history: Option<bool>,
}

/// Overrides for the heating preset's modelling choices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingSection {
    pub threshold: Option<f64>,
    pub center: Option<[f64; 3]>,
    pub radius: Option<f64>,
    pub initial_heaters: Option<[u32; 3]>,
    pub decided: Option<bool>,
    pub safe_lower: Option<f64>,
    pub safe_upper: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant_radius: Option<f64>,
    #[serde(default)]
    pub certify_invariant: bool,
    #[serde(default)]
    pub variables: Vec<VariableConfig>,
    pub initial: InitialConfig,
    pub actions: Vec<ActionConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableConfig {
    pub name: String,
    pub domain: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub discrete: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball: Option<BallConfig>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoxConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallConfig {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub name: String,
    pub matrix: Vec<Vec<f64>>,
    /// Constant offset, or the constant part of a linear one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    /// `offset += column · value(var)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offset_terms: Vec<OffsetTerm>,
    /// Read the terms' variables after the discrete update.
    #[serde(default)]
    pub offset_after_update: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offset_table: Vec<OffsetEntry>,
    #[serde(default)]
    pub guard: GuardConfig,
    /// Constant assignments.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub update: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub update_table: Vec<UpdateEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetTerm {
    pub var: String,
    pub column: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetEntry {
    pub at: Vec<u32>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateEntry {
    pub from: Vec<u32>,
    pub to: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardConfig {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub discrete: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub half_spaces: Vec<HalfSpaceConfig>,
}

/// `normal · x ≤ bound`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpaceConfig {
    pub normal: Vec<f64>,
    pub bound: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    /// Unsafe polytopes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionConfig>,
    /// Per-coordinate safe intervals; leaving one is unsafe.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub safe_box: Vec<SafeInterval>,
    #[serde(default)]
    pub from_step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub half_spaces: Vec<HalfSpaceConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeInterval {
    pub coordinate: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Fully resolved run parameters.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub preset: ModelPreset,
    pub seed: u64,
    pub samples: usize,
    pub max_tuples: usize,
    pub node_budget: usize,
    pub full_history: bool,
}

pub fn parse_norm(s: &str) -> Result<Norm> {
    match s.trim().to_ascii_lowercase().as_str() {
        "2" | "l2" => Ok(Norm::L2),
        "inf" | "linf" | "∞" => Ok(Norm::Linf),
        other => Err(Error::Config(format!("unknown norm `{other}` (use \"2\" or \"inf\")"))),
    }
}

fn norm_name(n: Norm) -> String {
    n.to_string()
}

fn dvec(v: &[f64], dim: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != dim {
        return Err(Error::Config(format!("{what}: expected {dim} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{what}: non-finite entry")));
    }
    Ok(DVector::from_column_slice(v))
}

fn matrix(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!("{what}: matrix must be {dim}×{dim}")));
    }
    Ok(DMatrix::from_row_iterator(dim, dim, rows.iter().flatten().copied()))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SystemConfig {
    pub fn build(&self) -> Result<TransitionSystem> {
        let dim = self.dimension;
        let variables: Vec<DiscreteVar> =
            self.variables.iter().map(|v| DiscreteVar::new(v.name.clone(), v.domain)).collect();
        let index = |name: &str| {
            variables
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| Error::Config(format!("unknown discrete variable `{name}`")))
        };
        let assignments = |map: &BTreeMap<String, u32>| -> Result<Vec<(usize, u32)>> {
            let mut out = map.iter().map(|(k, v)| Ok((index(k)?, *v))).collect::<Result<Vec<_>>>()?;
            out.sort_unstable();
            Ok(out)
        };

        let mut actions = Vec::with_capacity(self.actions.len());
        for a in &self.actions {
            let what = format!("action `{}`", a.name);
            let m = matrix(&a.matrix, dim, &what)?;
            let constant = match &a.offset {
                Some(b) => dvec(b, dim, &what)?,
                None => DVector::zeros(dim),
            };
            let offset = if !a.offset_table.is_empty() {
                if a.offset.is_some() || !a.offset_terms.is_empty() {
                    return Err(Error::Config(format!("{what}: offset_table excludes other offset forms")));
                }
                let mut table = BTreeMap::new();
                for e in &a.offset_table {
                    table.insert(DiscreteState::new(e.at.clone()), dvec(&e.offset, dim, &what)?);
                }
                Offset::Table(table)
            } else if a.offset_terms.is_empty() {
                Offset::Constant(constant)
            } else {
                let terms = a
                    .offset_terms
                    .iter()
                    .map(|t| Ok((index(&t.var)?, dvec(&t.column, dim, &what)?)))
                    .collect::<Result<Vec<_>>>()?;
                Offset::Linear { constant, terms, after_update: a.offset_after_update }
            };
            let update = if !a.update_table.is_empty() {
                if !a.update.is_empty() {
                    return Err(Error::Config(format!("{what}: update and update_table are exclusive")));
                }
                DiscreteUpdate::Table(
                    a.update_table
                        .iter()
                        .map(|e| (DiscreteState::new(e.from.clone()), DiscreteState::new(e.to.clone())))
                        .collect(),
                )
            } else {
                DiscreteUpdate::Assign(assignments(&a.update)?)
            };
            let half_spaces = a
                .guard
                .half_spaces
                .iter()
                .map(|h| Ok(HalfSpace::new(dvec(&h.normal, dim, &what)?, h.bound)))
                .collect::<Result<Vec<_>>>()?;
            let guard = Guard { discrete: assignments(&a.guard.discrete)?, half_spaces };
            actions.push(AffineAction { name: a.name.clone(), guard, matrix: m, offset, update });
        }

        let mut initial_discrete = vec![0; variables.len()];
        for (var, value) in assignments(&self.initial.discrete)? {
            initial_discrete[var] = value;
        }
        let initial_set = match (&self.initial.ball, &self.initial.bounds) {
            (Some(b), None) => InitialSet::Ball { center: dvec(&b.center, dim, "initial ball")?, radius: b.radius },
            (None, Some(b)) => InitialSet::Box {
                lower: dvec(&b.lower, dim, "initial box")?,
                upper: dvec(&b.upper, dim, "initial box")?,
            },
            _ => return Err(Error::Config("initial set needs exactly one of `ball` or `box`".into())),
        };
        let norm = self.norm.as_deref().map(parse_norm).transpose()?.unwrap_or_default();
        let system = TransitionSystem::new(
            dim,
            variables,
            actions,
            DiscreteState::new(initial_discrete),
            initial_set,
            norm,
        )?;
        match self.invariant_radius {
            Some(r) => system.with_invariant_radius(r, self.certify_invariant),
            None => Ok(system),
        }
    }

    pub fn from_system(name: Option<String>, system: &TransitionSystem) -> Self {
        let var_name = |i: usize| system.variables[i].name.clone();
        let named = |list: &[(usize, u32)]| list.iter().map(|&(i, v)| (var_name(i), v)).collect::<BTreeMap<_, _>>();
        let actions = system
            .actions
            .iter()
            .map(|a| {
                let (offset, offset_terms, offset_after_update, offset_table) = match &a.offset {
                    Offset::Constant(b) => (Some(b.as_slice().to_vec()), vec![], false, vec![]),
                    Offset::Linear { constant, terms, after_update } => (
                        Some(constant.as_slice().to_vec()),
                        terms
                            .iter()
                            .map(|(i, c)| OffsetTerm { var: var_name(*i), column: c.as_slice().to_vec() })
                            .collect(),
                        *after_update,
                        vec![],
                    ),
                    Offset::Table(t) => (
                        None,
                        vec![],
                        false,
                        t.iter()
                            .map(|(l, b)| OffsetEntry { at: l.values().to_vec(), offset: b.as_slice().to_vec() })
                            .collect(),
                    ),
                };
                let (update, update_table) = match &a.update {
                    DiscreteUpdate::Assign(list) => (named(list), vec![]),
                    DiscreteUpdate::Table(t) => (
                        BTreeMap::new(),
                        t.iter()
                            .map(|(f, to)| UpdateEntry { from: f.values().to_vec(), to: to.values().to_vec() })
                            .collect(),
                    ),
                };
                ActionConfig {
                    name: a.name.clone(),
                    matrix: rows_of(&a.matrix),
                    offset,
                    offset_terms,
                    offset_after_update,
                    offset_table,
                    guard: GuardConfig {
                        discrete: named(&a.guard.discrete),
                        half_spaces: a
                            .guard
                            .half_spaces
                            .iter()
                            .map(|h| HalfSpaceConfig { normal: h.normal.as_slice().to_vec(), bound: h.bound })
                            .collect(),
                    },
                    update,
                    update_table,
                }
            })
            .collect();
        let (ball, bounds) = match &system.initial_set {
            InitialSet::Ball { center, radius } => {
                (Some(BallConfig { center: center.as_slice().to_vec(), radius: *radius }), None)
            }
            InitialSet::Box { lower, upper } => (
                None,
                Some(BoxConfig { lower: lower.as_slice().to_vec(), upper: upper.as_slice().to_vec() }),
            ),
        };
        Self {
            name,
            dimension: system.dimension,
            norm: Some(norm_name(system.norm)),
            invariant_radius: system.invariant_radius,
            certify_invariant: system.certify_invariant,
            variables: system
                .variables
                .iter()
                .map(|v| VariableConfig { name: v.name.clone(), domain: v.domain })
                .collect(),
            initial: InitialConfig {
                discrete: system
                    .initial_discrete
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (var_name(i), *v))
                    .collect(),
                ball,
                bounds,
            },
            actions,
        }
    }
}

impl SafetyConfig {
    pub fn build(&self, dim: usize) -> Result<SafetyQuery> {
        let mut regions = Vec::new();
        for r in &self.regions {
            regions.push(
                r.half_spaces
                    .iter()
                    .map(|h| Ok(HalfSpace::new(dvec(&h.normal, dim, "unsafe region")?, h.bound)))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let intervals: Vec<_> = self.safe_box.iter().map(|s| (s.coordinate, s.lower, s.upper)).collect();
        if let Some(bad) = intervals.iter().find(|(c, lo, hi)| *c >= dim || lo > hi) {
            return Err(Error::Config(format!("invalid safe interval for coordinate {}", bad.0)));
        }
        regions.extend(SafetyQuery::outside_box(dim, &intervals).regions);
        Ok(SafetyQuery { regions, from_step: self.from_step, to_step: self.to_step })
    }

    pub fn from_query(q: &SafetyQuery) -> Self {
        Self {
            regions: q
                .regions
                .iter()
                .map(|r| RegionConfig {
                    half_spaces: r
                        .iter()
                        .map(|h| HalfSpaceConfig { normal: h.normal.as_slice().to_vec(), bound: h.bound })
                        .collect(),
                })
                .collect(),
            safe_box: vec![],
            from_step: q.from_step,
            to_step: q.to_step,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn for_preset(name: &str) -> Self {
        Self { model: Some(name.to_string()), ..Self::default() }
    }

    /// Inline copy of a preset with its suggested parameters.
    pub fn from_preset(p: &ModelPreset) -> Self {
        Self {
            model: None,
            run: RunSection {
                delta0: Some(p.delta0),
                epsilon: Some(p.epsilon),
                horizon: Some(p.horizon),
                ..RunSection::default()
            },
            heating: None,
            system: Some(SystemConfig::from_system(Some(p.name.clone()), &p.system)),
            safety: p.safety.as_ref().map(SafetyConfig::from_query),
        }
    }

    pub fn resolve(&self) -> Result<ResolvedRun> {
        let mut preset = match (&self.model, &self.system) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `model` or `[system]`, not both".into())),
            (None, None) => return Err(Error::Config("no model: set `model` or `[system]`".into())),
            (Some(name), None) => {
                if let Some(h) = &self.heating {
                    if name != "heating" {
                        return Err(Error::Config("`[heating]` applies only to the heating model".into()));
                    }
                    let d = HeatingParams::default();
                    let params = HeatingParams {
                        threshold: h.threshold.unwrap_or(d.threshold),
                        center: h.center.unwrap_or(d.center),
                        radius: h.radius.unwrap_or(d.radius),
                        initial_heaters: h.initial_heaters.unwrap_or(d.initial_heaters),
                        decided: h.decided.unwrap_or(d.decided),
                        safe_range: (h.safe_lower.unwrap_or(d.safe_range.0), h.safe_upper.unwrap_or(d.safe_range.1)),
                    };
                    models::build_heating_with(&params)?
                } else {
                    models::preset(name)?
                }
            }
            (None, Some(sys)) => {
                let missing = |what: &str| Error::Config(format!("inline systems need `run.{what}`"));
                ModelPreset {
                    name: sys.name.clone().unwrap_or_else(|| "custom".into()),
                    system: sys.build()?,
                    epsilon: self.run.epsilon.ok_or_else(|| missing("epsilon"))?,
                    delta0: self.run.delta0.ok_or_else(|| missing("delta0"))?,
                    horizon: self.run.horizon.ok_or_else(|| missing("horizon"))?,
                    safety: None,
                    assumptions: vec![],
                }
            }
        };
        if let Some(v) = self.run.delta0 {
            preset.delta0 = v;
        }
        if let Some(v) = self.run.epsilon {
            preset.epsilon = v;
        }
        if let Some(v) = self.run.horizon {
            preset.horizon = v;
        }
        if let Some(n) = &self.run.norm {
            preset.system.norm = parse_norm(n)?;
        }
        if let Some(s) = &self.safety {
            preset.safety = Some(s.build(preset.system.dimension)?);
        }
        if !(preset.delta0 > 0.0) || !preset.delta0.is_finite() {
            return Err(Error::Config(format!("delta0 must be positive and finite, got {}", preset.delta0)));
        }
        if !(preset.epsilon >= 0.0) || !preset.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be finite and non-negative, got {}", preset.epsilon)));
        }
        Ok(ResolvedRun {
            preset,
            seed: self.run.seed.unwrap_or(0),
            samples: self.run.samples.unwrap_or(100),
            max_tuples: self.run.max_tuples.unwrap_or(1_000_000),
            node_budget: self.run.node_budget.unwrap_or(crate::oracle::DEFAULT_NODE_BUDGET),
            full_history: self.run.full_history.unwrap_or(false),
        })
    }
}
