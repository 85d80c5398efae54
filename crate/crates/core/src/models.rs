//! Benchmark systems: iterative consensus, vehicle platoon, building heating.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lts::{
    AffineAction, DiscreteState, DiscreteUpdate, DiscreteVar, Guard, HalfSpace, InitialSet, Norm, Offset,
    TransitionSystem,
};
use crate::reach::SafetyQuery;

/// A system together with suggested run parameters.
#[derive(Clone, Debug)]
pub struct ModelPreset {
    pub name: String,
    pub system: TransitionSystem,
    pub epsilon: f64,
    pub delta0: f64,
    pub horizon: usize,
    pub safety: Option<SafetyQuery>,
    /// Modelling choices not fixed by the benchmark descriptions.
    pub assumptions: Vec<String>,
}

pub const PRESET_NAMES: [&str; 7] =
    ["consensus", "heating", "platoon2", "platoon2-60", "platoon2-40", "platoon2-25", "platoon4"];

pub fn preset(name: &str) -> Result<ModelPreset> {
    match name {
        "consensus" => Ok(build_consensus_default()),
        "heating" => Ok(build_heating_default()),
        "platoon2" => build_platoon_scenario("platoon2-60"),
        other if other.starts_with("platoon") => build_platoon_scenario(other),
        other => Err(Error::Config(format!("unknown model preset `{other}` (known: {})", PRESET_NAMES.join(", ")))),
    }
}

/// One preset per distinct benchmark configuration.
pub fn all_presets() -> Vec<ModelPreset> {
    let mut out = vec![build_consensus_default(), build_heating_default()];
    for name in ["platoon2-60", "platoon2-40", "platoon2-25", "platoon4"] {
        out.push(build_platoon_scenario(name).expect("built-in scenario"));
    }
    out
}

fn mat3(rows: [[f64; 3]; 3]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(3, 3, rows.into_iter().flatten())
}

pub fn consensus_matrices() -> Vec<DMatrix<f64>> {
    vec![
        mat3([[0.2, -0.2, -0.3], [-0.2, 0.2, -0.1], [-0.3, -0.1, 0.3]]),
        mat3([[0.2, 0.3, 0.2], [0.3, -0.2, 0.3], [0.2, 0.3, 0.0]]),
        mat3([[-0.1, 0.0, 0.4], [0.0, 0.4, -0.2], [0.4, -0.2, -0.1]]),
    ]
}

/// Consensus over `matrices.len()` agents: `a_i` fires once per round (flag `d_i`),
/// then `abot` closes the round and clears every flag.
pub fn build_consensus(matrices: Vec<DMatrix<f64>>, center: DVector<f64>, radius: f64) -> Result<TransitionSystem> {
    let n_agents = matrices.len();
    if n_agents == 0 {
        return Err(Error::Config("consensus needs at least one agent".into()));
    }
    let dim = center.len();
    let variables: Vec<_> = (0..n_agents).map(|i| DiscreteVar::boolean(format!("d{i}"))).collect();
    let mut actions: Vec<_> = matrices
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            AffineAction::new(format!("a{i}"), m)
                .with_guard(Guard { discrete: vec![(i, 0)], half_spaces: vec![] })
                .with_update(DiscreteUpdate::Assign(vec![(i, 1)]))
        })
        .collect();
    actions.push(
        AffineAction::new("abot", DMatrix::identity(dim, dim))
            .with_guard(Guard { discrete: (0..n_agents).map(|i| (i, 1)).collect(), half_spaces: vec![] })
            .with_update(DiscreteUpdate::Assign((0..n_agents).map(|i| (i, 0)).collect())),
    );
    TransitionSystem::new(
        dim,
        variables,
        actions,
        DiscreteState::new(vec![0; n_agents]),
        InitialSet::Ball { center, radius },
        Norm::L2,
    )
}

pub fn build_consensus_default() -> ModelPreset {
    let system = build_consensus(consensus_matrices(), DVector::from_column_slice(&[2.5, 0.5, -3.0]), 0.5)
        .and_then(|s| s.with_invariant_radius(4.0 * 3f64.sqrt(), true))
        .expect("consensus preset is well formed");
    let dim = system.dimension;
    let horizon = 12;
    let bounds: Vec<_> = (0..dim).map(|i| (i, -0.4, 0.4)).collect();
    ModelPreset {
        name: "consensus".into(),
        system,
        epsilon: 0.1,
        delta0: 0.5,
        horizon,
        safety: Some(SafetyQuery::outside_box(dim, &bounds).between(horizon, Some(horizon))),
        assumptions: vec!["every coordinate must lie in [-0.4, 0.4] after the third round".into()],
    }
}

/// Parameters of the building heating model.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatingParams {
    /// Heater turns on when the room is at or below this temperature, off when at or above.
    pub threshold: f64,
    pub center: [f64; 3],
    pub radius: f64,
    pub initial_heaters: [u32; 3],
    /// Start with every decision taken, so each round opens with `flow`.
    pub decided: bool,
    pub safe_range: (f64, f64),
}

impl Default for HeatingParams {
    fn default() -> Self {
        Self {
            threshold: 70.0,
            center: [70.0; 3],
            radius: 2.0,
            initial_heaters: [1, 0, 1],
            decided: true,
            safe_range: (60.0, 79.0),
        }
    }
}

pub fn heating_matrices() -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let wh = mat3([[0.96, 0.01, 0.01], [0.02, 0.97, 0.01], [0.0, 0.01, 0.97]]);
    let bh = DVector::from_column_slice(&[1.2, 0.0, 1.2]);
    let ch = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.4, 0.0, 0.4]));
    let wt = mat3([[0.18, 0.11, 0.14], [0.18, 0.25, 0.17], [0.09, 0.13, 0.28]]);
    let bt = DVector::from_column_slice(&[34.2, 24.0, 30.0]);
    let ct = DMatrix::from_diagonal(&DVector::from_column_slice(&[11.4, 8.0, 10.0]));
    (wh, bh, ch, wt, bt, ct)
}

/// Three rooms. Discrete variables `d0..d2` (decision taken) then `m0..m2` (heater on).
///
/// The decision guard reads the temperature directly; the measured copy is
/// always equal to the temperature at decision time, so it is not stored.
pub fn build_heating(params: &HeatingParams) -> Result<TransitionSystem> {
    const ROOMS: usize = 3;
    let (wh, bh, ch, wt, bt, ct) = heating_matrices();
    let mut variables: Vec<_> = (0..ROOMS).map(|i| DiscreteVar::boolean(format!("d{i}"))).collect();
    variables.extend((0..ROOMS).map(|i| DiscreteVar::boolean(format!("m{i}"))));
    let heater_terms = |c: &DMatrix<f64>| (0..ROOMS).map(|j| (ROOMS + j, c.column(j).into_owned())).collect::<Vec<_>>();

    let mut actions = Vec::new();
    for i in 0..ROOMS {
        for on in [true, false] {
            let mut normal = DVector::zeros(ROOMS);
            normal[i] = if on { 1.0 } else { -1.0 };
            let bound = if on { params.threshold } else { -params.threshold };
            actions.push(
                AffineAction::new(format!("{}{i}", if on { "on" } else { "off" }), wh.clone())
                    .with_guard(Guard { discrete: vec![(i, 0)], half_spaces: vec![HalfSpace::new(normal, bound)] })
                    .with_offset(Offset::Linear { constant: bh.clone(), terms: heater_terms(&ch), after_update: true })
                    .with_update(DiscreteUpdate::Assign(vec![(i, 1), (ROOMS + i, u32::from(on))])),
            );
        }
    }
    actions.push(
        AffineAction::new("flow", wt)
            .with_guard(Guard { discrete: (0..ROOMS).map(|i| (i, 1)).collect(), half_spaces: vec![] })
            .with_offset(Offset::Linear { constant: bt, terms: heater_terms(&ct), after_update: false })
            .with_update(DiscreteUpdate::Assign((0..ROOMS).map(|i| (i, 0)).collect())),
    );
    let d = u32::from(params.decided);
    let mut initial = vec![d; ROOMS];
    initial.extend(params.initial_heaters);
    TransitionSystem::new(
        ROOMS,
        variables,
        actions,
        DiscreteState::new(initial),
        InitialSet::Ball { center: DVector::from_column_slice(&params.center), radius: params.radius },
        Norm::L2,
    )
}

pub fn build_heating_with(params: &HeatingParams) -> Result<ModelPreset> {
    let (lo, hi) = params.safe_range;
    let system = build_heating(params)?.with_invariant_radius(hi * 3f64.sqrt(), false)?;
    let bounds: Vec<_> = (0..3).map(|i| (i, lo, hi)).collect();
    Ok(ModelPreset {
        name: "heating".into(),
        system,
        epsilon: 0.6,
        delta0: 2.0,
        horizon: 32,
        safety: Some(SafetyQuery::outside_box(3, &bounds)),
        assumptions: vec![
            format!("initial temperatures within {} of {:?}", params.radius, params.center),
            format!("heater on at temperature <= {0}, off at >= {0}", params.threshold),
            format!("initial heaters {:?}; rounds open with flow: {}", params.initial_heaters, params.decided),
            format!("invariant radius {}·sqrt(3) declared, not certified (unused: no pair needs it)", hi),
        ],
    })
}

pub fn build_heating_default() -> ModelPreset {
    build_heating_with(&HeatingParams::default()).expect("heating preset is well formed")
}

/// Parameters of the platoon model.
#[derive(Clone, Debug, PartialEq)]
pub struct PlatoonParams {
    pub cars: usize,
    pub dt: f64,
    /// Leader's choices, named `a`, `b`, `c`, … in this order.
    pub acc_set: Vec<f64>,
    pub accelerate_gap: f64,
    pub brake_gap: f64,
    pub initial: InitialSet,
}

impl PlatoonParams {
    pub fn two_cars(lead_position: f64) -> Self {
        Self {
            cars: 2,
            dt: 0.1,
            acc_set: vec![10.0, -10.0, 0.0],
            accelerate_gap: 50.0,
            brake_gap: 30.0,
            initial: InitialSet::Box {
                lower: DVector::from_column_slice(&[lead_position, 10.0, 0.0, 10.0]),
                upper: DVector::from_column_slice(&[lead_position, 10.0, 5.0, 10.0]),
            },
        }
    }

    pub fn four_cars() -> Self {
        Self {
            cars: 4,
            initial: InitialSet::Ball {
                center: DVector::from_column_slice(&[120.0, 10.0, 80.0, 10.0, 40.0, 10.0, 0.0, 10.0]),
                radius: 4.0,
            },
            ..Self::two_cars(0.0)
        }
    }
}

/// Joint actions of an `N`-car platoon. State `[p0, v0, p1, v1, …]`, car 0 in front.
///
/// Car 0 picks any acceleration; each follower's branch (accelerate, brake,
/// cruise) is selected by guards on the gap to its predecessor. A joint action
/// is named by one letter per car.
pub fn build_platoon(params: &PlatoonParams) -> Result<TransitionSystem> {
    let n = params.cars;
    if n < 2 {
        return Err(Error::Config("a platoon needs at least two cars".into()));
    }
    if !(params.dt > 0.0) || !params.dt.is_finite() {
        return Err(Error::Config(format!("invalid time step {}", params.dt)));
    }
    if params.acc_set.is_empty() || params.acc_set.len() > 26 {
        return Err(Error::Config("acceleration set must have between 1 and 26 values".into()));
    }
    let dim = 2 * n;
    let dt = params.dt;
    let mut a = DMatrix::identity(dim, dim);
    for i in 0..n {
        a[(2 * i, 2 * i + 1)] = dt;
    }
    let max_acc = params.acc_set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_acc = params.acc_set.iter().copied().fold(f64::INFINITY, f64::min);
    // follower branches: (letter, acceleration)
    let branches = [('a', max_acc), ('b', min_acc), ('c', 0.0)];
    let leader: Vec<(char, f64)> = params.acc_set.iter().enumerate().map(|(k, &acc)| ((b'a' + k as u8) as char, acc)).collect();

    let mut combos: Vec<Vec<(char, f64)>> = leader.iter().map(|&c| vec![c]).collect();
    for _ in 1..n {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                branches.iter().map(move |&b| {
                    let mut p = prefix.clone();
                    p.push(b);
                    p
                })
            })
            .collect();
    }

    let mut actions = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut offset = DVector::zeros(dim);
        let mut half_spaces = Vec::new();
        for (i, &(branch, acc)) in combo.iter().enumerate() {
            offset[2 * i] = acc * dt * dt / 2.0;
            offset[2 * i + 1] = acc * dt;
            if i == 0 {
                continue;
            }
            // gap = c · x
            let mut c = DVector::zeros(dim);
            c[2 * (i - 1)] = 1.0;
            c[2 * i] = -1.0;
            match branch {
                'a' => half_spaces.push(HalfSpace::new(-&c, -params.accelerate_gap)),
                'b' => half_spaces.push(HalfSpace::new(c, params.brake_gap)),
                _ => {
                    half_spaces.push(HalfSpace::new(c.clone(), params.accelerate_gap));
                    half_spaces.push(HalfSpace::new(-c, -params.brake_gap));
                }
            }
        }
        let name: String = combo.iter().map(|(ch, _)| ch).collect();
        actions.push(
            AffineAction::new(name, a.clone())
                .with_guard(Guard { discrete: vec![], half_spaces })
                .with_offset(Offset::Constant(offset)),
        );
    }
    TransitionSystem::new(dim, vec![], actions, DiscreteState::new(vec![]), params.initial.clone(), Norm::L2)
}

/// Unsafe whenever some follower is not strictly behind its predecessor.
pub fn platoon_collision_query(cars: usize, min_gap: f64) -> SafetyQuery {
    let dim = 2 * cars;
    let regions = (1..cars)
        .map(|i| {
            let mut c = DVector::zeros(dim);
            c[2 * (i - 1)] = 1.0;
            c[2 * i] = -1.0;
            vec![HalfSpace::new(c, min_gap)]
        })
        .collect();
    SafetyQuery::new(regions)
}

/// Named scenarios: `platoon2-60`, `platoon2-40`, `platoon2-25`, `platoon4`.
pub fn build_platoon_scenario(name: &str) -> Result<ModelPreset> {
    let (params, delta0) = match name {
        "platoon4" => (PlatoonParams::four_cars(), 4.0),
        _ => {
            let lead = name
                .strip_prefix("platoon2-")
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Config(format!("unknown platoon scenario `{name}`")))?;
            (PlatoonParams::two_cars(lead), 0.5)
        }
    };
    let system = build_platoon(&params)?;
    Ok(ModelPreset {
        name: name.to_string(),
        system,
        epsilon: 0.282,
        delta0,
        horizon: 10,
        safety: Some(platoon_collision_query(params.cars, 0.0)),
        assumptions: vec![
            "initial velocities 10 for every car".into(),
            "unsafe when a gap to the predecessor is <= 0".into(),
            format!("time step {}, leader accelerations {:?}", params.dt, params.acc_set),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::independence::{Bound, IndependenceTable};
    use crate::lts::State;

    #[test]
    fn consensus_matrices_as_printed() {
        let p = build_consensus_default();
        let a0 = &p.system.actions[0].matrix;
        assert_eq!(a0.row(0).iter().copied().collect::<Vec<_>>(), vec![0.2, -0.2, -0.3]);
        assert_eq!(p.system.actions.len(), 4);
        assert_eq!(p.system.invariant_radius, Some(4.0 * 3f64.sqrt()));
    }

    #[test]
    fn consensus_invariant_certificate_holds() {
        let p = build_consensus_default();
        crate::independence::certify_invariant_radius(&p.system).unwrap();
    }

    #[test]
    fn heating_matrices_as_printed() {
        let p = build_heating_default();
        let sys = &p.system;
        let on0 = sys.action(sys.action_id("on0").unwrap());
        assert_eq!(on0.matrix.row(0).iter().copied().collect::<Vec<_>>(), vec![0.96, 0.01, 0.01]);
        let (_, bh, _, _, _, ct) = heating_matrices();
        assert_eq!(bh.as_slice(), &[1.2, 0.0, 1.2]);
        assert_eq!(ct.diagonal().as_slice(), &[11.4, 8.0, 10.0]);
    }

    #[test]
    fn heating_flow_hand_evaluation() {
        let p = build_heating_default();
        let sys = &p.system;
        let flow = sys.action_id("flow").unwrap();
        let q = State::new(DiscreteState::new(vec![1, 1, 1, 1, 0, 0]), DVector::from_element(3, 70.0));
        let next = sys.apply(flow, &q).unwrap();
        assert!((next.continuous[0] - 75.7).abs() < 1e-12);
        assert!((next.continuous[0] - (0.43 * 70.0 + 34.2 + 11.4)).abs() < 1e-12);
        assert_eq!(next.discrete.values(), &[0, 0, 0, 1, 0, 0]);
    }

    #[test]
    fn platoon_shapes() {
        let p = build_platoon_scenario("platoon2-60").unwrap();
        assert_eq!(p.system.actions.len(), 9);
        assert_eq!(p.system.dimension, 4);
        assert_eq!(p.system.actions[0].matrix[(0, 1)], 0.1);
        let names: Vec<_> = p.system.actions.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["aa", "ab", "ac", "ba", "bb", "bc", "ca", "cb", "cc"]);
        let p4 = build_platoon_scenario("platoon4").unwrap();
        assert_eq!(p4.system.actions.len(), 81);
        assert!(build_platoon_scenario("platoon2-x").is_err());
        assert!(build_platoon(&PlatoonParams { cars: 1, ..PlatoonParams::two_cars(10.0) }).is_err());
        assert!(build_platoon(&PlatoonParams { dt: 0.0, ..PlatoonParams::two_cars(10.0) }).is_err());
    }

    #[test]
    fn platoon_follower_guards_pick_one_branch() {
        let p = build_platoon_scenario("platoon2-60").unwrap();
        let sys = &p.system;
        for (gap, branch) in [(60.0, 'a'), (20.0, 'b'), (40.0, 'c')] {
            let q = sys.initial_state(DVector::from_column_slice(&[gap, 10.0, 0.0, 10.0]));
            let en = sys.enabled_actions(&q);
            assert_eq!(en.len(), 3);
            assert!(en.iter().all(|&a| sys.actions[a].name.ends_with(branch)));
        }
    }

    #[test]
    fn presets_are_self_consistent() {
        // every preset has some independence, and no bound sits on the ε fence
        for p in all_presets() {
            let t = IndependenceTable::build(&p.system, p.epsilon).unwrap();
            for a in 0..t.num_actions() {
                for b in 0..t.num_actions() {
                    if let Bound::Value(v) = t.bound(a, b) {
                        assert!((v - p.epsilon).abs() > 1e-6, "{} {a} {b} {v}", p.name);
                    }
                }
            }
            assert!(!t.independent_pairs().is_empty(), "{}", p.name);
        }
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(matches!(preset("nope"), Err(Error::Config(_))));
        for name in PRESET_NAMES {
            assert!(preset(name).is_ok());
        }
    }
}
