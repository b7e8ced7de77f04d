//! Deterministic 2-D kinematic multi-agent scene generation.
//!
//! The world is a flat plane sampled at `DT` seconds. Agents follow simple
//! behavior rules (cruise, decelerate at a junction, constant-rate turn,
//! stationary); the ego drives along +x with a car-following rule so that
//! its future depends on the agents around it. Region profiles shift the
//! behavior statistics and corruption levels shift the observation noise,
//! giving parametric train/eval distribution gaps.
//!
//! Everything is a pure function of `(config, seed)`: every random draw is
//! keyed by `(seed, scene, frame, agent, purpose)` through [`KeyedRng`], so
//! output is reproducible regardless of evaluation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{KeyedRng, Purpose};

/// Seconds per frame (2 Hz annotation rate).
pub const DT: f64 = 0.5;
/// Ego plan horizon in waypoints (3 s).
pub const PLAN_HORIZON: usize = 6;
/// Agent prediction horizon in waypoints (3 s).
pub const PRED_HORIZON: usize = 6;
/// Past samples per observation window, current frame included.
pub const OBS_WINDOW: usize = 4;

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Behavior {
    Cruise,
    DecelerateAtJunction,
    Turn,
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: u32,
    pub position: (f64, f64),
    pub velocity: (f64, f64),
    pub heading: f64,
    pub kind: AgentKind,
    pub behavior: Behavior,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        (self.velocity.0 * self.velocity.0 + self.velocity.1 * self.velocity.1).sqrt()
    }
}

/// Ground truth at one frame, with realized futures attached.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFrame {
    pub t: usize,
    pub dt: f64,
    pub ego: AgentState,
    pub agents: Vec<AgentState>,
    /// Ego positions at frames t+1 ..= t+PLAN_HORIZON.
    pub ego_future_gt: Vec<(f64, f64)>,
    /// Per agent (aligned with `agents`): positions at t+1 ..= t+PRED_HORIZON.
    pub agent_future_gt: Vec<Vec<(f64, f64)>>,
}

/// One agent's noisy observation: OBS_WINDOW samples of
/// (x, y, vx, vy), positions relative to the current ego position,
/// velocities absolute. Oldest sample first.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Observation {
    pub agent_id: u32,
    pub history: Vec<[f64; 4]>,
}

/// What the model receives at one frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: usize,
    /// Ego odometry: position/velocity in world coordinates.
    pub ego_position: (f64, f64),
    pub ego_velocity: (f64, f64),
    /// Ego's own (noiseless) history window, same layout as observations.
    pub ego_history: Vec<[f64; 4]>,
    pub observations: Vec<Observation>,
    /// Visibility mask aligned with the scene frame's agent list.
    pub visibility: Vec<bool>,
}

/// Behavior statistics of one driving region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProfile {
    pub name: String,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub turn_rate_mean: f64,
    pub pedestrian_fraction: f64,
    pub junction_density: usize,
    pub agent_count_range: (usize, usize),
}

impl RegionProfile {
    pub fn validate(&self) -> Result<()> {
        if self.speed_mean <= 0.0 {
            return Err(Error::Config(format!(
                "profile {}: speed_mean must be > 0",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.pedestrian_fraction) {
            return Err(Error::Config(format!(
                "profile {}: pedestrian_fraction must be in [0,1]",
                self.name
            )));
        }
        if self.agent_count_range.0 > self.agent_count_range.1 || self.agent_count_range.1 == 0 {
            return Err(Error::Config(format!(
                "profile {}: bad agent_count_range",
                self.name
            )));
        }
        Ok(())
    }
}

/// Observation-corruption severity bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionLevel {
    pub name: String,
    pub obs_noise_sigma: f64,
    pub dropout_prob: f64,
    pub confidence_degradation: f64,
}

impl CorruptionLevel {
    pub fn none() -> Self {
        CorruptionLevel {
            name: "none".into(),
            obs_noise_sigma: 0.05,
            dropout_prob: 0.0,
            confidence_degradation: 0.0,
        }
    }

    pub fn rain() -> Self {
        CorruptionLevel {
            name: "rain".into(),
            obs_noise_sigma: 0.25,
            dropout_prob: 0.05,
            confidence_degradation: 0.2,
        }
    }

    pub fn fog() -> Self {
        CorruptionLevel {
            name: "fog".into(),
            obs_noise_sigma: 0.55,
            dropout_prob: 0.10,
            confidence_degradation: 0.4,
        }
    }

    pub fn snow() -> Self {
        CorruptionLevel {
            name: "snow".into(),
            obs_noise_sigma: 1.0,
            dropout_prob: 0.15,
            confidence_degradation: 0.6,
        }
    }

    /// Severity must strictly increase none < rain < fog < snow.
    pub fn validate_ordering(levels: &[CorruptionLevel]) -> Result<()> {
        for pair in levels.windows(2) {
            if pair[0].obs_noise_sigma >= pair[1].obs_noise_sigma {
                return Err(Error::Config(format!(
                    "corruption severity must strictly increase: {} ({}) >= {} ({})",
                    pair[0].name, pair[0].obs_noise_sigma, pair[1].name, pair[1].obs_noise_sigma
                )));
            }
        }
        Ok(())
    }
}

/// A generated scene: emitted (ground truth, sensor) pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub frames: Vec<(SceneFrame, SensorFrame)>,
}

// ── generation ──────────────────────────────────────────────────────────

struct AgentSpec {
    id: u32,
    start: (f64, f64),
    heading: f64,
    cruise_speed: f64,
    kind: AgentKind,
    behavior: Behavior,
    turn_rate: f64,
    /// x coordinate of the junction this agent brakes for (Decelerate only).
    junction_x: f64,
}

const EGO_ID: u32 = 0;
const BRAKE_ZONE: f64 = 15.0;
const BRAKE_RATE_FRAC: f64 = 0.25; // of cruise speed, per second
const JUNCTION_MIN_SPEED_FRAC: f64 = 0.3;
const FOLLOW_RANGE: f64 = 25.0;
const FOLLOW_LATERAL: f64 = 2.5;
const EGO_ACCEL: f64 = 2.0;

fn sample_agents(profile: &RegionProfile, seed: u64, scene_id: u64) -> Vec<AgentSpec> {
    let mut spawn = KeyedRng::from_key(&[seed, scene_id, 0, 0, Purpose::Spawn as u64]);
    let (lo, hi) = profile.agent_count_range;
    let count = lo + spawn.pick(hi - lo + 1);

    let mut junctions = Vec::new();
    for _ in 0..profile.junction_density {
        junctions.push(spawn.range(12.0, 45.0));
    }

    let mut specs = Vec::with_capacity(count);
    for i in 0..count {
        let agent_id = (i + 1) as u32; // 0 is the ego
        let mut r = KeyedRng::from_key(&[seed, scene_id, 0, agent_id as u64, Purpose::Behavior as u64]);
        let kind = if r.below(profile.pedestrian_fraction) {
            AgentKind::Pedestrian
        } else {
            AgentKind::Vehicle
        };
        // Spawn around the ego's corridor.
        let start = (r.range(-12.0, 55.0), r.range(-8.0, 8.0));
        let heading = match kind {
            AgentKind::Vehicle => {
                if r.below(0.7) {
                    0.0
                } else {
                    std::f64::consts::PI
                }
            }
            AgentKind::Pedestrian => r.range(0.0, 2.0 * std::f64::consts::PI),
        };
        let mut sr = KeyedRng::from_key(&[seed, scene_id, 0, agent_id as u64, Purpose::Speed as u64]);
        let cruise_speed = match kind {
            AgentKind::Vehicle => sr.normal_scaled(profile.speed_mean, profile.speed_std).max(0.1),
            AgentKind::Pedestrian => sr
                .normal_scaled(0.15 * profile.speed_mean, 0.05 * profile.speed_mean)
                .max(0.05),
        };
        let stationary = match kind {
            AgentKind::Vehicle => r.below(0.15),
            AgentKind::Pedestrian => r.below(0.3),
        };
        let mut behavior = if stationary { Behavior::Stationary } else { Behavior::Cruise };
        let mut turn_rate = 0.0;
        let mut junction_x = f64::INFINITY;
        if behavior == Behavior::Cruise && kind == AgentKind::Vehicle {
            let mut tr = KeyedRng::from_key(&[seed, scene_id, 0, agent_id as u64, Purpose::Turn as u64]);
            if tr.below(0.25) {
                behavior = Behavior::Turn;
                let sign = if tr.below(0.5) { 1.0 } else { -1.0 };
                turn_rate = sign * tr.normal_scaled(profile.turn_rate_mean, 0.3 * profile.turn_rate_mean).abs();
            } else if !junctions.is_empty() && heading == 0.0 {
                // Brake for the nearest junction ahead, if any.
                let ahead: Vec<f64> =
                    junctions.iter().copied().filter(|&jx| jx > start.0 + 2.0).collect();
                if !ahead.is_empty() && tr.below(0.6) {
                    behavior = Behavior::DecelerateAtJunction;
                    junction_x = ahead.iter().cloned().fold(f64::INFINITY, f64::min);
                }
            }
        }
        specs.push(AgentSpec {
            id: agent_id,
            start,
            heading,
            cruise_speed,
            kind,
            behavior,
            turn_rate,
            junction_x,
        });
    }
    specs
}

fn step_agent(state: &mut AgentState, spec: &AgentSpec) {
    match spec.behavior {
        Behavior::Stationary => {
            // velocity stays exactly zero
        }
        Behavior::Cruise => {
            state.position.0 += state.velocity.0 * DT;
            state.position.1 += state.velocity.1 * DT;
        }
        Behavior::Turn => {
            state.position.0 += state.velocity.0 * DT;
            state.position.1 += state.velocity.1 * DT;
            state.heading += spec.turn_rate * DT;
            let s = spec.cruise_speed;
            state.velocity = (s * state.heading.cos(), s * state.heading.sin());
        }
        Behavior::DecelerateAtJunction => {
            state.position.0 += state.velocity.0 * DT;
            state.position.1 += state.velocity.1 * DT;
            let speed = state.speed();
            let brake_rate = BRAKE_RATE_FRAC * spec.cruise_speed;
            let min_speed = JUNCTION_MIN_SPEED_FRAC * spec.cruise_speed;
            let before = state.position.0 < spec.junction_x;
            let in_zone = before && spec.junction_x - state.position.0 < BRAKE_ZONE;
            let new_speed = if in_zone {
                (speed - brake_rate * DT).max(min_speed)
            } else {
                (speed + brake_rate * DT).min(spec.cruise_speed)
            };
            state.velocity = (new_speed * state.heading.cos(), new_speed * state.heading.sin());
        }
    }
}

/// Car-following ego: cruise at the profile speed, but match a slower
/// leader in the corridor ahead.
fn step_ego(ego: &mut AgentState, agents: &[AgentState], target_speed: f64) {
    ego.position.0 += ego.velocity.0 * DT;
    ego.position.1 += ego.velocity.1 * DT;
    let mut desired = target_speed;
    for a in agents {
        let dx = a.position.0 - ego.position.0;
        let dy = a.position.1 - ego.position.1;
        if dx > 0.0 && dx < FOLLOW_RANGE && dy.abs() < FOLLOW_LATERAL {
            // Project the leader's velocity onto the ego's direction of travel.
            let lead_speed = a.velocity.0.max(0.0);
            if lead_speed < desired {
                desired = lead_speed;
            }
        }
    }
    let speed = ego.velocity.0;
    let new_speed = if speed < desired {
        (speed + EGO_ACCEL * DT).min(desired)
    } else {
        (speed - EGO_ACCEL * DT).max(desired.max(0.0))
    };
    ego.velocity = (new_speed, 0.0);
}

/// Generate one scene. Frames are emitted for every t that has a full
/// observation window behind it and full futures ahead of it.
pub fn generate_scene(
    profile: &RegionProfile,
    corruption: &CorruptionLevel,
    seed: u64,
    scene_id: u64,
    length_frames: usize,
) -> Result<Scene> {
    profile.validate()?;
    let horizon = PLAN_HORIZON.max(PRED_HORIZON);
    if length_frames < OBS_WINDOW + horizon + 2 {
        return Err(Error::Config(format!(
            "length_frames {} too short; need at least {}",
            length_frames,
            OBS_WINDOW + horizon + 2
        )));
    }

    let specs = sample_agents(profile, seed, scene_id);

    // Roll the full state history forward.
    let mut ego_rng = KeyedRng::from_key(&[seed, scene_id, 0, EGO_ID as u64, Purpose::Speed as u64]);
    let ego_target = ego_rng.normal_scaled(profile.speed_mean, 0.3 * profile.speed_std).max(0.5);
    let mut ego = AgentState {
        id: EGO_ID,
        position: (0.0, 0.0),
        velocity: (ego_target, 0.0),
        heading: 0.0,
        kind: AgentKind::Vehicle,
        behavior: Behavior::Cruise,
    };
    let mut agents: Vec<AgentState> = specs
        .iter()
        .map(|s| {
            let v = match s.behavior {
                Behavior::Stationary => (0.0, 0.0),
                _ => (s.cruise_speed * s.heading.cos(), s.cruise_speed * s.heading.sin()),
            };
            AgentState {
                id: s.id,
                position: s.start,
                velocity: v,
                heading: s.heading,
                kind: s.kind,
                behavior: s.behavior,
            }
        })
        .collect();

    let mut ego_states = Vec::with_capacity(length_frames);
    let mut agent_states: Vec<Vec<AgentState>> = Vec::with_capacity(length_frames);
    ego_states.push(ego.clone());
    agent_states.push(agents.clone());
    for _ in 1..length_frames {
        for (a, s) in agents.iter_mut().zip(&specs) {
            step_agent(a, s);
        }
        step_ego(&mut ego, &agents, ego_target);
        ego_states.push(ego.clone());
        agent_states.push(agents.clone());
    }

    // Emit frames with full windows and futures.
    let first = OBS_WINDOW - 1;
    let last = length_frames - horizon; // exclusive
    let mut frames = Vec::with_capacity(last - first);
    for t in first..last {
        let ego_t = &ego_states[t];
        let agents_t = &agent_states[t];

        let ego_future_gt: Vec<(f64, f64)> =
            (1..=PLAN_HORIZON).map(|p| ego_states[t + p].position).collect();
        let agent_future_gt: Vec<Vec<(f64, f64)>> = (0..agents_t.len())
            .map(|j| (1..=PRED_HORIZON).map(|q| agent_states[t + q][j].position).collect())
            .collect();

        let scene_frame = SceneFrame {
            t,
            dt: DT,
            ego: ego_t.clone(),
            agents: agents_t.clone(),
            ego_future_gt,
            agent_future_gt,
        };

        let ego_history: Vec<[f64; 4]> = (0..OBS_WINDOW)
            .map(|k| {
                let s = &ego_states[t + 1 - OBS_WINDOW + k];
                [
                    s.position.0 - ego_t.position.0,
                    s.position.1 - ego_t.position.1,
                    s.velocity.0,
                    s.velocity.1,
                ]
            })
            .collect();

        let mut observations = Vec::new();
        let mut visibility = Vec::with_capacity(agents_t.len());
        for (j, a) in agents_t.iter().enumerate() {
            let mut drop_rng =
                KeyedRng::from_key(&[seed, scene_id, t as u64, a.id as u64, Purpose::Dropout as u64]);
            let dropped = drop_rng.below(corruption.dropout_prob);
            visibility.push(!dropped);
            if dropped {
                continue;
            }
            let mut noise =
                KeyedRng::from_key(&[seed, scene_id, t as u64, a.id as u64, Purpose::Noise as u64]);
            let mut clutter =
                KeyedRng::from_key(&[seed, scene_id, t as u64, a.id as u64, Purpose::Clutter as u64]);
            // A clutter event inflates this window's noise, degrading the
            // detection (and eventually its learned confidence).
            let sigma = if clutter.below(corruption.confidence_degradation) {
                corruption.obs_noise_sigma * 4.0
            } else {
                corruption.obs_noise_sigma
            };
            let history: Vec<[f64; 4]> = (0..OBS_WINDOW)
                .map(|k| {
                    let s = &agent_states[t + 1 - OBS_WINDOW + k][j];
                    [
                        s.position.0 - ego_t.position.0 + sigma * noise.normal(),
                        s.position.1 - ego_t.position.1 + sigma * noise.normal(),
                        s.velocity.0 + sigma * noise.normal(),
                        s.velocity.1 + sigma * noise.normal(),
                    ]
                })
                .collect();
            observations.push(Observation { agent_id: a.id, history });
        }

        let sensor = SensorFrame {
            t,
            ego_position: ego_t.position,
            ego_velocity: ego_t.velocity,
            ego_history,
            observations,
            visibility,
        };
        frames.push((scene_frame, sensor));
    }

    Ok(Scene { id: scene_id, frames })
}

// ── suites ──────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    InDomain,
    CrossRegion,
    Corruption,
}

impl std::fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SuiteKind::InDomain => "in_domain",
            SuiteKind::CrossRegion => "cross_region",
            SuiteKind::Corruption => "corruption",
        };
        f.write_str(s)
    }
}

/// One train/eval pairing inside a suite.
#[derive(Clone, Debug)]
pub struct SuiteSplit {
    pub label: String,
    pub train_profile: RegionProfile,
    pub eval_profile: RegionProfile,
    pub eval_corruption: CorruptionLevel,
    pub train: Vec<Scene>,
    pub eval: Vec<Scene>,
}

/// Scene-count knobs for suite construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteCounts {
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub scene_length: usize,
}

impl Default for SuiteCounts {
    fn default() -> Self {
        SuiteCounts { train_scenes: 48, eval_scenes: 6, scene_length: 36 }
    }
}

/// Offset separating train from eval scene id streams.
const EVAL_SCENE_OFFSET: u64 = 1_000_000;

pub fn generate_collection(
    profile: &RegionProfile,
    corruption: &CorruptionLevel,
    seed: u64,
    first_scene_id: u64,
    count: usize,
    length: usize,
) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| generate_scene(profile, corruption, seed, first_scene_id + i as u64, length))
        .collect()
}

/// Build the train/eval scene collections for one suite kind.
///
/// - in_domain: one split, same profile both sides;
/// - cross_region: two splits, A->B and B->A;
/// - corruption: one split per severity level, clean training.
pub fn scene_suite(
    kind: SuiteKind,
    seed: u64,
    counts: &SuiteCounts,
    profile_a: &RegionProfile,
    profile_b: &RegionProfile,
    corruptions: &[CorruptionLevel],
) -> Result<Vec<SuiteSplit>> {
    let clean = CorruptionLevel::none();
    let make = |train_p: &RegionProfile,
                eval_p: &RegionProfile,
                eval_c: &CorruptionLevel,
                label: String|
     -> Result<SuiteSplit> {
        Ok(SuiteSplit {
            label,
            train_profile: train_p.clone(),
            eval_profile: eval_p.clone(),
            eval_corruption: eval_c.clone(),
            train: generate_collection(train_p, &clean, seed, 0, counts.train_scenes, counts.scene_length)?,
            eval: generate_collection(
                eval_p,
                eval_c,
                seed,
                EVAL_SCENE_OFFSET,
                counts.eval_scenes,
                counts.scene_length,
            )?,
        })
    };

    match kind {
        SuiteKind::InDomain => Ok(vec![make(
            profile_a,
            profile_a,
            &clean,
            format!("{}->{}", profile_a.name, profile_a.name),
        )?]),
        SuiteKind::CrossRegion => Ok(vec![
            make(profile_a, profile_b, &clean, format!("{}->{}", profile_a.name, profile_b.name))?,
            make(profile_b, profile_a, &clean, format!("{}->{}", profile_b.name, profile_a.name))?,
        ]),
        SuiteKind::Corruption => {
            let levels: Vec<&CorruptionLevel> =
                corruptions.iter().filter(|c| c.name != "none").collect();
            if levels.len() != 3 {
                return Err(Error::Config(format!(
                    "corruption suite needs exactly 3 non-clean levels, got {}",
                    levels.len()
                )));
            }
            let mut all = corruptions.to_vec();
            all.sort_by(|a, b| a.obs_noise_sigma.total_cmp(&b.obs_noise_sigma));
            CorruptionLevel::validate_ordering(&all)?;
            levels
                .into_iter()
                .map(|c| make(profile_a, profile_a, c, format!("{}:{}", profile_a.name, c.name)))
                .collect()
        }
    }
}

/// Built-in default region pair. Region B drives slower, turns more and
/// has more pedestrians than region A.
pub fn default_profiles() -> (RegionProfile, RegionProfile) {
    (
        RegionProfile {
            name: "region_a".into(),
            speed_mean: 10.0,
            speed_std: 1.5,
            turn_rate_mean: 0.15,
            pedestrian_fraction: 0.15,
            junction_density: 1,
            agent_count_range: (4, 8),
        },
        RegionProfile {
            name: "region_b".into(),
            speed_mean: 5.5,
            speed_std: 1.2,
            turn_rate_mean: 0.35,
            pedestrian_fraction: 0.4,
            junction_density: 3,
            agent_count_range: (6, 10),
        },
    )
}

pub fn default_corruptions() -> Vec<CorruptionLevel> {
    vec![
        CorruptionLevel::none(),
        CorruptionLevel::rain(),
        CorruptionLevel::fog(),
        CorruptionLevel::snow(),
    ]
}

// ── JSON-lines export ───────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct FrameRecord<'a> {
    schema_version: u32,
    scene_id: u64,
    #[serde(borrow)]
    frame: std::borrow::Cow<'a, SceneFrame>,
    sensor: std::borrow::Cow<'a, SensorFrame>,
}

/// One frame per line, each line carrying the schema version.
pub fn scene_to_jsonl(scene: &Scene) -> String {
    let mut out = String::new();
    for (frame, sensor) in &scene.frames {
        let rec = FrameRecord {
            schema_version: SCENE_SCHEMA_VERSION,
            scene_id: scene.id,
            frame: std::borrow::Cow::Borrowed(frame),
            sensor: std::borrow::Cow::Borrowed(sensor),
        };
        out.push_str(&serde_json::to_string(&rec).expect("scene serialization cannot fail"));
        out.push('\n');
    }
    out
}

pub fn scene_from_jsonl(s: &str) -> Result<Scene> {
    let mut id = None;
    let mut frames = Vec::new();
    for line in s.lines().filter(|l| !l.trim().is_empty()) {
        let rec: FrameRecord<'_> = serde_json::from_str(line)?;
        if rec.schema_version != SCENE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported scene schema_version {}",
                rec.schema_version
            )));
        }
        if *id.get_or_insert(rec.scene_id) != rec.scene_id {
            return Err(Error::Config("mixed scene ids in one stream".into()));
        }
        frames.push((rec.frame.into_owned(), rec.sensor.into_owned()));
    }
    Ok(Scene { id: id.unwrap_or(0), frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> RegionProfile {
        default_profiles().0
    }

    #[test]
    fn generation_is_deterministic() {
        let c = CorruptionLevel::none();
        let a = generate_scene(&profile(), &c, 7, 3, 24).unwrap();
        let b = generate_scene(&profile(), &c, 7, 3, 24).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let d = generate_scene(&profile(), &c, 8, 3, 24).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&d).unwrap());
    }

    #[test]
    fn too_short_scene_is_config_error() {
        let c = CorruptionLevel::none();
        assert!(matches!(
            generate_scene(&profile(), &c, 1, 0, OBS_WINDOW + PRED_HORIZON + 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn no_dropout_means_every_agent_observed() {
        let mut c = CorruptionLevel::none();
        c.dropout_prob = 0.0;
        let scene = generate_scene(&profile(), &c, 11, 0, 24).unwrap();
        for (frame, sensor) in &scene.frames {
            assert_eq!(sensor.observations.len(), frame.agents.len());
            assert!(sensor.visibility.iter().all(|&v| v));
        }
    }

    #[test]
    fn dropout_hides_agents() {
        let mut c = CorruptionLevel::snow();
        c.dropout_prob = 0.5;
        let scene = generate_scene(&profile(), &c, 11, 0, 24).unwrap();
        let total: usize = scene.frames.iter().map(|(f, _)| f.agents.len()).sum();
        let seen: usize = scene.frames.iter().map(|(_, s)| s.observations.len()).sum();
        assert!(seen < total, "expected some dropout ({seen}/{total})");
        // Observations only for visible agents.
        for (frame, sensor) in &scene.frames {
            assert_eq!(sensor.visibility.len(), frame.agents.len());
            for obs in &sensor.observations {
                let idx = frame.agents.iter().position(|a| a.id == obs.agent_id).unwrap();
                assert!(sensor.visibility[idx]);
            }
        }
    }

    #[test]
    fn stationary_agents_never_move() {
        let c = CorruptionLevel::none();
        for seed in 0..5 {
            let scene = generate_scene(&profile(), &c, seed, 2, 30).unwrap();
            let mut found = false;
            let first = &scene.frames[0].0;
            for (j, a) in first.agents.iter().enumerate() {
                if a.behavior == Behavior::Stationary {
                    found = true;
                    assert_eq!(a.velocity, (0.0, 0.0));
                    for (f, _) in &scene.frames {
                        assert_eq!(f.agents[j].position, a.position);
                        assert_eq!(f.agents[j].velocity, (0.0, 0.0));
                    }
                }
            }
            if found {
                return;
            }
        }
        panic!("no stationary agent in five seeds");
    }

    #[test]
    fn futures_match_realized_frames() {
        let c = CorruptionLevel::none();
        let scene = generate_scene(&profile(), &c, 13, 5, 26).unwrap();
        for (i, (frame, _)) in scene.frames.iter().enumerate() {
            for (p, want) in frame.ego_future_gt.iter().enumerate() {
                if i + p + 1 < scene.frames.len() {
                    let realized = scene.frames[i + p + 1].0.ego.position;
                    assert_eq!(*want, realized, "ego future at t={} p={}", frame.t, p);
                }
            }
            for (j, futures) in frame.agent_future_gt.iter().enumerate() {
                for (q, want) in futures.iter().enumerate() {
                    if i + q + 1 < scene.frames.len() {
                        let realized = scene.frames[i + q + 1].0.agents[j].position;
                        assert_eq!(*want, realized, "agent {} future at t={}", j, frame.t);
                    }
                }
            }
        }
    }

    #[test]
    fn agent_ids_unique_and_stable() {
        let c = CorruptionLevel::none();
        let scene = generate_scene(&profile(), &c, 17, 9, 24).unwrap();
        let ids: Vec<u32> = scene.frames[0].0.agents.iter().map(|a| a.id).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), ids.len());
        for (f, _) in &scene.frames {
            let now: Vec<u32> = f.agents.iter().map(|a| a.id).collect();
            assert_eq!(now, ids);
        }
    }

    #[test]
    fn speed_scaling_shifts_empirical_mean_proportionally() {
        // Monte-Carlo oracle: scale speed_mean by 1.5 and compare empirical
        // mean ground-truth agent speeds over 100 scenes.
        let c = CorruptionLevel::none();
        let base = profile();
        let mut scaled = base.clone();
        scaled.speed_mean *= 1.5;

        let mean_speed = |p: &RegionProfile| -> f64 {
            let mut total = 0.0;
            let mut n = 0usize;
            for scene_id in 0..100 {
                let scene = generate_scene(p, &c, 23, scene_id, 24).unwrap();
                for (f, _) in &scene.frames {
                    for a in &f.agents {
                        total += a.speed();
                        n += 1;
                    }
                }
            }
            total / n as f64
        };

        let m1 = mean_speed(&base);
        let m2 = mean_speed(&scaled);
        let ratio = m2 / m1;
        assert!((ratio - 1.5).abs() / 1.5 < 0.05, "ratio {ratio}");
    }

    #[test]
    fn cross_region_suite_has_both_directions() {
        let (a, b) = default_profiles();
        let counts = SuiteCounts { train_scenes: 2, eval_scenes: 1, scene_length: 24 };
        let splits =
            scene_suite(SuiteKind::CrossRegion, 1, &counts, &a, &b, &default_corruptions()).unwrap();
        assert_eq!(splits.len(), 2);
        assert_eq!(splits[0].train_profile.name, "region_a");
        assert_eq!(splits[0].eval_profile.name, "region_b");
        assert_eq!(splits[1].train_profile.name, "region_b");
        assert_eq!(splits[1].eval_profile.name, "region_a");
    }

    #[test]
    fn in_domain_suite_uses_one_profile() {
        let (a, b) = default_profiles();
        let counts = SuiteCounts { train_scenes: 2, eval_scenes: 1, scene_length: 24 };
        let splits =
            scene_suite(SuiteKind::InDomain, 1, &counts, &a, &b, &default_corruptions()).unwrap();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].train_profile, splits[0].eval_profile);
    }

    #[test]
    fn corruption_suite_has_three_severities() {
        let (a, b) = default_profiles();
        let counts = SuiteCounts { train_scenes: 2, eval_scenes: 1, scene_length: 24 };
        let splits =
            scene_suite(SuiteKind::Corruption, 1, &counts, &a, &b, &default_corruptions()).unwrap();
        assert_eq!(splits.len(), 3);
        let names: Vec<&str> = splits.iter().map(|s| s.eval_corruption.name.as_str()).collect();
        assert_eq!(names, ["rain", "fog", "snow"]);
        for s in &splits {
            assert_eq!(s.train_profile, s.eval_profile);
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_scene() {
        let c = CorruptionLevel::rain();
        let scene = generate_scene(&profile(), &c, 29, 4, 24).unwrap();
        let text = scene_to_jsonl(&scene);
        assert!(text.lines().all(|l| l.contains("\"schema_version\":1")));
        let back = scene_from_jsonl(&text).unwrap();
        assert_eq!(serde_json::to_string(&scene).unwrap(), serde_json::to_string(&back).unwrap());
    }
}
