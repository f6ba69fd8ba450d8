//! Episode metrics and repeated-run aggregation.

mod table;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EpisodeTrace, InfractionKind};
use crate::sim::{RouteSpec, Skill};

pub use table::{format_cell, render_table, MISSING_CELL};

pub const COMFORT_WINDOW: usize = 20;
pub const EFFICIENCY_CHECKPOINTS: usize = 20;
/// Actors closer than this set the Efficiency reference speed.
pub const REFERENCE_RADIUS: f64 = 30.0;
/// Below this mean actor speed the reference falls back to the speed limit.
pub const MIN_REFERENCE_SPEED: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no reports to aggregate")]
    Empty,
    #[error("penalty for {0:?} must be in (0, 1], got {1}")]
    Penalty(InfractionKind, f64),
    #[error("penalty table lacks {0:?}")]
    MissingPenalty(InfractionKind),
    #[error("comfort threshold {0} must be > 0, got {1}")]
    Threshold(&'static str, f64),
}

/// Multiplier applied to the Driving Score per infraction of each kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<InfractionKind, f64>", into = "BTreeMap<InfractionKind, f64>")]
pub struct PenaltyTable {
    factors: BTreeMap<InfractionKind, f64>,
}

impl PenaltyTable {
    pub fn new(factors: BTreeMap<InfractionKind, f64>) -> Result<Self, MetricsError> {
        for kind in InfractionKind::ALL {
            let Some(&p) = factors.get(&kind) else {
                return Err(MetricsError::MissingPenalty(kind));
            };
            if !(p > 0.0 && p <= 1.0) {
                return Err(MetricsError::Penalty(kind, p));
            }
        }
        Ok(Self { factors })
    }

    pub fn factor(&self, kind: InfractionKind) -> f64 {
        self.factors[&kind]
    }
}

impl Default for PenaltyTable {
    fn default() -> Self {
        use InfractionKind::*;
        let factors = [
            (CollisionPedestrian, 0.50),
            (CollisionVehicle, 0.60),
            (CollisionStatic, 0.65),
            (RedLight, 0.70),
            (BoundaryCrossing, 0.80),
            (RouteDeviation, 0.70),
            (Timeout, 0.70),
        ];
        Self {
            factors: factors.into_iter().collect(),
        }
    }
}

impl TryFrom<BTreeMap<InfractionKind, f64>> for PenaltyTable {
    type Error = MetricsError;
    fn try_from(map: BTreeMap<InfractionKind, f64>) -> Result<Self, Self::Error> {
        PenaltyTable::new(map)
    }
}

impl From<PenaltyTable> for BTreeMap<InfractionKind, f64> {
    fn from(t: PenaltyTable) -> Self {
        t.factors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortThresholds {
    /// Largest allowed |Δsteer| between consecutive frames.
    pub max_abs_steer_delta: f64,
    /// m/s²
    pub max_abs_accel: f64,
    /// m/s³
    pub max_abs_jerk: f64,
}

impl Default for ComfortThresholds {
    fn default() -> Self {
        Self {
            max_abs_steer_delta: 0.1,
            max_abs_accel: 3.0,
            max_abs_jerk: 10.0,
        }
    }
}

impl ComfortThresholds {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for (name, v) in [
            ("max_abs_steer_delta", self.max_abs_steer_delta),
            ("max_abs_accel", self.max_abs_accel),
            ("max_abs_jerk", self.max_abs_jerk),
        ] {
            if !(v > 0.0) {
                return Err(MetricsError::Threshold(name, v));
            }
        }
        Ok(())
    }
}

/// 100 × completed fraction × product of the infraction penalties.
pub fn driving_score(trace: &EpisodeTrace, penalties: &PenaltyTable) -> f64 {
    let factor: f64 = trace.infractions.iter().map(|i| penalties.factor(i.kind)).product();
    (100.0 * trace.completed_fraction * factor).clamp(0.0, 100.0)
}

pub fn success(trace: &EpisodeTrace) -> bool {
    trace.completed_fraction >= 1.0 && trace.infractions.is_empty()
}

/// Mean of ego speed over reference speed (percent) at the first frame
/// reaching each 5% progress checkpoint. The reference is the mean speed of
/// vehicles within 30 m, or the speed limit when there are none or they are
/// (nearly) stopped.
pub fn efficiency(trace: &EpisodeTrace, route: &RouteSpec) -> f64 {
    let mut samples = Vec::new();
    let mut frames = trace.frames.iter();
    let mut current = frames.next();
    for k in 1..=EFFICIENCY_CHECKPOINTS {
        let checkpoint = k as f64 / EFFICIENCY_CHECKPOINTS as f64;
        while let Some(f) = current {
            if f.route_progress + 1e-9 >= checkpoint {
                break;
            }
            current = frames.next();
        }
        let Some(frame) = current else {
            break;
        };
        let speeds: Vec<f64> = frame
            .nearby
            .iter()
            .filter(|a| a.kind == "vehicle" && a.range_m <= REFERENCE_RADIUS)
            .map(|a| a.speed_mps)
            .collect();
        let mean = if speeds.is_empty() {
            0.0
        } else {
            speeds.iter().sum::<f64>() / speeds.len() as f64
        };
        let reference = if mean > MIN_REFERENCE_SPEED { mean } else { route.speed_limit };
        samples.push(frame.ego.speed / reference * 100.0);
    }
    if samples.is_empty() {
        0.0
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    }
}

/// Percentage of disjoint 20-frame windows in which every consecutive-frame
/// steer delta, acceleration and jerk is within bounds; `None` for traces
/// shorter than one window.
pub fn comfort(trace: &EpisodeTrace, thresholds: &ComfortThresholds) -> Option<f64> {
    let windows = trace.frames.len() / COMFORT_WINDOW;
    if windows == 0 {
        return None;
    }
    let smooth = trace
        .frames
        .chunks_exact(COMFORT_WINDOW)
        .filter(|w| {
            let mut prev_accel: Option<f64> = None;
            w.windows(2).all(|pair| {
                let (a, b) = (&pair[0], &pair[1]);
                let accel = (b.ego.speed - a.ego.speed) / b.dt;
                let jerk_ok = match prev_accel {
                    Some(p) => ((accel - p) / b.dt).abs() <= thresholds.max_abs_jerk,
                    None => true,
                };
                prev_accel = Some(accel);
                (b.control.steer() - a.control.steer()).abs() <= thresholds.max_abs_steer_delta
                    && accel.abs() <= thresholds.max_abs_accel
                    && jerk_ok
            })
        })
        .count();
    Some(100.0 * smooth as f64 / windows as f64)
}

/// Unweighted mean over skills of the per-skill success rate; skills without
/// tagged routes are left out. `None` when nothing is tagged.
pub fn skill_score<'a, I>(results: I) -> Option<f64>
where
    I: IntoIterator<Item = (&'a BTreeSet<Skill>, bool)>,
{
    let mut tally: BTreeMap<Skill, (usize, usize)> = BTreeMap::new();
    for (skills, ok) in results {
        for skill in skills {
            let e = tally.entry(*skill).or_default();
            e.0 += ok as usize;
            e.1 += 1;
        }
    }
    if tally.is_empty() {
        return None;
    }
    let rates: Vec<f64> = tally.values().map(|(s, n)| 100.0 * *s as f64 / *n as f64).collect();
    Some(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Metrics for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub route_id: String,
    pub scenario_id: Option<String>,
    pub success: bool,
    pub driving_score: f64,
    pub efficiency: f64,
    pub comfort: Option<f64>,
    pub skill_success: BTreeMap<Skill, bool>,
}

impl MetricsReport {
    pub fn evaluate(trace: &EpisodeTrace, route: &RouteSpec, penalties: &PenaltyTable, thresholds: &ComfortThresholds) -> Self {
        let ok = success(trace);
        Self {
            route_id: trace.route_id.clone(),
            scenario_id: trace.scenario_id.clone(),
            success: ok,
            driving_score: driving_score(trace, penalties),
            efficiency: efficiency(trace, route),
            comfort: comfort(trace, thresholds),
            skill_success: route.skill_tags.iter().map(|s| (*s, ok)).collect(),
        }
    }

    pub fn skill_tags(&self) -> BTreeSet<Skill> {
        self.skill_success.keys().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat { mean, std, n })
    }
}

/// Mean ± std per metric over a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub runs: usize,
    /// Success indicator in percent, so the mean is the Success Rate.
    pub success_rate: Stat,
    pub driving_score: Stat,
    pub efficiency: Stat,
    pub comfort: Option<Stat>,
    pub skill_score: Option<Stat>,
}

/// Treats each report as one sample.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateMetrics, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> { reports.iter().filter_map(f).collect() };
    Ok(AggregateMetrics {
        runs: reports.len(),
        success_rate: Stat::of(&col(&|r| Some(if r.success { 100.0 } else { 0.0 }))).expect("non-empty"),
        driving_score: Stat::of(&col(&|r| Some(r.driving_score))).expect("non-empty"),
        efficiency: Stat::of(&col(&|r| Some(r.efficiency))).expect("non-empty"),
        comfort: Stat::of(&col(&|r| r.comfort)),
        skill_score: Stat::of(&col(&|r| {
            let tags = r.skill_tags();
            skill_score(std::iter::once((&tags, r.success)))
        })),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CommandSet, ControlVector, EgoState, FrameRecord, Infraction, NearbyActor};

    fn frame(i: u64, progress: f64, speed: f64, steer: f64) -> FrameRecord {
        FrameRecord {
            frame_index: i,
            timestamp: i as f64 * 0.1,
            ego: EgoState::new(0.0, 0.0, 0.0, speed),
            route_progress: progress,
            nearby: vec![],
            commands: CommandSet::default(),
            control: ControlVector::new(steer, 0.3, 0.0).unwrap(),
            dt: 0.1,
            failures: vec![],
        }
    }

    fn trace_with(completed: f64, kinds: &[InfractionKind]) -> EpisodeTrace {
        let mut t = EpisodeTrace::new("r", None);
        t.push_frame(frame(0, completed, 1.0, 0.0)).unwrap();
        for k in kinds {
            t.push_infraction(Infraction { kind: *k, frame_index: 0, detail: String::new() });
        }
        t
    }

    #[test]
    fn driving_score_examples() {
        let p = PenaltyTable::default();
        assert_eq!(driving_score(&trace_with(1.0, &[]), &p), 100.0);
        let ds = driving_score(&trace_with(0.8, &[InfractionKind::CollisionVehicle]), &p);
        assert!((ds - 48.0).abs() < 1e-9);
        let two = driving_score(&trace_with(1.0, &[InfractionKind::RedLight, InfractionKind::RedLight]), &p);
        assert!((two - 100.0 * 0.7 * 0.7).abs() < 1e-9);
        let a = driving_score(&trace_with(1.0, &[InfractionKind::RedLight, InfractionKind::Timeout]), &p);
        let b = driving_score(&trace_with(1.0, &[InfractionKind::Timeout, InfractionKind::RedLight]), &p);
        assert_eq!(a, b);
    }

    #[test]
    fn success_examples() {
        assert!(success(&trace_with(1.0, &[])));
        assert!(!success(&trace_with(1.0, &[InfractionKind::BoundaryCrossing])));
        assert!(!success(&trace_with(0.99, &[])));
    }

    #[test]
    fn penalty_table_validation() {
        let mut m: BTreeMap<_, _> = PenaltyTable::default().into();
        assert!(PenaltyTable::new(m.clone()).is_ok());
        m.insert(InfractionKind::Timeout, 0.0);
        assert!(PenaltyTable::new(m.clone()).is_err());
        m.remove(&InfractionKind::Timeout);
        assert_eq!(PenaltyTable::new(m).unwrap_err(), MetricsError::MissingPenalty(InfractionKind::Timeout));
    }

    fn ramp(speed: f64, limit: f64) -> (EpisodeTrace, RouteSpec) {
        let mut t = EpisodeTrace::new("r", None);
        for i in 0..=100 {
            t.push_frame(frame(i, i as f64 / 100.0, speed, 0.0)).unwrap();
        }
        (t, RouteSpec::straight("r", 100.0, 1.75, limit))
    }

    #[test]
    fn efficiency_examples() {
        let (t, r) = ramp(8.0, 8.0);
        assert!((efficiency(&t, &r) - 100.0).abs() < 1e-9);
        let (t, r) = ramp(0.0, 8.0);
        assert_eq!(efficiency(&t, &r), 0.0);
        let (t, r) = ramp(9.6, 8.0);
        assert!((efficiency(&t, &r) - 120.0).abs() < 1e-9);
        let empty = EpisodeTrace::new("r", None);
        assert_eq!(efficiency(&empty, &r), 0.0);
    }

    #[test]
    fn efficiency_uses_nearby_vehicle_speed() {
        let (mut t, r) = ramp(5.0, 8.0);
        for f in &mut t.frames {
            f.nearby = vec![
                NearbyActor { actor_id: "a".into(), kind: "vehicle".into(), range_m: 10.0, speed_mps: 4.0 },
                NearbyActor { actor_id: "b".into(), kind: "vehicle".into(), range_m: 20.0, speed_mps: 6.0 },
                NearbyActor { actor_id: "c".into(), kind: "vehicle".into(), range_m: 40.0, speed_mps: 100.0 },
                NearbyActor { actor_id: "d".into(), kind: "pedestrian".into(), range_m: 5.0, speed_mps: 1.0 },
            ];
        }
        assert!((efficiency(&t, &r) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn efficiency_skips_unreached_checkpoints() {
        let mut t = EpisodeTrace::new("r", None);
        for i in 0..=50 {
            t.push_frame(frame(i, i as f64 / 100.0, 4.0, 0.0)).unwrap();
        }
        let r = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        assert!((efficiency(&t, &r) - 50.0).abs() < 1e-9);
    }

    #[test]
    fn comfort_examples() {
        let th = ComfortThresholds::default();
        let mut t = EpisodeTrace::new("r", None);
        for i in 0..40 {
            t.push_frame(frame(i, 0.0, 5.0, 0.0)).unwrap();
        }
        assert_eq!(comfort(&t, &th), Some(100.0));
        t.frames[25].control = ControlVector::new(0.5, 0.3, 0.0).unwrap();
        assert_eq!(comfort(&t, &th), Some(50.0));
        t.frames.truncate(19);
        assert_eq!(comfort(&t, &th), None);
    }

    #[test]
    fn comfort_ignores_step_across_window_edge() {
        let th = ComfortThresholds::default();
        let mut t = EpisodeTrace::new("r", None);
        for i in 0..40 {
            let steer = if i < 20 { 0.0 } else { 0.5 };
            t.push_frame(frame(i, 0.0, 5.0, steer)).unwrap();
        }
        assert_eq!(comfort(&t, &th), Some(100.0));
    }

    #[test]
    fn skill_score_examples() {
        let all: Vec<(BTreeSet<Skill>, bool)> = Skill::ALL.iter().map(|s| ([*s].into(), true)).collect();
        assert_eq!(skill_score(all.iter().map(|(s, b)| (s, *b))), Some(100.0));
        let one: Vec<(BTreeSet<Skill>, bool)> =
            Skill::ALL.iter().enumerate().map(|(i, s)| ([*s].into(), i == 0)).collect();
        assert_eq!(skill_score(one.iter().map(|(s, b)| (s, *b))), Some(20.0));
        let none: Vec<(BTreeSet<Skill>, bool)> = vec![];
        assert_eq!(skill_score(none.iter().map(|(s, b)| (s, *b))), None);
    }

    #[test]
    fn skill_score_multi_tag_counts_in_both() {
        let rows: Vec<(BTreeSet<Skill>, bool)> = vec![
            ([Skill::Merging, Skill::Overtaking].into(), true),
            ([Skill::Merging].into(), false),
        ];
        // merging 1/2, overtaking 1/1
        assert_eq!(skill_score(rows.iter().map(|(s, b)| (s, *b))), Some(75.0));
    }

    fn report(ds: f64, ok: bool) -> MetricsReport {
        MetricsReport {
            route_id: "r".into(),
            scenario_id: None,
            success: ok,
            driving_score: ds,
            efficiency: ds,
            comfort: None,
            skill_success: BTreeMap::new(),
        }
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[report(1.0, false), report(2.0, false), report(3.0, false)]).unwrap();
        assert_eq!((a.driving_score.mean, a.driving_score.std), (2.0, 1.0));
        assert!(a.comfort.is_none());
        let a = aggregate(&[report(7.0, true)]).unwrap();
        assert_eq!(a.driving_score.std, 0.0);
        let mut ten: Vec<_> = (0..10).map(|_| report(0.0, false)).collect();
        ten[3].success = true;
        assert_eq!(aggregate(&ten).unwrap().success_rate.mean, 10.0);
        assert_eq!(aggregate(&[]).unwrap_err(), MetricsError::Empty);
    }
}
