//! Scenario-driven event log simulator.
//!
//! A case starts with `first_activity`. When an activity completes, the branch declared after it
//! (if any) picks an option whose activities all start at that completion instant, so an option
//! with several activities runs them concurrently. An activity without a branch ends its thread.
//! Branches either give exact `count`s, dealt out over the arriving cases by a seeded shuffle, or
//! `probability` weights sampled per arrival.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sax_core::eventlog::{Event, EventLog, Trace, CASE_START_KEY};
use sax_core::value::{Attributes, Timestamp, Value};

const PARKING_SPEC: &str = include_str!("../resources/parking_scenario.json");

/// Guard against probabilistic loops that never terminate.
const MAX_EVENTS_PER_CASE: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error("inconsistent scenario: {0}")]
    InconsistentSpec(String),
}

fn inconsistent<T>(msg: impl Into<String>) -> Result<T, SimulationError> {
    Err(SimulationError::InconsistentSpec(msg.into()))
}

/// Duration in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Dist {
    Constant { value: f64 },
    Uniform { min: f64, max: f64 },
    /// `offset` plus an exponential with the given mean.
    Exponential {
        mean: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Truncated at zero.
    Normal { mean: f64, sd: f64 },
}

impl Dist {
    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Uniform { min, max } => (min + max) / 2.0,
            Dist::Exponential { mean, offset } => offset + mean,
            Dist::Normal { mean, .. } => mean,
        }
    }

    fn check(&self, what: &str) -> Result<(), SimulationError> {
        let ok = match *self {
            Dist::Constant { value } => value >= 0.0 && value.is_finite(),
            Dist::Uniform { min, max } => min >= 0.0 && min <= max && max.is_finite(),
            Dist::Exponential { mean, offset } => mean > 0.0 && mean.is_finite() && offset >= 0.0 && offset.is_finite(),
            Dist::Normal { mean, sd } => mean.is_finite() && sd >= 0.0 && sd.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            inconsistent(format!("invalid distribution for {what}: {self:?}"))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Uniform { min, max } => {
                if min == max {
                    min
                } else {
                    rng.random_range(min..max)
                }
            }
            Dist::Exponential { mean, offset } => offset + Exp::new(1.0 / mean).expect("checked").sample(rng),
            Dist::Normal { mean, sd } => Normal::new(mean, sd).expect("checked").sample(rng).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySpec {
    pub name: String,
    pub duration_minutes: Dist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchOption {
    /// Activities started in parallel; empty ends the thread.
    #[serde(default)]
    pub then: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub after: String,
    pub options: Vec<BranchOption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    Categorical {
        values: Vec<String>,
        #[serde(default)]
        weights: Vec<f64>,
    },
    IntRange { min: i64, max: i64 },
    Uniform { min: f64, max: f64 },
}

/// Shift of an activity's duration (minutes) driven by a sampled attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub activity: String,
    /// Minutes per unit of a numeric attribute.
    #[serde(default)]
    pub per_unit: f64,
    /// Minutes per categorical value.
    #[serde(default)]
    pub by_value: BTreeMap<String, f64>,
}

/// Attribute sampled once per case. It is recorded on the first event of `on`, or on the case
/// when `on` is absent, and may shift durations whether or not it gets recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGenerator {
    pub key: String,
    #[serde(default)]
    pub on: Option<String>,
    pub sampler: Sampler,
    #[serde(default)]
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub cases: u64,
    #[serde(default)]
    pub seed: u64,
    pub start_time: String,
    pub interarrival_minutes: Dist,
    pub first_activity: String,
    pub activities: Vec<ActivitySpec>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub attribute_generators: Vec<AttributeGenerator>,
}

/// Built-in parking-fines scenario.
pub fn parking_spec(seed: u64) -> ScenarioSpec {
    let mut spec: ScenarioSpec = serde_json::from_str(PARKING_SPEC).expect("bundled scenario parses");
    spec.seed = seed;
    spec
}

impl ScenarioSpec {
    pub fn parse(text: &str) -> Result<ScenarioSpec, SimulationError> {
        serde_json::from_str(text).map_err(|e| SimulationError::InconsistentSpec(e.to_string()))
    }

    fn activity(&self, name: &str) -> Option<&ActivitySpec> {
        self.activities.iter().find(|a| a.name == name)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.cases == 0 {
            return inconsistent("no cases");
        }
        if Timestamp::parse(&self.start_time).is_none() {
            return inconsistent(format!("unparseable start_time {:?}", self.start_time));
        }
        self.interarrival_minutes.check("interarrival")?;
        let mut names = BTreeSet::new();
        for a in &self.activities {
            if !names.insert(a.name.as_str()) {
                return inconsistent(format!("activity {:?} declared twice", a.name));
            }
            a.duration_minutes.check(&a.name)?;
        }
        let known = |n: &str, what: &str| {
            if names.contains(n) {
                Ok(())
            } else {
                inconsistent(format!("{what} names unknown activity {n:?}"))
            }
        };
        known(&self.first_activity, "first_activity")?;
        let mut afters = BTreeSet::new();
        for b in &self.branches {
            known(&b.after, "branch")?;
            if !afters.insert(b.after.as_str()) {
                return inconsistent(format!("two branches after {:?}", b.after));
            }
            if b.options.is_empty() {
                return inconsistent(format!("branch after {:?} has no options", b.after));
            }
            for o in &b.options {
                for n in &o.then {
                    known(n, "branch option")?;
                }
            }
            let counted = b.options.iter().filter(|o| o.count.is_some()).count();
            let weighted = b.options.iter().filter(|o| o.probability.is_some()).count();
            if counted == b.options.len() && weighted == 0 {
                continue;
            }
            if weighted != b.options.len() || counted != 0 {
                return inconsistent(format!("branch after {:?} mixes counts and probabilities", b.after));
            }
            let ps: Vec<f64> = b.options.iter().map(|o| o.probability.unwrap()).collect();
            if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return inconsistent(format!("probabilities after {:?} do not sum to 1", b.after));
            }
        }
        for g in &self.attribute_generators {
            if let Some(on) = &g.on {
                known(on, "attribute generator")?;
            }
            for e in &g.effects {
                known(&e.activity, "effect")?;
            }
            let ok = match &g.sampler {
                Sampler::Categorical { values, weights } => {
                    !values.is_empty()
                        && (weights.is_empty()
                            || (weights.len() == values.len() && weights.iter().all(|w| *w >= 0.0) && weights.iter().sum::<f64>() > 0.0))
                }
                Sampler::IntRange { min, max } => min <= max,
                Sampler::Uniform { min, max } => min <= max,
            };
            if !ok {
                return inconsistent(format!("invalid sampler for {:?}", g.key));
            }
        }
        self.arrivals().map(|_| ())
    }

    /// Number of arrivals at every counted branch, propagated from the case count.
    fn arrivals(&self) -> Result<BTreeMap<String, u64>, SimulationError> {
        let branch: BTreeMap<&str, &Branch> = self.branches.iter().map(|b| (b.after.as_str(), b)).collect();
        let mut exact: BTreeMap<String, u64> = BTreeMap::new();
        // activities whose arrival count is unknown (reachable through a probabilistic branch)
        let mut fuzzy: BTreeSet<String> = BTreeSet::new();
        let mut queue = VecDeque::from([(self.first_activity.clone(), self.cases, false)]);
        let mut steps = 0usize;
        while let Some((act, n, fz)) = queue.pop_front() {
            steps += 1;
            if steps > 10_000 {
                return inconsistent("branch structure does not terminate under exact counts");
            }
            if fz {
                if !fuzzy.insert(act.clone()) {
                    continue;
                }
            } else {
                *exact.entry(act.clone()).or_default() += n;
            }
            let Some(b) = branch.get(act.as_str()) else { continue };
            let counted = b.options.iter().all(|o| o.count.is_some());
            for o in &b.options {
                for next in &o.then {
                    if counted && !fz {
                        queue.push_back((next.clone(), o.count.unwrap(), false));
                    } else {
                        queue.push_back((next.clone(), 0, true));
                    }
                }
            }
        }
        for b in &self.branches {
            if !b.options.iter().all(|o| o.count.is_some()) {
                continue;
            }
            if fuzzy.contains(&b.after) {
                return inconsistent(format!("counts after {:?} need a fixed number of arrivals", b.after));
            }
            let total: u64 = b.options.iter().map(|o| o.count.unwrap()).sum();
            let arriving = exact.get(&b.after).copied().unwrap_or(0);
            if total != arriving {
                return inconsistent(format!("counts after {:?} sum to {total} but {arriving} cases arrive", b.after));
            }
        }
        Ok(exact)
    }
}

fn sample_attr(s: &Sampler, rng: &mut ChaCha8Rng) -> Value {
    match s {
        Sampler::Categorical { values, weights } => {
            let i = if weights.is_empty() {
                rng.random_range(0..values.len())
            } else {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random_range(0.0..total);
                let mut pick = values.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            };
            Value::Str(values[i].clone())
        }
        Sampler::IntRange { min, max } => Value::Int(rng.random_range(*min..=*max)),
        Sampler::Uniform { min, max } => Value::Float(if min == max { *min } else { rng.random_range(*min..*max) }),
    }
}

fn effect_minutes(e: &Effect, v: &Value) -> f64 {
    let categorical = e.by_value.get(&v.render()).copied().unwrap_or(0.0);
    categorical + v.as_f64().map_or(0.0, |x| x * e.per_unit)
}

/// Runs the scenario. Deterministic given `spec.seed`.
pub fn simulate(spec: &ScenarioSpec) -> Result<EventLog, SimulationError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let branch: BTreeMap<&str, &Branch> = spec.branches.iter().map(|b| (b.after.as_str(), b)).collect();
    let mut decks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for b in &spec.branches {
        if b.options.iter().all(|o| o.count.is_some()) {
            let mut deck: Vec<usize> =
                b.options.iter().enumerate().flat_map(|(i, o)| std::iter::repeat_n(i, o.count.unwrap() as usize)).collect();
            deck.shuffle(&mut rng);
            decks.insert(b.after.as_str(), deck);
        }
    }

    let width = spec.cases.to_string().len().max(4);
    let mut clock = Timestamp::parse(&spec.start_time).expect("validated").millis() as f64;
    let minute = 60_000.0;
    let mut traces = Vec::with_capacity(spec.cases as usize);
    for c in 0..spec.cases {
        if c > 0 {
            clock += spec.interarrival_minutes.sample(&mut rng) * minute;
        }
        let case_id = format!("case-{c:0width$}");
        let sampled: Vec<(&AttributeGenerator, Value)> =
            spec.attribute_generators.iter().map(|g| (g, sample_attr(&g.sampler, &mut rng))).collect();
        let mut case_attrs = Attributes::new();
        case_attrs.insert(CASE_START_KEY.into(), Value::Instant(Timestamp::from_millis(clock.round() as i64)));
        for (g, v) in &sampled {
            if g.on.is_none() {
                case_attrs.insert(g.key.clone(), v.clone());
            }
        }

        let mut events: Vec<Event> = Vec::new();
        let mut queue = VecDeque::from([(spec.first_activity.as_str(), clock)]);
        while let Some((act, start)) = queue.pop_front() {
            if events.len() >= MAX_EVENTS_PER_CASE {
                log::warn!("{case_id}: event cap reached, case truncated");
                break;
            }
            let a = spec.activity(act).expect("validated");
            let shift: f64 = sampled
                .iter()
                .flat_map(|(g, v)| g.effects.iter().filter(|e| e.activity == act).map(move |e| effect_minutes(e, v)))
                .sum();
            let minutes = (a.duration_minutes.sample(&mut rng) + shift).max(0.0);
            let done = start + minutes * minute;
            let mut ev = Event::new(
                format!("{case_id}-{:03}", events.len()),
                case_id.clone(),
                act,
                Timestamp::from_millis(done.round() as i64),
            );
            for (g, v) in &sampled {
                if g.on.as_deref() == Some(act) && !events.iter().any(|e| e.activity == act) {
                    ev.attributes.insert(g.key.clone(), v.clone());
                }
            }
            events.push(ev);
            let Some(b) = branch.get(act) else { continue };
            let pick = match decks.get_mut(act) {
                Some(deck) => deck.pop().expect("arrivals validated against counts"),
                None => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = b.options.len() - 1;
                    for (i, o) in b.options.iter().enumerate() {
                        acc += o.probability.unwrap();
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
            for next in &b.options[pick].then {
                queue.push_back((next.as_str(), done));
            }
        }
        traces.push(Trace::new(case_id, events, case_attrs));
    }
    EventLog::new(traces).map_err(|e| SimulationError::InconsistentSpec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(cases: u64) -> ScenarioSpec {
        ScenarioSpec {
            name: "one".into(),
            cases,
            seed: 1,
            start_time: "2024-01-01T00:00:00Z".into(),
            interarrival_minutes: Dist::Constant { value: 10.0 },
            first_activity: "A".into(),
            activities: vec![ActivitySpec { name: "A".into(), duration_minutes: Dist::Uniform { min: 1.0, max: 2.0 } }],
            branches: vec![],
            attribute_generators: vec![],
        }
    }

    #[test]
    fn single_activity() {
        let log = simulate(&single(5)).unwrap();
        assert_eq!(log.num_cases(), 5);
        assert!(log.traces.values().all(|t| t.events.len() == 1));
    }

    #[test]
    fn deterministic() {
        assert_eq!(simulate(&parking_spec(3)).unwrap(), simulate(&parking_spec(3)).unwrap());
        assert_ne!(simulate(&parking_spec(3)).unwrap(), simulate(&parking_spec(4)).unwrap());
    }

    #[test]
    fn count_mismatch_rejected() {
        let mut spec = parking_spec(0);
        spec.branches[0].options[0].count = Some(108);
        assert!(matches!(spec.validate(), Err(SimulationError::InconsistentSpec(m)) if m.contains("sum to")));
        let mut spec = parking_spec(0);
        spec.branches[1].options[0].count = None;
        spec.branches[1].options[0].probability = Some(0.5);
        assert!(spec.validate().is_err());
        let mut spec = single(1);
        spec.first_activity = "B".into();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn counts_behind_probabilities_rejected() {
        let mut spec = single(10);
        spec.activities.push(ActivitySpec { name: "B".into(), duration_minutes: Dist::Constant { value: 1.0 } });
        spec.activities.push(ActivitySpec { name: "C".into(), duration_minutes: Dist::Constant { value: 1.0 } });
        spec.branches = vec![
            Branch {
                after: "A".into(),
                options: vec![
                    BranchOption { then: vec!["B".into()], count: None, probability: Some(0.5) },
                    BranchOption { then: vec![], count: None, probability: Some(0.5) },
                ],
            },
            Branch { after: "B".into(), options: vec![BranchOption { then: vec!["C".into()], count: Some(5), probability: None }] },
        ];
        assert!(spec.validate().is_err());
        spec.branches.pop();
        let log = simulate(&spec).unwrap();
        assert!(log.traces.values().any(|t| t.events.len() == 2));
        assert!(log.traces.values().any(|t| t.events.len() == 1));
    }

    #[test]
    fn parking_variants() {
        let log = simulate(&parking_spec(0)).unwrap();
        assert_eq!(log.num_cases(), 1000);
        assert_eq!(log.activity_universe.len(), 5);
        let counts: Vec<usize> = log.variants().iter().map(|(_, n)| *n).collect();
        assert_eq!(counts, vec![644, 249, 107]);
        for t in log.traces.values().filter(|t| t.contains_activity("call a tow truck")) {
            let at = |a: &str| t.events.iter().find(|e| e.activity == a).unwrap().timestamp;
            assert!(at("call a tow truck") > at("submit extended fine"));
        }
    }

    #[test]
    fn duration_means_match_spec() {
        let spec = parking_spec(11);
        let log = simulate(&spec).unwrap();
        let verify = spec.activity("verify disabled parking permit").unwrap().duration_minutes.mean();
        let observed: Vec<f64> = log
            .traces
            .values()
            .map(|t| t.events[0].timestamp.seconds_since(t.start().unwrap()) / 60.0)
            .collect();
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        assert!((mean - verify).abs() / verify < 0.05, "{mean} vs {verify}");
        let fine = spec.activity("submit fine").unwrap().duration_minutes.mean();
        let gaps: Vec<f64> = log
            .traces
            .values()
            .filter(|t| t.contains_activity("submit fine"))
            .map(|t| t.events[2].timestamp.seconds_since(t.events[1].timestamp) / 60.0)
            .collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - fine).abs() / fine < 0.05, "{mean} vs {fine}");
    }
}
