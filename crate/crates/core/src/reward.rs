//! Weighted automata and the reach-avoid reward built on them.
//!
//! A [`WeightedAutomaton`] reads a sequence of symbols, emits one real weight
//! per symbol along each run, and scores the input as the best valuation over
//! all runs. The reach-avoid task is a two-location deterministic automaton
//! over [`Observation`]s; [`RewardMachine`] evaluates the same weights online,
//! one step at a time, without going through the automaton.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::gridworld::{AgentTrajectory, Cell, GridMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("automaton is stuck in location {location:?} on symbol {symbol} at position {position}")]
    Incomplete {
        location: String,
        position: usize,
        symbol: String,
    },
    #[error("average of an empty weight sequence is undefined")]
    EmptyAverage,
    #[error("discount factor {0} is outside [0, 1]")]
    BadDiscount(f64),
    #[error("reward parameters must satisfy b ≥ c > a·T (got a={a}, b={b}, c={c}, T={horizon})")]
    Ordering { a: f64, b: f64, c: f64, horizon: usize },
    #[error("reward parameter {name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("automaton needs at least one {0} location")]
    MissingLocations(&'static str),
    #[error("location index {0} out of range")]
    BadLocation(usize),
}

/// Aggregates a sequence of weights into a single score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Valuation {
    Sum,
    Avg,
    DiscountedSum(f64),
}

impl Valuation {
    pub fn discounted(gamma: f64) -> Result<Self, RewardError> {
        if (0.0..=1.0).contains(&gamma) {
            Ok(Valuation::DiscountedSum(gamma))
        } else {
            Err(RewardError::BadDiscount(gamma))
        }
    }

    pub fn valuate(&self, weights: &[f64]) -> Result<f64, RewardError> {
        match *self {
            Valuation::Sum => Ok(weights.iter().sum()),
            Valuation::Avg => {
                if weights.is_empty() {
                    Err(RewardError::EmptyAverage)
                } else {
                    Ok(weights.iter().sum::<f64>() / weights.len() as f64)
                }
            }
            Valuation::DiscountedSum(gamma) => {
                if !(0.0..=1.0).contains(&gamma) {
                    return Err(RewardError::BadDiscount(gamma));
                }
                let mut scale = 1.0;
                let mut total = 0.0;
                for w in weights {
                    total += scale * w;
                    scale *= gamma;
                }
                Ok(total)
            }
        }
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Valuation::Sum => f.write_str("sum"),
            Valuation::Avg => f.write_str("avg"),
            Valuation::DiscountedSum(g) => write!(f, "discounted:{g}"),
        }
    }
}

impl std::str::FromStr for Valuation {
    type Err = String;

    /// Accepts `sum`, `avg` and `discounted:<gamma>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sum" => Ok(Valuation::Sum),
            "avg" => Ok(Valuation::Avg),
            other => {
                let gamma = other
                    .strip_prefix("discounted:")
                    .ok_or_else(|| format!("unknown valuation {other:?}"))?;
                let gamma: f64 = gamma
                    .parse()
                    .map_err(|_| format!("bad discount factor {gamma:?}"))?;
                Valuation::discounted(gamma).map_err(|e| e.to_string())
            }
        }
    }
}

pub fn valuate(weights: &[f64], valuation: Valuation) -> Result<f64, RewardError> {
    valuation.valuate(weights)
}

/// A named boolean test on input symbols; transitions are labelled with these.
#[derive(Clone)]
pub struct Predicate<S> {
    name: String,
    test: Arc<dyn Fn(&S) -> bool + Send + Sync>,
}

impl<S> Predicate<S> {
    pub fn new(name: impl Into<String>, test: impl Fn(&S) -> bool + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            test: Arc::new(test),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn holds(&self, symbol: &S) -> bool {
        (self.test)(symbol)
    }
}

impl<S> fmt::Debug for Predicate<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Predicate").field(&self.name).finish()
    }
}

#[derive(Clone, Debug)]
pub struct Transition<S> {
    pub from: usize,
    pub guard: Predicate<S>,
    pub to: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    /// Locations visited, one more than the input length.
    pub locations: Vec<usize>,
    /// One weight per input symbol.
    pub weights: Vec<f64>,
    pub accepting: bool,
}

/// Finite automaton whose transitions carry real weights.
#[derive(Clone, Debug)]
pub struct WeightedAutomaton<S> {
    locations: Vec<String>,
    initial: Vec<usize>,
    accepting: Vec<bool>,
    transitions: Vec<Transition<S>>,
}

impl<S: fmt::Debug> WeightedAutomaton<S> {
    pub fn new(
        locations: Vec<String>,
        initial: Vec<usize>,
        accepting: Vec<usize>,
    ) -> Result<Self, RewardError> {
        if initial.is_empty() {
            return Err(RewardError::MissingLocations("initial"));
        }
        if accepting.is_empty() {
            return Err(RewardError::MissingLocations("final"));
        }
        let n = locations.len();
        if let Some(&bad) = initial.iter().chain(&accepting).find(|&&q| q >= n) {
            return Err(RewardError::BadLocation(bad));
        }
        let mut flags = vec![false; n];
        for q in accepting {
            flags[q] = true;
        }
        Ok(Self {
            locations,
            initial,
            accepting: flags,
            transitions: Vec::new(),
        })
    }

    pub fn add_transition(
        &mut self,
        from: usize,
        guard: Predicate<S>,
        to: usize,
        weight: f64,
    ) -> Result<(), RewardError> {
        for q in [from, to] {
            if q >= self.locations.len() {
                return Err(RewardError::BadLocation(q));
            }
        }
        self.transitions.push(Transition {
            from,
            guard,
            to,
            weight,
        });
        Ok(())
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn initial(&self) -> &[usize] {
        &self.initial
    }

    pub fn is_accepting(&self, location: usize) -> bool {
        self.accepting[location]
    }

    pub fn transitions(&self) -> &[Transition<S>] {
        &self.transitions
    }

    /// Successor locations of `location` on `symbol`, with the weight of each
    /// edge.
    pub fn successors<'a>(
        &'a self,
        location: usize,
        symbol: &'a S,
    ) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.transitions
            .iter()
            .filter(move |t| t.from == location && t.guard.holds(symbol))
            .map(|t| (t.to, t.weight))
    }

    /// Every location has at least one successor on every symbol of `alphabet`.
    pub fn is_complete(&self, alphabet: &[S]) -> bool {
        (0..self.locations.len())
            .all(|q| alphabet.iter().all(|s| self.successors(q, s).next().is_some()))
    }

    /// Every location has exactly one successor on every symbol of `alphabet`.
    pub fn is_deterministic(&self, alphabet: &[S]) -> bool {
        (0..self.locations.len())
            .all(|q| alphabet.iter().all(|s| self.successors(q, s).count() == 1))
    }

    /// All runs on `input` from every initial location.
    pub fn runs(&self, input: &[S]) -> Result<Vec<RunResult>, RewardError> {
        let mut partial: Vec<(Vec<usize>, Vec<f64>)> = self
            .initial
            .iter()
            .map(|&q| {
                let mut locs = Vec::with_capacity(input.len() + 1);
                locs.push(q);
                (locs, Vec::with_capacity(input.len()))
            })
            .collect();
        for (position, symbol) in input.iter().enumerate() {
            let mut next = Vec::with_capacity(partial.len());
            for (locs, weights) in partial {
                let here = *locs.last().expect("runs start non-empty");
                let mut any = false;
                for (to, w) in self.successors(here, symbol) {
                    any = true;
                    let mut l = locs.clone();
                    l.push(to);
                    let mut ws = weights.clone();
                    ws.push(w);
                    next.push((l, ws));
                }
                if !any {
                    return Err(RewardError::Incomplete {
                        location: self.locations[here].clone(),
                        position,
                        symbol: format!("{symbol:?}"),
                    });
                }
            }
            partial = next;
        }
        Ok(partial
            .into_iter()
            .map(|(locations, weights)| {
                let accepting = self.accepting[*locations.last().expect("non-empty")];
                RunResult {
                    locations,
                    weights,
                    accepting,
                }
            })
            .collect())
    }

    /// Best valuation over all runs induced by `input`.
    pub fn trajectory_weight(&self, input: &[S], valuation: Valuation) -> Result<f64, RewardError> {
        let runs = self.runs(input)?;
        let mut best: Option<f64> = None;
        for run in &runs {
            let v = valuation.valuate(&run.weights)?;
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
        best.ok_or_else(|| RewardError::Incomplete {
            location: String::new(),
            position: 0,
            symbol: "<no run>".into(),
        })
    }
}

/// What the reward cares about in one time step of one agent: whether it
/// stands in a goal and whether the step it takes collides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    pub in_goal: bool,
    pub collision: bool,
}

impl Observation {
    pub const ALL: [Observation; 4] = [
        Observation::new(false, false),
        Observation::new(false, true),
        Observation::new(true, false),
        Observation::new(true, true),
    ];

    pub const fn new(in_goal: bool, collision: bool) -> Self {
        Self { in_goal, collision }
    }
}

/// Reach-avoid constants: step penalty `a`, goal reward `b`, collision
/// penalty `c`, horizon `T`, discount `gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardParams {
    pub step_penalty: f64,
    pub goal_reward: f64,
    pub collision_penalty: f64,
    pub horizon: usize,
    pub gamma: f64,
}

impl RewardParams {
    /// Validated constructor; requires `b ≥ c > a·T`.
    pub fn new(
        step_penalty: f64,
        goal_reward: f64,
        collision_penalty: f64,
        horizon: usize,
        gamma: f64,
    ) -> Result<Self, RewardError> {
        for (name, value) in [
            ("a", step_penalty),
            ("b", goal_reward),
            ("c", collision_penalty),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(RewardError::NonPositive { name, value });
            }
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(RewardError::BadDiscount(gamma));
        }
        if !(goal_reward >= collision_penalty && collision_penalty > step_penalty * horizon as f64) {
            return Err(RewardError::Ordering {
                a: step_penalty,
                b: goal_reward,
                c: collision_penalty,
                horizon,
            });
        }
        Ok(Self {
            step_penalty,
            goal_reward,
            collision_penalty,
            horizon,
            gamma,
        })
    }

    /// `a = 1`, `b = c = 10·T`, `gamma = 0.99`.
    pub fn for_horizon(horizon: usize) -> Self {
        let big = 10.0 * horizon.max(1) as f64;
        Self::new(1.0, big, big, horizon, 0.99).expect("defaults satisfy the ordering")
    }
}

pub const PRE_GOAL: usize = 0;
pub const POST_GOAL: usize = 1;

/// The deterministic two-location automaton for "reach a goal, avoid
/// collisions". Location 0 remembers that no goal has been seen yet.
pub fn reach_avoid_automaton(params: &RewardParams) -> WeightedAutomaton<Observation> {
    let a = params.step_penalty;
    let b = params.goal_reward;
    let c = params.collision_penalty;
    let mut wa = WeightedAutomaton::new(
        vec!["pre_goal".to_owned(), "post_goal".to_owned()],
        vec![PRE_GOAL],
        vec![POST_GOAL],
    )
    .expect("static layout is valid");
    let edges: [(usize, &str, fn(&Observation) -> bool, usize, f64); 6] = [
        (PRE_GOAL, "!goal & !collision", |o| !o.in_goal && !o.collision, PRE_GOAL, -a),
        (PRE_GOAL, "!goal & collision", |o| !o.in_goal && o.collision, PRE_GOAL, -a - c),
        (PRE_GOAL, "goal & !collision", |o| o.in_goal && !o.collision, POST_GOAL, b),
        (PRE_GOAL, "goal & collision", |o| o.in_goal && o.collision, POST_GOAL, b - c),
        (POST_GOAL, "!collision", |o| !o.collision, POST_GOAL, 0.0),
        (POST_GOAL, "collision", |o| o.collision, POST_GOAL, -c),
    ];
    for (from, name, test, to, w) in edges {
        wa.add_transition(from, Predicate::new(name, test), to, w)
            .expect("static edges are valid");
    }
    wa
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MachineState {
    PreGoal,
    PostGoal,
}

/// Online evaluation of the reach-avoid reward, one observation at a time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardMachine {
    params: RewardParams,
}

impl RewardMachine {
    pub fn new(params: RewardParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &RewardParams {
        &self.params
    }

    pub fn initial(&self) -> MachineState {
        MachineState::PreGoal
    }

    /// Goal term plus collision term for one observation.
    pub fn step_reward(&self, state: MachineState, obs: Observation) -> (MachineState, f64) {
        let p = &self.params;
        let collision = if obs.collision { -p.collision_penalty } else { 0.0 };
        match state {
            MachineState::PostGoal => (MachineState::PostGoal, collision),
            MachineState::PreGoal if obs.in_goal => (MachineState::PostGoal, p.goal_reward + collision),
            MachineState::PreGoal => (MachineState::PreGoal, -p.step_penalty + collision),
        }
    }

    pub fn weights(&self, observations: &[Observation]) -> Vec<f64> {
        let mut state = self.initial();
        observations
            .iter()
            .map(|&o| {
                let (next, w) = self.step_reward(state, o);
                state = next;
                w
            })
            .collect()
    }
}

/// Observation sequence of one agent: one entry per action taken (standing
/// outside the goal), plus the arrival entry if the agent reached a goal.
pub fn observations(traj: &AgentTrajectory, map: &GridMap) -> Vec<Observation> {
    let mut out: Vec<Observation> = traj
        .actions
        .iter()
        .zip(&traj.events)
        .zip(&traj.cells)
        .map(|((_, e), &c)| Observation::new(map.is_goal(c), e.is_collision()))
        .collect();
    if let Some(t) = traj.reached_at {
        out.push(Observation::new(map.is_goal(traj.cells[t]), false));
    }
    out
}

/// Time of arrival: first index whose cell is a goal.
pub fn toa(cells: &[Cell], map: &GridMap) -> Option<usize> {
    cells.iter().position(|&c| map.is_goal(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::parse_map;

    fn branching() -> WeightedAutomaton<u8> {
        let mut wa = WeightedAutomaton::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0],
            vec![2],
        )
        .unwrap();
        wa.add_transition(0, Predicate::new("any", |_| true), 1, 2.0).unwrap();
        wa.add_transition(0, Predicate::new("any", |_| true), 2, 5.0).unwrap();
        wa.add_transition(1, Predicate::new("any", |_| true), 1, 0.0).unwrap();
        wa.add_transition(2, Predicate::new("one", |s| *s == 1), 2, 1.0).unwrap();
        wa
    }

    #[test]
    fn valuations() {
        let w = [1.0, 1.0, 1.0];
        assert_eq!(valuate(&w, Valuation::Sum).unwrap(), 3.0);
        assert_eq!(valuate(&w, Valuation::DiscountedSum(0.5)).unwrap(), 1.75);
        let avg = valuate(&[-1.0, -1.0, 100.0], Valuation::Avg).unwrap();
        assert!((avg - 98.0 / 3.0).abs() < 1e-12);
        assert_eq!(valuate(&[], Valuation::Sum).unwrap(), 0.0);
        assert_eq!(valuate(&[], Valuation::DiscountedSum(0.9)).unwrap(), 0.0);
        assert_eq!(valuate(&[], Valuation::Avg), Err(RewardError::EmptyAverage));
        assert!(Valuation::discounted(1.5).is_err());
    }

    #[test]
    fn valuation_text_round_trip() {
        for v in [Valuation::Sum, Valuation::Avg, Valuation::DiscountedSum(0.99)] {
            assert_eq!(v.to_string().parse::<Valuation>().unwrap(), v);
        }
        assert!("discounted:2".parse::<Valuation>().is_err());
    }

    #[test]
    fn nondeterministic_runs_enumerated() {
        let wa = branching();
        let runs = wa.runs(&[0]).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].locations, vec![0, 1]);
        assert_eq!(runs[1].locations, vec![0, 2]);
        assert!(!runs[0].accepting && runs[1].accepting);
        assert_eq!(wa.trajectory_weight(&[0], Valuation::Sum).unwrap(), 5.0);
        assert!(!wa.is_deterministic(&[0, 1]));
        assert!(!wa.is_complete(&[0, 1]));
    }

    #[test]
    fn stuck_run_names_location() {
        let err = branching().runs(&[0, 0]).unwrap_err();
        assert_eq!(
            err,
            RewardError::Incomplete {
                location: "c".into(),
                position: 1,
                symbol: "0".into()
            }
        );
    }

    #[test]
    fn empty_input_run() {
        let params = RewardParams::for_horizon(5);
        let wa = reach_avoid_automaton(&params);
        let runs = wa.runs(&[]).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].locations, vec![PRE_GOAL]);
        assert!(runs[0].weights.is_empty());
        assert!(!runs[0].accepting);
    }

    #[test]
    fn reach_avoid_is_deterministic_and_complete() {
        let wa = reach_avoid_automaton(&RewardParams::for_horizon(20));
        assert!(wa.is_complete(&Observation::ALL));
        assert!(wa.is_deterministic(&Observation::ALL));
    }

    #[test]
    fn params_enforce_ordering() {
        assert!(RewardParams::new(1.0, 10.0, 10.0, 9, 0.9).is_ok());
        let err = RewardParams::new(1.0, 10.0, 10.0, 10, 0.9).unwrap_err();
        assert!(err.to_string().contains("b ≥ c > a·T"));
        assert!(RewardParams::new(1.0, 5.0, 10.0, 2, 0.9).is_err());
        assert!(RewardParams::new(0.0, 5.0, 5.0, 2, 0.9).is_err());
        let d = RewardParams::for_horizon(40);
        assert_eq!((d.step_penalty, d.goal_reward, d.collision_penalty), (1.0, 400.0, 400.0));
    }

    #[test]
    fn hand_traced_reach_avoid_weights() {
        let p = RewardParams::new(1.0, 50.0, 20.0, 10, 0.99).unwrap();
        let wa = reach_avoid_automaton(&p);
        let free = Observation::new(false, false);
        let hit = Observation::new(false, true);
        let goal = Observation::new(true, false);

        // four steps then the goal
        let w = wa.trajectory_weight(&[free, free, free, free, goal], Valuation::Sum).unwrap();
        assert_eq!(w, 50.0 - 4.0);
        // never arrives within T
        let w = wa.trajectory_weight(&[free; 10], Valuation::Sum).unwrap();
        assert_eq!(w, -10.0);
        // starts on the goal
        assert_eq!(wa.trajectory_weight(&[goal], Valuation::Sum).unwrap(), 50.0);
        // collision on the step taken at t = 1, goal at t = 3
        let w = wa.trajectory_weight(&[free, hit, free, goal], Valuation::Sum).unwrap();
        assert_eq!(w, 50.0 - 20.0 - 3.0);
    }

    #[test]
    fn step_reward_cases() {
        let p = RewardParams::new(1.0, 50.0, 20.0, 10, 0.99).unwrap();
        let m = RewardMachine::new(p);
        use MachineState::*;
        assert_eq!(m.step_reward(PreGoal, Observation::new(false, false)), (PreGoal, -1.0));
        assert_eq!(m.step_reward(PreGoal, Observation::new(true, false)), (PostGoal, 50.0));
        assert_eq!(m.step_reward(PreGoal, Observation::new(true, true)), (PostGoal, 30.0));
        assert_eq!(m.step_reward(PreGoal, Observation::new(false, true)), (PreGoal, -21.0));
        assert_eq!(m.step_reward(PostGoal, Observation::new(false, false)), (PostGoal, 0.0));
        assert_eq!(m.step_reward(PostGoal, Observation::new(true, false)), (PostGoal, 0.0));
        assert_eq!(m.step_reward(PostGoal, Observation::new(true, true)), (PostGoal, -20.0));
    }

    #[test]
    fn toa_is_first_arrival() {
        let map = parse_map("..G.\n....").unwrap();
        let c = |x, y| Cell::new(x, y);
        let path = [c(0, 0), c(1, 0), c(1, 1), c(2, 0), c(3, 0)];
        assert_eq!(toa(&path, &map), Some(3));
        assert_eq!(toa(&path[..3], &map), None);
        assert_eq!(toa(&[c(2, 0)], &map), Some(0));
    }
}
