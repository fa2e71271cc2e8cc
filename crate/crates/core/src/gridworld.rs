//! Grid environment shared by every learner and planner.
//!
//! The world is a rectangular grid of cells. Agents move in the four cardinal
//! directions or stay put. Moves off the grid or into an obstacle are blocked.
//! Two agents that would share a cell, or that would exchange cells, are both
//! sent back to where they started the step. An agent that enters a goal cell
//! despawns: it stops acting and no longer takes part in collision checks.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

/// A grid coordinate. `x` is the column, `y` the row (row 0 is the top line
/// of the text format).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// Column and row offset of the move.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stay => "stay",
        }
    }

    /// The action leading from `from` to the 4-adjacent (or equal) cell `to`.
    pub fn between(from: Cell, to: Cell) -> Option<Action> {
        let dx = to.x as isize - from.x as isize;
        let dy = to.y as isize - from.y as isize;
        Self::ALL.into_iter().find(|a| a.delta() == (dx, dy))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("map is empty")]
    Empty,
    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {col}: unknown character {ch:?}")]
    UnknownChar { row: usize, col: usize, ch: char },
    #[error("map has no goal cell")]
    NoGoals,
    #[error("map has no start cell")]
    NoStarts,
    #[error("cell {0} lies outside the grid")]
    OutOfBounds(Cell),
    #[error("cell {0} is both an obstacle and a goal")]
    ObstacleGoal(Cell),
    #[error("cell {0} is both an obstacle and a start")]
    ObstacleStart(Cell),
}

/// Static description of the world: obstacles, goals and candidate starts.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    obstacle: Vec<bool>,
    goal: Vec<bool>,
    goals: Vec<Cell>,
    starts: Vec<Cell>,
    explicit_starts: bool,
}

impl GridMap {
    /// Builds a map. When `starts` is `None` every free non-goal cell is a
    /// start candidate; if there is none, the goal cells are used instead.
    pub fn new(
        width: usize,
        height: usize,
        obstacles: impl IntoIterator<Item = Cell>,
        goals: impl IntoIterator<Item = Cell>,
        starts: Option<Vec<Cell>>,
    ) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::Empty);
        }
        let n = width * height;
        let mut obstacle = vec![false; n];
        let mut goal = vec![false; n];
        let check = |c: Cell| {
            if c.x < width && c.y < height {
                Ok(c.y * width + c.x)
            } else {
                Err(MapError::OutOfBounds(c))
            }
        };
        for c in obstacles {
            obstacle[check(c)?] = true;
        }
        for c in goals {
            let i = check(c)?;
            if obstacle[i] {
                return Err(MapError::ObstacleGoal(c));
            }
            goal[i] = true;
        }
        let goals: Vec<Cell> = (0..n)
            .filter(|&i| goal[i])
            .map(|i| Cell::new(i % width, i / width))
            .collect();
        if goals.is_empty() {
            return Err(MapError::NoGoals);
        }
        let explicit_starts = starts.is_some();
        let starts = match starts {
            Some(list) => {
                let mut seen = vec![false; n];
                let mut out = Vec::with_capacity(list.len());
                for c in list {
                    let i = check(c)?;
                    if obstacle[i] {
                        return Err(MapError::ObstacleStart(c));
                    }
                    if !seen[i] {
                        seen[i] = true;
                        out.push(c);
                    }
                }
                out.sort_by_key(|c| (c.y, c.x));
                out
            }
            None => {
                let free: Vec<Cell> = (0..n)
                    .filter(|&i| !obstacle[i] && !goal[i])
                    .map(|i| Cell::new(i % width, i / width))
                    .collect();
                if free.is_empty() {
                    goals.clone()
                } else {
                    free
                }
            }
        };
        if starts.is_empty() {
            return Err(MapError::NoStarts);
        }
        Ok(Self {
            width,
            height,
            obstacle,
            goal,
            goals,
            starts,
            explicit_starts,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Row-major index of a cell. Panics if the cell is outside the grid.
    pub fn index(&self, cell: Cell) -> usize {
        assert!(cell.x < self.width && cell.y < self.height, "{cell} outside grid");
        cell.y * self.width + cell.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.obstacle[self.index(cell)]
    }

    pub fn is_goal(&self, cell: Cell) -> bool {
        self.goal[self.index(cell)]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_obstacle(cell)
    }

    pub fn goals(&self) -> &[Cell] {
        &self.goals
    }

    pub fn starts(&self) -> &[Cell] {
        &self.starts
    }

    pub fn obstacles(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells())
            .filter(|&i| self.obstacle[i])
            .map(|i| self.cell_at(i))
    }

    pub fn has_obstacles(&self) -> bool {
        self.obstacle.iter().any(|&o| o)
    }

    /// Non-obstacle cells in row-major order.
    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells())
            .filter(|&i| !self.obstacle[i])
            .map(|i| self.cell_at(i))
    }

    /// Cell reached by `action`, or `None` when the move leaves the grid or
    /// hits an obstacle.
    pub fn neighbor(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (dx, dy) = action.delta();
        let x = cell.x as isize + dx;
        let y = cell.y as isize + dy;
        if !self.contains(x, y) {
            return None;
        }
        let next = Cell::new(x as usize, y as usize);
        (!self.is_obstacle(next)).then_some(next)
    }

    /// Free 4-neighbours of a cell.
    pub fn successors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        Action::MOVES
            .into_iter()
            .filter_map(move |a| self.neighbor(cell, a))
    }

    /// Renders the map in the text format accepted by [`parse_map`]. Start
    /// markers are written only when the map was built with explicit starts.
    pub fn to_text(&self) -> String {
        let mut marked = vec![false; self.num_cells()];
        if self.explicit_starts {
            for &c in &self.starts {
                marked[self.index(c)] = true;
            }
        }
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                out.push(if self.obstacle[i] {
                    '#'
                } else if self.goal[i] {
                    'G'
                } else if marked[i] {
                    'S'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the text map format: rows of `.` (free), `#` (obstacle), `G`
/// (goal) and `S` (start candidate).
pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    let rows: Vec<&str> = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .collect();
    if rows.is_empty() {
        return Err(MapError::Empty);
    }
    let width = rows[0].chars().count();
    let mut obstacles = Vec::new();
    let mut goals = Vec::new();
    let mut starts = Vec::new();
    for (y, row) in rows.iter().enumerate() {
        let found = row.chars().count();
        if found != width {
            return Err(MapError::Ragged {
                row: y,
                expected: width,
                found,
            });
        }
        for (x, ch) in row.chars().enumerate() {
            let c = Cell::new(x, y);
            match ch {
                '.' => {}
                '#' => obstacles.push(c),
                'G' => goals.push(c),
                'S' => starts.push(c),
                _ => return Err(MapError::UnknownChar { row: y, col: x, ch }),
            }
        }
    }
    let starts = (!starts.is_empty()).then_some(starts);
    GridMap::new(width, rows.len(), obstacles, goals, starts)
}

impl FromStr for GridMap {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_map(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("number of agents must be positive")]
    NoAgents,
    #[error("{agents} agents requested but only {starts} distinct start cells exist")]
    TooManyAgents { agents: usize, starts: usize },
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("slip probability {0} is outside [0, 1]")]
    BadSlip(f64),
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
}

/// Everything needed to roll out episodes on one map.
#[derive(Clone, Debug)]
pub struct EnvConfig {
    pub map: Arc<GridMap>,
    pub num_agents: usize,
    pub horizon: usize,
    pub slip_probability: f64,
    pub seed: u64,
}

impl EnvConfig {
    /// Config with the default horizon `2 * (width + height)`, no slip and
    /// seed 0.
    pub fn new(map: impl Into<Arc<GridMap>>, num_agents: usize) -> Self {
        let map = map.into();
        let horizon = default_horizon(&map);
        Self {
            map,
            num_agents,
            horizon,
            slip_probability: 0.0,
            seed: 0,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_slip(mut self, p: f64) -> Self {
        self.slip_probability = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_agents == 0 {
            return Err(EnvError::NoAgents);
        }
        if self.num_agents > self.map.starts().len() {
            return Err(EnvError::TooManyAgents {
                agents: self.num_agents,
                starts: self.map.starts().len(),
            });
        }
        if self.horizon == 0 {
            return Err(EnvError::ZeroHorizon);
        }
        if !(0.0..=1.0).contains(&self.slip_probability) {
            return Err(EnvError::BadSlip(self.slip_probability));
        }
        Ok(())
    }
}

pub fn default_horizon(map: &GridMap) -> usize {
    2 * (map.width() + map.height())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentStatus {
    pub cell: Cell,
    /// Set once the agent has entered a goal cell; never cleared.
    pub reached: bool,
    pub active: bool,
}

/// What happened to one agent during a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepEvent {
    /// The action was carried out (a `Stay` counts as carried out).
    Moved,
    /// The move left the grid or hit an obstacle; the agent stayed put.
    BlockedByObstacle,
    /// Another agent ended up in the same cell; both were sent back.
    VertexConflict,
    /// Two agents tried to exchange cells; both were sent back.
    SwapConflict,
    /// The agent entered a goal for the first time and despawned.
    ReachedGoal,
    Inactive,
}

impl StepEvent {
    pub fn is_collision(self) -> bool {
        matches!(
            self,
            StepEvent::BlockedByObstacle | StepEvent::VertexConflict | StepEvent::SwapConflict
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            StepEvent::Moved => "moved",
            StepEvent::BlockedByObstacle => "blocked_by_obstacle",
            StepEvent::VertexConflict => "vertex_conflict",
            StepEvent::SwapConflict => "swap_conflict",
            StepEvent::ReachedGoal => "reached_goal",
            StepEvent::Inactive => "inactive",
        }
    }
}

impl fmt::Display for StepEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Places the agents on distinct start cells drawn uniformly at random.
pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Result<Vec<AgentStatus>, EnvError> {
    config.validate()?;
    let starts = config.map.starts();
    let picks = index::sample(rng, starts.len(), config.num_agents);
    Ok(picks
        .into_iter()
        .map(|i| AgentStatus {
            cell: starts[i],
            reached: false,
            active: true,
        })
        .collect())
}

/// Advances the joint state by one step. Actions of inactive agents are
/// ignored, and every inactive agent gets [`StepEvent::Inactive`].
pub fn step<R: Rng + ?Sized>(
    config: &EnvConfig,
    state: &[AgentStatus],
    actions: &[Action],
    rng: &mut R,
) -> Result<(Vec<AgentStatus>, Vec<StepEvent>), EnvError> {
    if actions.len() != state.len() {
        return Err(EnvError::ActionCount {
            expected: state.len(),
            found: actions.len(),
        });
    }
    let map = &*config.map;
    let n = state.len();
    let mut events = vec![StepEvent::Inactive; n];
    let mut target: Vec<Cell> = state.iter().map(|s| s.cell).collect();

    for i in 0..n {
        if !state[i].active {
            continue;
        }
        let mut action = actions[i];
        if config.slip_probability > 0.0 && rng.gen::<f64>() < config.slip_probability {
            action = Action::MOVES[rng.gen_range(0..Action::MOVES.len())];
        }
        match map.neighbor(state[i].cell, action) {
            Some(c) => {
                target[i] = c;
                events[i] = StepEvent::Moved;
            }
            None => events[i] = StepEvent::BlockedByObstacle,
        }
    }

    let active: Vec<usize> = (0..n).filter(|&i| state[i].active).collect();
    let mut occupant: Vec<(usize, usize)> = active.iter().map(|&i| (map.index(state[i].cell), i)).collect();
    occupant.sort_unstable();
    let mut by_cell: Vec<(usize, usize)> = Vec::with_capacity(active.len());

    // Reverting one agent can create a new conflict with an agent that moved
    // into its old cell, so iterate to a fixed point. Every round reverts at
    // least one mover, which bounds the loop by the number of agents.
    while active.len() > 1 {
        let mut changed = false;

        by_cell.clear();
        by_cell.extend(active.iter().map(|&i| (map.index(target[i]), i)));
        by_cell.sort_unstable();
        for group in by_cell.chunk_by(|a, b| a.0 == b.0).filter(|g| g.len() > 1) {
            for &(_, i) in group {
                if target[i] != state[i].cell {
                    target[i] = state[i].cell;
                    changed = true;
                }
                events[i] = StepEvent::VertexConflict;
            }
        }

        for &i in &active {
            if target[i] == state[i].cell {
                continue;
            }
            let cell = map.index(target[i]);
            if let Ok(k) = occupant.binary_search_by_key(&cell, |&(c, _)| c) {
                let j = occupant[k].1;
                if j != i && target[j] == state[i].cell {
                    target[i] = state[i].cell;
                    target[j] = state[j].cell;
                    events[i] = StepEvent::SwapConflict;
                    events[j] = StepEvent::SwapConflict;
                    changed = true;
                }
            }
        }

        if !changed {
            break;
        }
    }

    let next = state
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if !s.active {
                return *s;
            }
            let mut s = AgentStatus {
                cell: target[i],
                ..*s
            };
            if !s.reached && map.is_goal(s.cell) {
                s.reached = true;
                s.active = false;
                events[i] = StepEvent::ReachedGoal;
            }
            s
        })
        .collect();
    Ok((next, events))
}

/// Chooses actions for agents during an episode.
pub trait Controller {
    /// Called once per episode with the start cells after placement.
    fn begin_episode(&mut self, _starts: &[Cell]) {}

    fn act<R: Rng + ?Sized>(&mut self, agent: usize, cell: Cell, rng: &mut R) -> Action;
}

/// One agent's path through an episode.
///
/// `cells[t]` is the cell at time `t`; `actions[t]` and `events[t]` describe
/// the step taken from it. There is one more cell than there are actions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentTrajectory {
    pub cells: Vec<Cell>,
    pub actions: Vec<Action>,
    pub events: Vec<StepEvent>,
    pub reached_at: Option<usize>,
}

impl AgentTrajectory {
    pub fn collisions(&self) -> usize {
        self.events.iter().filter(|e| e.is_collision()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub agents: Vec<AgentTrajectory>,
    /// Number of joint steps executed.
    pub steps: usize,
}

impl Trajectory {
    pub fn all_reached(&self) -> bool {
        self.agents.iter().all(|a| a.reached_at.is_some())
    }

    pub fn collisions(&self) -> usize {
        self.agents.iter().map(AgentTrajectory::collisions).sum()
    }
}

/// Rolls out one episode with a controller choosing each active agent's
/// action. Ends at the horizon or once every agent has reached a goal.
pub fn run_episode_with<C: Controller + ?Sized, R: Rng + ?Sized>(
    config: &EnvConfig,
    controller: &mut C,
    rng: &mut R,
) -> Result<Trajectory, EnvError> {
    let mut state = reset(config, rng)?;
    let starts: Vec<Cell> = state.iter().map(|s| s.cell).collect();
    controller.begin_episode(&starts);

    let mut agents: Vec<AgentTrajectory> = starts
        .iter()
        .map(|&c| {
            let mut cells = Vec::with_capacity(config.horizon + 1);
            cells.push(c);
            AgentTrajectory {
                cells,
                actions: Vec::with_capacity(config.horizon),
                events: Vec::with_capacity(config.horizon),
                reached_at: None,
            }
        })
        .collect();
    for (s, traj) in state.iter_mut().zip(agents.iter_mut()) {
        if config.map.is_goal(s.cell) {
            s.reached = true;
            s.active = false;
            traj.reached_at = Some(0);
        }
    }

    let mut t = 0;
    let mut actions = vec![Action::Stay; state.len()];
    while t < config.horizon && state.iter().any(|s| s.active) {
        for (i, s) in state.iter().enumerate() {
            actions[i] = if s.active {
                controller.act(i, s.cell, rng)
            } else {
                Action::Stay
            };
        }
        let (next, events) = step(config, &state, &actions, rng)?;
        for (i, traj) in agents.iter_mut().enumerate() {
            if !state[i].active {
                continue;
            }
            traj.actions.push(actions[i]);
            traj.events.push(events[i]);
            traj.cells.push(next[i].cell);
            if events[i] == StepEvent::ReachedGoal {
                traj.reached_at = Some(t + 1);
            }
        }
        state = next;
        t += 1;
    }
    Ok(Trajectory { agents, steps: t })
}
