use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;

use crate::gridworld::{Action, Cell, Controller, GridMap};

/// Cells from the start to a goal, both included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub cells: Vec<Cell>,
}

impl Path {
    /// Number of moves.
    pub fn len(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn actions(&self) -> Vec<Action> {
        self.cells
            .windows(2)
            .map(|w| Action::between(w[0], w[1]).expect("path cells are adjacent"))
            .collect()
    }
}

fn heuristic(map: &GridMap, cell: Cell) -> usize {
    map.goals()
        .iter()
        .map(|&g| g.manhattan(cell))
        .min()
        .unwrap_or(0)
}

/// Shortest 4-connected path from `start` to the nearest goal, or `None`
/// when no goal is reachable. The heuristic is the Manhattan distance to the
/// closest goal; among equal `f` values the cell with the smaller `(y, x)` is
/// expanded first.
pub fn astar(map: &GridMap, start: Cell) -> Option<Path> {
    if map.is_obstacle(start) {
        return None;
    }
    let n = map.num_cells();
    let mut g = vec![usize::MAX; n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();

    g[map.index(start)] = 0;
    open.push(Reverse((heuristic(map, start), start.y, start.x)));

    while let Some(Reverse((_, y, x))) = open.pop() {
        let cell = Cell::new(x, y);
        let i = map.index(cell);
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if map.is_goal(cell) {
            let mut cells = vec![cell];
            let mut cur = cell;
            while let Some(p) = parent[map.index(cur)] {
                cells.push(p);
                cur = p;
            }
            cells.reverse();
            return Some(Path { cells });
        }
        for next in map.successors(cell) {
            let j = map.index(next);
            let cost = g[i] + 1;
            if !closed[j] && cost < g[j] {
                g[j] = cost;
                parent[j] = Some(cell);
                open.push(Reverse((cost + heuristic(map, next), next.y, next.x)));
            }
        }
    }
    None
}

/// Plans every agent independently with A* at the start of an episode and
/// then follows the plan. An agent whose last move was undone by a conflict
/// waits one step with probability 1/2 before retrying.
pub struct AStarPlanner<'a> {
    map: &'a GridMap,
    cache: HashMap<Cell, Option<Path>>,
    next_step: Vec<HashMap<Cell, Action>>,
    last: Vec<Option<(Cell, Action)>>,
}

impl<'a> AStarPlanner<'a> {
    pub fn new(map: &'a GridMap) -> Self {
        Self {
            map,
            cache: HashMap::new(),
            next_step: Vec::new(),
            last: Vec::new(),
        }
    }

    pub fn plan(&mut self, start: Cell) -> Option<&Path> {
        let map = self.map;
        self.cache
            .entry(start)
            .or_insert_with(|| astar(map, start))
            .as_ref()
    }
}

impl Controller for AStarPlanner<'_> {
    fn begin_episode(&mut self, starts: &[Cell]) {
        let mut next_step = Vec::with_capacity(starts.len());
        for &s in starts {
            let steps = self
                .plan(s)
                .map(|p| {
                    p.cells
                        .windows(2)
                        .map(|w| (w[0], Action::between(w[0], w[1]).expect("adjacent")))
                        .collect()
                })
                .unwrap_or_default();
            next_step.push(steps);
        }
        self.last = vec![None; starts.len()];
        self.next_step = next_step;
    }

    fn act<R: Rng + ?Sized>(&mut self, agent: usize, cell: Cell, rng: &mut R) -> Action {
        let planned = self
            .next_step
            .get(agent)
            .and_then(|m| m.get(&cell))
            .copied()
            .unwrap_or(Action::Stay);
        let undone = matches!(self.last.get(agent), Some(&Some((c, a))) if c == cell && a != Action::Stay);
        let action = if undone && rng.gen_bool(0.5) {
            Action::Stay
        } else {
            planned
        };
        if let Some(slot) = self.last.get_mut(agent) {
            *slot = Some((cell, action));
        }
        action
    }
}
