//! Shared stochastic policy over grid cells and its text format.
//!
//! The text format is line oriented:
//!
//! ```text
//! # mapf-egt policy
//! # grid = 3x1
//! # any other comment line (configuration echo)
//! 0,0 -> 0.1 0.1 0.1 0.6 0.1
//! 1,0 -> 0.2 0.2 0.2 0.2 0.2
//! ```
//!
//! Probabilities are listed in the order up, down, left, right, stay.

use std::io::{self, BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::gridworld::{Action, Cell, Controller, GridMap};

pub type Row = [f64; Action::COUNT];

pub const UNIFORM_ROW: Row = [1.0 / Action::COUNT as f64; Action::COUNT];

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("policy file has no `# grid = WxH` header")]
    MissingGrid,
    #[error("policy is for a {found} grid but the map is {expected}")]
    DimensionMismatch { expected: String, found: String },
    #[error("policy has no row for free cell {0}")]
    MissingRow(Cell),
    #[error("row for {cell} is not a distribution (sum {sum})")]
    NotDistribution { cell: Cell, sum: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    width: usize,
    height: usize,
    free: Vec<bool>,
    rows: Vec<Row>,
}

impl TabularPolicy {
    pub fn uniform(map: &GridMap) -> Self {
        Self::from_fn(map, |_| UNIFORM_ROW)
    }

    pub fn from_fn(map: &GridMap, mut f: impl FnMut(Cell) -> Row) -> Self {
        let free: Vec<bool> = (0..map.num_cells())
            .map(|i| map.is_free(map.cell_at(i)))
            .collect();
        let rows = (0..map.num_cells())
            .map(|i| if free[i] { f(map.cell_at(i)) } else { UNIFORM_ROW })
            .collect();
        Self {
            width: map.width(),
            height: map.height(),
            free,
            rows,
        }
    }

    /// Policy that always picks `f(cell)`.
    pub fn deterministic(map: &GridMap, mut f: impl FnMut(Cell) -> Action) -> Self {
        Self::from_fn(map, |c| one_hot(f(c)))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn index(&self, cell: Cell) -> usize {
        assert!(cell.x < self.width && cell.y < self.height, "{cell} outside policy grid");
        cell.y * self.width + cell.x
    }

    /// Free cells covered by the policy, row-major.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows.len())
            .filter(|&i| self.free[i])
            .map(|i| Cell::new(i % self.width, i / self.width))
    }

    pub fn row(&self, cell: Cell) -> &Row {
        &self.rows[self.index(cell)]
    }

    pub fn row_mut(&mut self, cell: Cell) -> &mut Row {
        let i = self.index(cell);
        &mut self.rows[i]
    }

    pub fn prob(&self, cell: Cell, action: Action) -> f64 {
        self.row(cell)[action.index()]
    }

    pub fn sample<R: Rng + ?Sized>(&self, cell: Cell, rng: &mut R) -> Action {
        sample_row(self.row(cell), rng)
    }

    /// Most likely action; ties go to the earlier action in [`Action::ALL`].
    pub fn greedy_action(&self, cell: Cell) -> Action {
        argmax(self.row(cell))
    }

    pub fn greedy(&self) -> TabularPolicy {
        let mut out = self.clone();
        for i in 0..out.rows.len() {
            if out.free[i] {
                out.rows[i] = one_hot(argmax(&self.rows[i]));
            }
        }
        out
    }

    /// Removes a uniform mixture of weight `w`, i.e. inverts
    /// `w·uniform + (1 − w)·π`. Tiny negative results from rounding are
    /// clipped and rows renormalized.
    pub fn unmix(&self, w: f64) -> TabularPolicy {
        if w <= 0.0 {
            return self.clone();
        }
        if w >= 1.0 {
            return self.map_rows(|_| UNIFORM_ROW);
        }
        self.map_rows(|row| {
            let mut out = [0.0; Action::COUNT];
            for (o, p) in out.iter_mut().zip(row) {
                *o = ((p - w / Action::COUNT as f64) / (1.0 - w)).max(0.0);
            }
            normalized(out)
        })
    }

    /// Applies `f` to every free-cell row.
    pub fn map_rows(&self, mut f: impl FnMut(&Row) -> Row) -> TabularPolicy {
        let mut out = self.clone();
        for i in 0..out.rows.len() {
            if out.free[i] {
                out.rows[i] = f(&self.rows[i]);
            }
        }
        out
    }

    /// Largest deviation of a row sum from 1 and smallest entry, over all
    /// free cells.
    pub fn simplex_error(&self) -> (f64, f64) {
        let mut max_dev = 0.0f64;
        let mut min_entry = f64::INFINITY;
        for c in self.cells() {
            let row = self.row(c);
            max_dev = max_dev.max((row.iter().sum::<f64>() - 1.0).abs());
            min_entry = row.iter().copied().fold(min_entry, f64::min);
        }
        (max_dev, min_entry)
    }

    pub fn check_map(&self, map: &GridMap) -> Result<(), PolicyError> {
        if (self.width, self.height) != (map.width(), map.height()) {
            return Err(PolicyError::DimensionMismatch {
                expected: format!("{}x{}", map.width(), map.height()),
                found: format!("{}x{}", self.width, self.height),
            });
        }
        if let Some(c) = map.free_cells().find(|&c| !self.free[self.index(c)]) {
            return Err(PolicyError::MissingRow(c));
        }
        Ok(())
    }

    /// Writes the policy; each header line is emitted as a `#` comment.
    pub fn write_to<W: Write>(&self, mut out: W, header: &[String]) -> io::Result<()> {
        writeln!(out, "# mapf-egt policy")?;
        writeln!(out, "# grid = {}x{}", self.width, self.height)?;
        for line in header {
            writeln!(out, "# {line}")?;
        }
        for c in self.cells() {
            let r = self.row(c);
            writeln!(
                out,
                "{},{} -> {} {} {} {} {}",
                c.x, c.y, r[0], r[1], r[2], r[3], r[4]
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, PolicyError> {
        let mut dims: Option<(usize, usize)> = None;
        let mut entries: Vec<(Cell, Row)> = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let lineno = n + 1;
            let syntax = |message: String| PolicyError::Syntax {
                line: lineno,
                message,
            };
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(grid) = comment.trim().strip_prefix("grid =") {
                    let (w, h) = grid
                        .trim()
                        .split_once('x')
                        .ok_or_else(|| syntax(format!("bad grid size {grid:?}")))?;
                    let parse = |s: &str| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| syntax(format!("bad grid size {grid:?}")))
                    };
                    dims = Some((parse(w)?, parse(h)?));
                }
                continue;
            }
            let (pos, probs) = line
                .split_once("->")
                .ok_or_else(|| syntax("expected `x,y -> p p p p p`".into()))?;
            let (x, y) = pos
                .trim()
                .split_once(',')
                .ok_or_else(|| syntax(format!("bad cell {pos:?}")))?;
            let coord = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| syntax(format!("bad coordinate {s:?}")))
            };
            let cell = Cell::new(coord(x)?, coord(y)?);
            let values: Vec<f64> = probs
                .split_whitespace()
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| syntax(format!("bad probability {p:?}")))
                })
                .collect::<Result<_, _>>()?;
            let row: Row = values
                .try_into()
                .map_err(|v: Vec<f64>| syntax(format!("expected 5 probabilities, found {}", v.len())))?;
            entries.push((cell, row));
        }
        let (width, height) = dims.ok_or(PolicyError::MissingGrid)?;
        let mut free = vec![false; width * height];
        let mut rows = vec![UNIFORM_ROW; width * height];
        for (cell, row) in entries {
            if cell.x >= width || cell.y >= height {
                return Err(PolicyError::DimensionMismatch {
                    expected: format!("{width}x{height}"),
                    found: format!("cell {cell}"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(PolicyError::NotDistribution { cell, sum });
            }
            let i = cell.y * width + cell.x;
            free[i] = true;
            rows[i] = row;
        }
        Ok(Self {
            width,
            height,
            free,
            rows,
        })
    }
}

/// Samples actions from a policy row for every agent.
impl Controller for TabularPolicy {
    fn act<R: Rng + ?Sized>(&mut self, _agent: usize, cell: Cell, rng: &mut R) -> Action {
        self.sample(cell, rng)
    }
}

/// Borrowing controller so a shared policy can drive concurrent rollouts.
pub struct Sampler<'a>(pub &'a TabularPolicy);

impl Controller for Sampler<'_> {
    fn act<R: Rng + ?Sized>(&mut self, _agent: usize, cell: Cell, rng: &mut R) -> Action {
        self.0.sample(cell, rng)
    }
}

pub fn one_hot(action: Action) -> Row {
    let mut row = [0.0; Action::COUNT];
    row[action.index()] = 1.0;
    row
}

pub fn argmax(row: &Row) -> Action {
    let mut best = 0;
    for i in 1..Action::COUNT {
        if row[i] > row[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

pub fn normalized(mut row: Row) -> Row {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        for p in &mut row {
            *p /= sum;
        }
        row
    } else {
        UNIFORM_ROW
    }
}

/// Inverse-CDF sampling from a row. Always draws exactly one uniform number.
pub fn sample_row<R: Rng + ?Sized>(row: &Row, rng: &mut R) -> Action {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = Action::Stay;
    for (i, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Action::ALL[i];
        if u < acc {
            return last;
        }
    }
    last
}
