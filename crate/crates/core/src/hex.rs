//! Hex rules: placement, incremental edge connectivity, win detection and a
//! small text diagram format for positions.
//!
//! Black connects North (row 0) to South (row n-1); White connects West
//! (column 0) to East (column n-1). Black always moves first and there is no
//! swap rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ExitError, Result};

pub const MIN_BOARD_SIZE: usize = 2;
pub const MAX_BOARD_SIZE: usize = 13;

/// Offsets of the six hexagonal neighbours of a cell, as (row, col) deltas.
pub const HEX_NEIGHBOURS: [(isize, isize); 6] = [(-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    Black,
    White,
}

impl Color {
    pub fn opponent(self) -> Color {
        match self {
            Color::Black => Color::White,
            Color::White => Color::Black,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Color::Black => 0,
            Color::White => 1,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Color::Black => 'B',
            Color::White => 'W',
        }
    }

    pub fn from_letter(c: char) -> Option<Color> {
        match c {
            'B' | 'b' => Some(Color::Black),
            'W' | 'w' => Some(Color::White),
            _ => None,
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Color::Black => "black",
            Color::White => "white",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Cell {
    #[default]
    Empty,
    Stone(Color),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Move {
    pub row: usize,
    pub col: usize,
}

impl Move {
    pub fn new(row: usize, col: usize) -> Self {
        Move { row, col }
    }

    pub fn from_index(index: usize, size: usize) -> Self {
        Move { row: index / size, col: index % size }
    }

    pub fn index(self, size: usize) -> usize {
        self.row * size + self.col
    }

    /// Parses coordinate notation: column letter followed by a 1-based row
    /// number, e.g. `c2` is row 1, column 2.
    pub fn parse(text: &str, size: usize) -> Result<Move> {
        let text = text.trim();
        let mut chars = text.chars();
        let letter = chars
            .next()
            .ok_or_else(|| ExitError::Parse("empty coordinate".into()))?
            .to_ascii_lowercase();
        if !letter.is_ascii_lowercase() {
            return Err(ExitError::Parse(format!("bad column in coordinate {text:?}")));
        }
        let col = (letter as u8 - b'a') as usize;
        let row: usize = chars
            .as_str()
            .parse()
            .map_err(|_| ExitError::Parse(format!("bad row in coordinate {text:?}")))?;
        if row == 0 || row > size || col >= size {
            return Err(ExitError::InvalidMove(format!("{text} is off a {size}x{size} board")));
        }
        Ok(Move { row: row - 1, col })
    }

    pub fn notation(self) -> String {
        format!("{}{}", (b'a' + self.col as u8) as char, self.row + 1)
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.notation())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameResult {
    pub winner: Color,
    pub length: usize,
}

/// 1 if `perspective` won the game, 0 otherwise.
pub fn result_to_reward(result: GameResult, perspective: Color) -> u8 {
    u8::from(result.winner == perspective)
}

/// Virtual edge nodes, numbered after the n*n cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    North,
    South,
    West,
    East,
}

impl Edge {
    fn offset(self) -> usize {
        match self {
            Edge::North => 0,
            Edge::South => 1,
            Edge::West => 2,
            Edge::East => 3,
        }
    }
}

#[derive(Debug, Clone)]
struct UnionFind {
    parent: Vec<u16>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(len: usize) -> Self {
        UnionFind { parent: (0..len as u16).collect(), rank: vec![0; len] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let grand = self.parent[self.parent[x] as usize];
            self.parent[x] = grand;
            x = grand as usize;
        }
        x
    }

    fn find_const(&self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            x = self.parent[x] as usize;
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb as u16,
            std::cmp::Ordering::Greater => self.parent[rb] = ra as u16,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra as u16;
                self.rank[ra] += 1;
            }
        }
    }
}

/// A Hex position. Operations on it either return a new state or mutate a
/// locally owned copy; the type is `Send + Sync` and cheap to clone.
#[derive(Debug, Clone)]
pub struct BoardState {
    size: usize,
    cells: Vec<Cell>,
    to_move: Color,
    history: Vec<Move>,
    components: UnionFind,
    winner: Option<Color>,
}

impl PartialEq for BoardState {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size && self.cells == other.cells && self.to_move == other.to_move
    }
}

impl Eq for BoardState {}

impl BoardState {
    pub fn new(size: usize) -> Result<Self> {
        if !(MIN_BOARD_SIZE..=MAX_BOARD_SIZE).contains(&size) {
            return Err(ExitError::Config(format!(
                "board size {size} outside supported range {MIN_BOARD_SIZE}..={MAX_BOARD_SIZE}"
            )));
        }
        Ok(BoardState {
            size,
            cells: vec![Cell::Empty; size * size],
            to_move: Color::Black,
            history: Vec::new(),
            components: UnionFind::new(size * size + 4),
            winner: None,
        })
    }

    /// Replays a sequence of cell indices from the empty board.
    pub fn from_history(size: usize, moves: &[usize]) -> Result<Self> {
        let mut state = BoardState::new(size)?;
        for &index in moves {
            if index >= size * size {
                return Err(ExitError::InvalidMove(format!("cell index {index} off a {size}x{size} board")));
            }
            state.apply(Move::from_index(index, size))?;
        }
        Ok(state)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_cells(&self) -> usize {
        self.size * self.size
    }

    pub fn to_move(&self) -> Color {
        self.to_move
    }

    pub fn history(&self) -> &[Move] {
        &self.history
    }

    pub fn history_indices(&self) -> Vec<usize> {
        self.history.iter().map(|m| m.index(self.size)).collect()
    }

    pub fn ply(&self) -> usize {
        self.history.len()
    }

    pub fn cell(&self, m: Move) -> Cell {
        self.cells[m.index(self.size)]
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        self.cells[index]
    }

    pub fn is_empty_cell(&self, index: usize) -> bool {
        self.cells[index] == Cell::Empty
    }

    pub fn winner(&self) -> Option<Color> {
        self.winner
    }

    pub fn is_terminal(&self) -> bool {
        self.winner.is_some()
    }

    pub fn result(&self) -> Option<GameResult> {
        self.winner.map(|winner| GameResult { winner, length: self.history.len() })
    }

    pub fn stone_count(&self, color: Color) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Stone(color)).count()
    }

    /// Empty cells in row-major order; empty once the game is decided.
    pub fn legal_moves(&self) -> Vec<Move> {
        if self.is_terminal() {
            return Vec::new();
        }
        (0..self.num_cells())
            .filter(|&i| self.cells[i] == Cell::Empty)
            .map(|i| Move::from_index(i, self.size))
            .collect()
    }

    pub fn legal_indices(&self) -> Vec<usize> {
        if self.is_terminal() {
            return Vec::new();
        }
        (0..self.num_cells()).filter(|&i| self.cells[i] == Cell::Empty).collect()
    }

    /// Legal-move mask over the n*n cells (all false at a terminal state).
    pub fn legal_mask(&self) -> Vec<bool> {
        let terminal = self.is_terminal();
        self.cells.iter().map(|&c| !terminal && c == Cell::Empty).collect()
    }

    pub fn is_legal(&self, m: Move) -> bool {
        !self.is_terminal() && m.row < self.size && m.col < self.size && self.cell(m) == Cell::Empty
    }

    pub fn play(&self, m: Move) -> Result<BoardState> {
        let mut next = self.clone();
        next.apply(m)?;
        Ok(next)
    }

    /// In-place variant of [`BoardState::play`].
    pub fn apply(&mut self, m: Move) -> Result<()> {
        if m.row >= self.size || m.col >= self.size {
            return Err(ExitError::InvalidMove(format!("{m:?} is off a {0}x{0} board", self.size)));
        }
        if self.is_terminal() {
            return Err(ExitError::InvalidMove(format!("game is already over, cannot play {m}")));
        }
        if self.cell(m) != Cell::Empty {
            return Err(ExitError::InvalidMove(format!("cell {m} is occupied")));
        }
        self.place(m.index(self.size));
        Ok(())
    }

    /// Unchecked placement for the rollout hot path. The caller guarantees
    /// the cell is empty and the game is undecided.
    pub(crate) fn place(&mut self, index: usize) {
        debug_assert!(self.cells[index] == Cell::Empty && self.winner.is_none());
        let n = self.size;
        let color = self.to_move;
        let (row, col) = (index / n, index % n);
        self.cells[index] = Cell::Stone(color);
        for (dr, dc) in HEX_NEIGHBOURS {
            let (r, c) = (row as isize + dr, col as isize + dc);
            if r < 0 || c < 0 || r >= n as isize || c >= n as isize {
                continue;
            }
            let other = r as usize * n + c as usize;
            if self.cells[other] == Cell::Stone(color) {
                self.components.union(index, other);
            }
        }
        let edges = match color {
            Color::Black => [(row == 0, Edge::North), (row == n - 1, Edge::South)],
            Color::White => [(col == 0, Edge::West), (col == n - 1, Edge::East)],
        };
        for (touches, edge) in edges {
            if touches {
                self.components.union(index, self.edge_node(edge));
            }
        }
        let won = match color {
            Color::Black => self.connected_nodes(self.edge_node(Edge::North), self.edge_node(Edge::South)),
            Color::White => self.connected_nodes(self.edge_node(Edge::West), self.edge_node(Edge::East)),
        };
        if won {
            self.winner = Some(color);
        }
        self.history.push(Move::from_index(index, n));
        self.to_move = color.opponent();
    }

    pub fn edge_node(&self, edge: Edge) -> usize {
        self.num_cells() + edge.offset()
    }

    fn connected_nodes(&mut self, a: usize, b: usize) -> bool {
        self.components.find(a) == self.components.find(b)
    }

    /// Whether the stone at `index` belongs to the same group as `edge`.
    pub fn connected_to_edge(&self, index: usize, edge: Edge) -> bool {
        self.components.find_const(index) == self.components.find_const(self.edge_node(edge))
    }

    /// Whether two edge nodes are joined.
    pub fn edges_joined(&self, a: Edge, b: Edge) -> bool {
        self.components.find_const(self.edge_node(a)) == self.components.find_const(self.edge_node(b))
    }

    /// Component representative for every cell and virtual node.
    pub fn component_labels(&self) -> Vec<usize> {
        (0..self.num_cells() + 4).map(|i| self.components.find_const(i)).collect()
    }

    /// Renders the rhombus diagram: one row per line, each row shifted one
    /// column further right than the previous.
    pub fn to_diagram(&self) -> String {
        let n = self.size;
        let mut out = String::new();
        out.push_str("   ");
        for c in 0..n {
            out.push((b'a' + c as u8) as char);
            out.push(' ');
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
        for r in 0..n {
            out.push_str(&" ".repeat(r));
            out.push_str(&format!("{:>2} ", r + 1));
            let row: Vec<&str> = (0..n)
                .map(|c| match self.cells[r * n + c] {
                    Cell::Empty => ".",
                    Cell::Stone(Color::Black) => "B",
                    Cell::Stone(Color::White) => "W",
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses a diagram produced by [`BoardState::to_diagram`]. The move
    /// history is reconstructed by interleaving the stones in row-major
    /// order, which reproduces the same position because move order does
    /// not affect connectivity.
    pub fn from_diagram(text: &str) -> Result<BoardState> {
        let mut rows: Vec<Vec<Cell>> = Vec::new();
        for line in text.lines().skip_while(|l| l.trim().is_empty()).skip(1) {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let mut cells = Vec::new();
            for tok in &tokens[1..] {
                cells.push(match *tok {
                    "." => Cell::Empty,
                    "B" | "b" => Cell::Stone(Color::Black),
                    "W" | "w" => Cell::Stone(Color::White),
                    other => return Err(ExitError::Parse(format!("bad diagram cell {other:?}"))),
                });
            }
            rows.push(cells);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ExitError::Parse("diagram is not square".into()));
        }
        let flat: Vec<Cell> = rows.into_iter().flatten().collect();
        let blacks: Vec<usize> = (0..flat.len()).filter(|&i| flat[i] == Cell::Stone(Color::Black)).collect();
        let whites: Vec<usize> = (0..flat.len()).filter(|&i| flat[i] == Cell::Stone(Color::White)).collect();
        if !(blacks.len() == whites.len() || blacks.len() == whites.len() + 1) {
            return Err(ExitError::Parse(format!(
                "stone counts black={} white={} impossible with black first",
                blacks.len(),
                whites.len()
            )));
        }
        let mut history = Vec::with_capacity(flat.len());
        for i in 0..blacks.len() {
            history.push(blacks[i]);
            if i < whites.len() {
                history.push(whites[i]);
            }
        }
        let mut state = BoardState::new(n)?;
        for index in history {
            // A diagram may show a finished game; replay without the
            // terminal check so stones past the win still land.
            if state.winner.is_some() {
                state.winner = None;
                state.place(index);
                state.recompute_winner();
            } else {
                state.place(index);
            }
        }
        Ok(state)
    }

    fn recompute_winner(&mut self) {
        self.winner = if self.edges_joined(Edge::North, Edge::South) {
            Some(Color::Black)
        } else if self.edges_joined(Edge::West, Edge::East) {
            Some(Color::White)
        } else {
            None
        };
    }
}

impl fmt::Display for BoardState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_diagram())
    }
}

/// Winner by depth-first search over stones, independent of the union-find.
pub fn dfs_winner(state: &BoardState) -> Option<Color> {
    let n = state.size();
    let reaches = |color: Color| -> bool {
        let mut seen = vec![false; n * n];
        let mut stack: Vec<usize> = (0..n)
            .map(|k| match color {
                Color::Black => k,
                Color::White => k * n,
            })
            .filter(|&i| state.cell_at(i) == Cell::Stone(color))
            .collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(i) = stack.pop() {
            let (r, c) = (i / n, i % n);
            let done = match color {
                Color::Black => r == n - 1,
                Color::White => c == n - 1,
            };
            if done {
                return true;
            }
            for (dr, dc) in HEX_NEIGHBOURS {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr >= n as isize || cc >= n as isize {
                    continue;
                }
                let j = rr as usize * n + cc as usize;
                if !seen[j] && state.cell_at(j) == Cell::Stone(color) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        false
    };
    if reaches(Color::Black) {
        Some(Color::Black)
    } else if reaches(Color::White) {
        Some(Color::White)
    } else {
        None
    }
}
