//! Six-plane padded input encoding for the apprentice network.
//!
//! The board is extended by two cells on every side. North/South padding
//! holds black dummy stones, West/East padding white dummy stones and the
//! four 2x2 corners hold both. Dummy stones connect like real ones, so a
//! padding row on the North side is part of the black North group.

use crate::hex::{BoardState, Cell, Color, Edge};

pub const CHANNELS: usize = 6;
pub const PAD: usize = 2;

pub const CH_BLACK: usize = 0;
pub const CH_WHITE: usize = 1;
pub const CH_BLACK_NORTH: usize = 2;
pub const CH_BLACK_SOUTH: usize = 3;
pub const CH_WHITE_WEST: usize = 4;
pub const CH_WHITE_EAST: usize = 5;

/// Channel-major tensor of shape `6 x (n+4) x (n+4)` with 0/1 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub board_size: usize,
    pub data: Vec<f64>,
}

impl EncodedState {
    pub fn side(&self) -> usize {
        self.board_size + 2 * PAD
    }

    pub fn shape(&self) -> [usize; 3] {
        [CHANNELS, self.side(), self.side()]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        let p = self.side();
        self.data[(channel * p + row) * p + col]
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let area = self.side() * self.side();
        &self.data[channel * area..(channel + 1) * area]
    }
}

pub fn encode(state: &BoardState) -> EncodedState {
    let n = state.size();
    let p = n + 2 * PAD;
    let mut data = vec![0.0; CHANNELS * p * p];
    let mut set = |ch: usize, r: usize, c: usize| data[(ch * p + r) * p + c] = 1.0;

    let ns_joined = state.edges_joined(Edge::North, Edge::South);
    let we_joined = state.edges_joined(Edge::West, Edge::East);

    for r in 0..p {
        for c in 0..p {
            let north = r < PAD;
            let south = r >= n + PAD;
            let west = c < PAD;
            let east = c >= n + PAD;
            if north || south || west || east {
                if north || south {
                    set(CH_BLACK, r, c);
                    if north || ns_joined {
                        set(CH_BLACK_NORTH, r, c);
                    }
                    if south || ns_joined {
                        set(CH_BLACK_SOUTH, r, c);
                    }
                }
                if west || east {
                    set(CH_WHITE, r, c);
                    if west || we_joined {
                        set(CH_WHITE_WEST, r, c);
                    }
                    if east || we_joined {
                        set(CH_WHITE_EAST, r, c);
                    }
                }
                continue;
            }
            let index = (r - PAD) * n + (c - PAD);
            match state.cell_at(index) {
                Cell::Empty => {}
                Cell::Stone(Color::Black) => {
                    set(CH_BLACK, r, c);
                    if state.connected_to_edge(index, Edge::North) {
                        set(CH_BLACK_NORTH, r, c);
                    }
                    if state.connected_to_edge(index, Edge::South) {
                        set(CH_BLACK_SOUTH, r, c);
                    }
                }
                Cell::Stone(Color::White) => {
                    set(CH_WHITE, r, c);
                    if state.connected_to_edge(index, Edge::West) {
                        set(CH_WHITE_WEST, r, c);
                    }
                    if state.connected_to_edge(index, Edge::East) {
                        set(CH_WHITE_EAST, r, c);
                    }
                }
            }
        }
    }
    EncodedState { board_size: n, data }
}
