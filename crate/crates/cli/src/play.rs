//! Text-mode game between a person and an agent.

use std::io::{BufRead, Write};

use anyhow::Result;
use exit_core::evaluation::Player;
use exit_core::hex::{BoardState, Color, Move};

/// Plays until the game ends or input runs out. Returns the winner, if any.
pub fn play(agent: &Player, human: Color, size: usize, seed: u64, input: impl BufRead, mut out: impl Write) -> Result<Option<Color>> {
    let mut state = BoardState::new(size)?;
    let mut lines = input.lines();
    writeln!(out, "You are {human:?} ({}). Black joins top and bottom, White joins left and right.", human.letter())?;
    while !state.is_terminal() {
        if state.to_move() == human {
            write!(out, "{}\nyour move> ", state.to_diagram())?;
            out.flush()?;
            let Some(line) = lines.next() else {
                writeln!(out, "\ninput ended, game abandoned")?;
                return Ok(None);
            };
            let line = line?;
            match Move::parse(&line, size).and_then(|m| state.apply(m).map(|_| m)) {
                Ok(m) => writeln!(out, "you play {m}")?,
                Err(e) => writeln!(out, "rejected: {e}")?,
            }
        } else {
            let (m, _) = agent.agent.choose(&state, exit_core::seed::derive(seed, state.ply() as u64, 0))?;
            state.apply(m)?;
            writeln!(out, "{} plays {m}", agent.id)?;
        }
    }
    let winner = state.winner();
    writeln!(out, "{}\n{:?} wins", state.to_diagram(), winner.expect("game over"))?;
    Ok(winner)
}
