//! Seed × mode sweeps. Cells run in parallel and share nothing mutable.

use std::num::NonZeroUsize;
use std::thread;

use crate::scenario::{Mode, Scenario};
use crate::sim::{run, RunError, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub seed: u64,
    pub mode: Mode,
}

/// Cells in seed-major order.
pub fn cells(seeds: &[u64], modes: &[Mode]) -> Vec<Cell> {
    seeds
        .iter()
        .flat_map(|&seed| modes.iter().map(move |&mode| Cell { seed, mode }))
        .collect()
}

/// Runs every cell; results come back in the order of [`cells`].
pub fn run_matrix(
    sc: &Scenario,
    seeds: &[u64],
    modes: &[Mode],
) -> Vec<(Cell, Result<RunOutput, RunError>)> {
    let cells = cells(seeds, modes);
    let workers = thread::available_parallelism()
        .map_or(1, NonZeroUsize::get)
        .min(cells.len().max(1));
    let chunk = cells.len().div_ceil(workers).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = cells
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|c| (*c, run(sc, c.seed, c.mode)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("matrix worker panicked"))
            .collect()
    })
}
