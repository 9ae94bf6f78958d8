use core::fmt::Display;

use super::{KpiState, Task};

/// One row of the difficulty-curve file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub tau: u64,
    pub sample_id: usize,
    pub task: Task,
    pub difficulty: f64,
    pub selected: bool,
}

pub trait CurveSink {
    type Error: Display;
    fn append(&mut self, row: &CurveRow) -> Result<(), Self::Error>;
}

impl CurveSink for alloc::vec::Vec<CurveRow> {
    type Error = core::convert::Infallible;
    fn append(&mut self, row: &CurveRow) -> Result<(), Self::Error> {
        self.push(*row);
        Ok(())
    }
}

/// Append the current difficulty of every tracked, registered sample for
/// each task. A failing sink is reported and skipped; returns rows written.
pub fn record_difficulty_curves<S: CurveSink>(
    state: &KpiState,
    tracked: &[usize],
    tasks: &[Task],
    sink: &mut S,
) -> usize {
    let mut written = 0;
    for &id in tracked {
        for &task in tasks {
            let Some(difficulty) = state.difficulty(id, task) else {
                continue;
            };
            let row =
                CurveRow { tau: state.tau, sample_id: id, task, difficulty, selected: state.was_selected(id, task) };
            match sink.append(&row) {
                Ok(()) => written += 1,
                Err(e) => log::warn!("difficulty curve sink failed: {e}"),
            }
        }
    }
    written
}
