//! Recurrent cells (ERNN, LSTM, GRU), deep stacking, readout heads and
//! truncated backpropagation through time.

mod cell;
mod stack;
mod tbptt;

pub use cell::{ernn_step, gru_step, lstm_step, BoundCell, CellKind, CellState, Gate, RecurrentCell};
pub use stack::{readout, ReadoutHead, StackedRnn, Unrolled};
pub use tbptt::{tbptt_train, Tbptt};

#[cfg(test)]
mod tests;
