//! Thread-local tally of multiply (and divide) operations executed by the kernels.
//!
//! The pipeline resets the tally before a step and reads it afterwards, so the
//! per-step MAC counts in a trace come from the kernels themselves rather than
//! from a formula. The tally is per thread; kernels never spawn threads.

use std::cell::Cell;

thread_local! {
    static MULS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn add(n: u64) {
    MULS.with(|c| c.set(c.get().wrapping_add(n)));
}

pub fn read() -> u64 {
    MULS.with(Cell::get)
}

pub fn reset() {
    MULS.with(|c| c.set(0));
}

/// Runs `f` and returns its result together with the multiplies it recorded.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = read();
    let out = f();
    (out, read().wrapping_sub(before))
}
