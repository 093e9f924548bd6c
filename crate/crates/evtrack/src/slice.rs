//! Fixed-count slicing of event streams.
//!
//! Slices hold exactly N consecutive events; the trailing remainder is
//! dropped so every slice carries the same information density. Slice
//! duration varies with scene activity while the count stays constant.

use std::io::Write;

use crate::error::{Error, Result};
use crate::event::Event;

/// Default events per slice.
pub const DEFAULT_EVENTS_PER_SLICE: usize = 1000;
/// Events per slice used by the benchmark path.
pub const BENCH_EVENTS_PER_SLICE: usize = 1500;

/// A run of exactly N consecutive events from one stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSlice {
    pub events: Vec<Event>,
    pub t_start_us: u64,
    pub t_end_us: u64,
    pub slice_index: usize,
}

/// Partition `events` into consecutive slices of exactly `n_events`.
/// The trailing remainder (fewer than `n_events`) is dropped.
pub fn slice_by_count(events: &[Event], n_events: usize) -> Result<Vec<EventSlice>> {
    if n_events == 0 {
        return Err(Error::invalid("n_events must be at least 1"));
    }
    let n_slices = events.len() / n_events;
    let mut slices = Vec::with_capacity(n_slices);
    for slice_index in 0..n_slices {
        let chunk = &events[slice_index * n_events..(slice_index + 1) * n_events];
        slices.push(EventSlice {
            events: chunk.to_vec(),
            t_start_us: chunk[0].t_us,
            t_end_us: chunk[chunk.len() - 1].t_us,
            slice_index,
        });
    }
    Ok(slices)
}

/// Duration in µs of each slice (t_end − t_start).
pub fn slice_durations(slices: &[EventSlice]) -> Vec<u64> {
    slices.iter().map(|s| s.t_end_us - s.t_start_us).collect()
}

/// Emit durations as `slice_index,duration_us` CSV.
pub fn write_durations_csv<W: Write>(writer: &mut W, slices: &[EventSlice]) -> Result<()> {
    writeln!(writer, "slice_index,duration_us")?;
    for s in slices {
        writeln!(writer, "{},{}", s.slice_index, s.t_end_us - s.t_start_us)?;
    }
    Ok(())
}
