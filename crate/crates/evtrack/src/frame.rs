//! Event-frame construction: per-polarity count accumulation at sensor
//! resolution, 4×4 sum-binning (spatial factor 0.25), 64×64 center crop,
//! per-pixel saturation at 255.
//!
//! Counts are binned, not interpolated, so event mass is preserved up to
//! the crop and the saturation cap.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::event::{Polarity, StreamHeader};
use crate::nn::{Scalar, Tensor};
use crate::slice::EventSlice;

/// Output frame side length.
pub const FRAME_SIZE: usize = 64;
/// Spatial binning factor (0.25 scaling as integer 4×4 sum-binning).
pub const BIN: usize = 4;
/// Per-pixel saturation cap.
pub const SATURATION: u32 = 255;
/// Column offset of the center crop on the default 640-wide sensor: (160−64)/2.
pub const CROP_X: usize = 48;
/// Row offset of the center crop on the default 480-high sensor: (120−64)/2.
pub const CROP_Y: usize = 28;

/// Full-resolution per-polarity count grid (channels × height × width).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u32>,
}

impl CountGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        CountGrid {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> u32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn bump(&mut self, c: usize, y: usize, x: usize) {
        self.data[(c * self.height + y) * self.width + x] += 1;
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }
}

/// The network input: channels × 64 × 64 saturated counts stored as float.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    pub channels: usize,
    pub data: Vec<f32>,
    pub slice_index: usize,
}

impl EventFrame {
    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * FRAME_SIZE + y) * FRAME_SIZE + x]
    }

    /// View as a [C, 64, 64] tensor for the network.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let data = self.data.iter().map(|&v| S::from_f32v(v)).collect();
        Tensor::from_vec(vec![self.channels, FRAME_SIZE, FRAME_SIZE], data).unwrap()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// Accumulate a slice into a full-resolution count grid, one time bin,
/// channel 0 = ON, channel 1 = OFF.
pub fn accumulate(slice: &EventSlice, header: &StreamHeader) -> Result<CountGrid> {
    let mut grid = CountGrid::zeros(2, header.sensor_height as usize, header.sensor_width as usize);
    for (index, ev) in slice.events.iter().enumerate() {
        if !header.contains(ev.x, ev.y) {
            return Err(Error::OutOfBounds {
                index,
                x: ev.x,
                y: ev.y,
                width: header.sensor_width,
                height: header.sensor_height,
            });
        }
        let c = match ev.polarity {
            Polarity::On => 0,
            Polarity::Off => 1,
        };
        grid.bump(c, ev.y as usize, ev.x as usize);
    }
    Ok(grid)
}

/// 4×4 sum-bin, center-crop to 64×64, saturate at 255.
pub fn scale_and_crop(grid: &CountGrid, slice_index: usize) -> Result<EventFrame> {
    if grid.height % BIN != 0 || grid.width % BIN != 0 {
        return Err(Error::invalid(format!(
            "grid {}x{} not divisible by binning factor {BIN}",
            grid.width, grid.height
        )));
    }
    let bw = grid.width / BIN;
    let bh = grid.height / BIN;
    if bw < FRAME_SIZE || bh < FRAME_SIZE {
        return Err(Error::invalid(format!(
            "binned grid {bw}x{bh} smaller than the {FRAME_SIZE}x{FRAME_SIZE} crop"
        )));
    }
    let crop_x = (bw - FRAME_SIZE) / 2;
    let crop_y = (bh - FRAME_SIZE) / 2;
    let mut data = vec![0f32; grid.channels * FRAME_SIZE * FRAME_SIZE];
    for c in 0..grid.channels {
        for fy in 0..FRAME_SIZE {
            for fx in 0..FRAME_SIZE {
                let mut sum = 0u32;
                let y0 = (fy + crop_y) * BIN;
                let x0 = (fx + crop_x) * BIN;
                for dy in 0..BIN {
                    for dx in 0..BIN {
                        sum += grid.get(c, y0 + dy, x0 + dx);
                    }
                }
                data[(c * FRAME_SIZE + fy) * FRAME_SIZE + fx] = sum.min(SATURATION) as f32;
            }
        }
    }
    Ok(EventFrame {
        channels: grid.channels,
        data,
        slice_index,
    })
}

/// Collapse ON/OFF channels into one by element-wise sum, re-saturated.
pub fn merge_polarities(frame: &EventFrame) -> Result<EventFrame> {
    if frame.channels != 2 {
        return Err(Error::invalid("merge_polarities expects a 2-channel frame"));
    }
    let plane = FRAME_SIZE * FRAME_SIZE;
    let data = (0..plane)
        .map(|i| (frame.data[i] + frame.data[plane + i]).min(SATURATION as f32))
        .collect();
    Ok(EventFrame {
        channels: 1,
        data,
        slice_index: frame.slice_index,
    })
}

/// Slice → frame with the configured channel count (2 = ON/OFF, 1 = merged).
pub fn frame_from_slice(
    slice: &EventSlice,
    header: &StreamHeader,
    channels: usize,
) -> Result<EventFrame> {
    let grid = accumulate(slice, header)?;
    let frame = scale_and_crop(&grid, slice.slice_index)?;
    match channels {
        2 => Ok(frame),
        1 => merge_polarities(&frame),
        other => Err(Error::invalid(format!("channels must be 1 or 2, got {other}"))),
    }
}

/// Frame dump record: slice_index u32 LE, channels u8, then
/// channels·64·64 float32 LE values.
pub fn write_frame<W: Write>(writer: &mut W, frame: &EventFrame) -> Result<()> {
    writer.write_all(&(frame.slice_index as u32).to_le_bytes())?;
    writer.write_all(&[frame.channels as u8])?;
    for v in &frame.data {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<EventFrame>> {
    let mut idx = [0u8; 4];
    match reader.read(&mut idx)? {
        0 => return Ok(None),
        4 => {}
        n => {
            let mut rest = idx[n..].to_vec();
            reader.read_exact(&mut rest).map_err(Error::Io)?;
            idx[n..].copy_from_slice(&rest);
        }
    }
    let slice_index = u32::from_le_bytes(idx) as usize;
    let mut ch = [0u8; 1];
    reader.read_exact(&mut ch)?;
    let channels = ch[0] as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::format(format!("frame record channels = {channels}")));
    }
    let mut data = vec![0f32; channels * FRAME_SIZE * FRAME_SIZE];
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        reader.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    Ok(Some(EventFrame {
        channels,
        data,
        slice_index,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use crate::rng::Rng;

    fn slice_of(events: Vec<Event>) -> EventSlice {
        let t_start_us = events.first().map(|e| e.t_us).unwrap_or(0);
        let t_end_us = events.last().map(|e| e.t_us).unwrap_or(0);
        EventSlice {
            events,
            t_start_us,
            t_end_us,
            slice_index: 0,
        }
    }

    fn ev(x: u16, y: u16, on: bool) -> Event {
        Event {
            t_us: 0,
            x,
            y,
            polarity: if on { Polarity::On } else { Polarity::Off },
        }
    }

    #[test]
    fn empty_slice_gives_zero_grid_and_frame() {
        let header = StreamHeader::default();
        let grid = accumulate(&slice_of(vec![]), &header).unwrap();
        assert_eq!(grid.total(), 0);
        let frame = scale_and_crop(&grid, 0).unwrap();
        assert!(frame.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_pixel_counts() {
        let header = StreamHeader::default();
        let events = vec![ev(5, 7, true), ev(5, 7, true), ev(5, 7, true)];
        let grid = accumulate(&slice_of(events), &header).unwrap();
        assert_eq!(grid.get(0, 7, 5), 3);
        assert_eq!(grid.get(1, 7, 5), 0);
    }

    #[test]
    fn accumulate_conserves_count() {
        let header = StreamHeader::default();
        let mut rng = Rng::new(21);
        let events: Vec<Event> = (0..1000)
            .map(|_| {
                ev(
                    rng.below(640) as u16,
                    rng.below(480) as u16,
                    rng.flip(),
                )
            })
            .collect();
        let grid = accumulate(&slice_of(events), &header).unwrap();
        assert_eq!(grid.total(), 1000);
    }

    #[test]
    fn accumulate_is_linear_over_disjoint_sets() {
        let header = StreamHeader::default();
        let mut rng = Rng::new(8);
        let a: Vec<Event> = (0..500)
            .map(|_| ev(rng.below(640) as u16, rng.below(480) as u16, rng.flip()))
            .collect();
        let b: Vec<Event> = (0..500)
            .map(|_| ev(rng.below(640) as u16, rng.below(480) as u16, rng.flip()))
            .collect();
        let mut union = a.clone();
        union.extend(b.iter().copied());
        let ga = accumulate(&slice_of(a), &header).unwrap();
        let gb = accumulate(&slice_of(b), &header).unwrap();
        let gu = accumulate(&slice_of(union), &header).unwrap();
        for i in 0..gu.data.len() {
            assert_eq!(gu.data[i], ga.data[i] + gb.data[i]);
        }
    }

    #[test]
    fn center_event_maps_to_frame_center() {
        // Sensor (320, 240) → binned (80, 60) → cropped (32, 32).
        let header = StreamHeader::default();
        let grid = accumulate(&slice_of(vec![ev(320, 240, true)]), &header).unwrap();
        let frame = scale_and_crop(&grid, 0).unwrap();
        assert_eq!(frame.get(0, 32, 32), 1.0);
        assert_eq!(frame.total(), 1.0);
    }

    #[test]
    fn crop_offsets_match_geometry() {
        // First in-crop sensor pixel column is 48*4 = 192; row 28*4 = 112.
        let header = StreamHeader::default();
        let inside = accumulate(&slice_of(vec![ev(192, 112, true)]), &header).unwrap();
        let f = scale_and_crop(&inside, 0).unwrap();
        assert_eq!(f.get(0, 0, 0), 1.0);
        let outside = accumulate(&slice_of(vec![ev(191, 111, true)]), &header).unwrap();
        let f = scale_and_crop(&outside, 0).unwrap();
        assert_eq!(f.total(), 0.0);
    }

    #[test]
    fn saturation_caps_at_255() {
        let header = StreamHeader::default();
        let events = vec![ev(320, 240, true); 300];
        let grid = accumulate(&slice_of(events), &header).unwrap();
        let frame = scale_and_crop(&grid, 0).unwrap();
        assert_eq!(frame.get(0, 32, 32), 255.0);
    }

    #[test]
    fn merge_sums_and_saturates() {
        let header = StreamHeader::default();
        let mut events = vec![ev(320, 240, true)];
        events.extend(vec![ev(320, 240, false); 2]);
        let grid = accumulate(&slice_of(events), &header).unwrap();
        let frame = scale_and_crop(&grid, 0).unwrap();
        let merged = merge_polarities(&frame).unwrap();
        assert_eq!(merged.get(0, 32, 32), 3.0);

        // 200 ON + 200 OFF at one pixel merge to 400, capped at 255.
        let mut events = vec![ev(320, 240, true); 200];
        events.extend(vec![ev(320, 240, false); 200]);
        let grid = accumulate(&slice_of(events), &header).unwrap();
        let frame = scale_and_crop(&grid, 0).unwrap();
        let merged = merge_polarities(&frame).unwrap();
        assert_eq!(merged.get(0, 32, 32), 255.0);
    }

    #[test]
    fn merge_zeros_is_zeros() {
        let frame = EventFrame {
            channels: 2,
            data: vec![0.0; 2 * FRAME_SIZE * FRAME_SIZE],
            slice_index: 0,
        };
        let merged = merge_polarities(&frame).unwrap();
        assert!(merged.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn translation_by_one_bin_shifts_frame() {
        let header = StreamHeader::default();
        let mut rng = Rng::new(33);
        // Events inside the crop, away from its right edge so +4 stays inside.
        let events: Vec<Event> = (0..200)
            .map(|_| {
                ev(
                    (200 + rng.below(200)) as u16,
                    (120 + rng.below(200)) as u16,
                    rng.flip(),
                )
            })
            .collect();
        let shifted: Vec<Event> = events
            .iter()
            .map(|e| Event { x: e.x + 4, ..*e })
            .collect();
        let fa = scale_and_crop(&accumulate(&slice_of(events), &header).unwrap(), 0).unwrap();
        let fb = scale_and_crop(&accumulate(&slice_of(shifted), &header).unwrap(), 0).unwrap();
        for c in 0..2 {
            for y in 0..FRAME_SIZE {
                for x in 0..FRAME_SIZE - 1 {
                    assert_eq!(fa.get(c, y, x), fb.get(c, y, x + 1), "at c={c} y={y} x={x}");
                }
            }
        }
    }

    #[test]
    fn frame_dump_roundtrip() {
        let header = StreamHeader::default();
        let mut rng = Rng::new(2);
        let events: Vec<Event> = (0..500)
            .map(|_| ev(rng.below(640) as u16, rng.below(480) as u16, rng.flip()))
            .collect();
        let frame = frame_from_slice(&slice_of(events), &header, 2).unwrap();
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame).unwrap();
        assert_eq!(buf.len(), 4 + 1 + 2 * FRAME_SIZE * FRAME_SIZE * 4);
        let back = read_frame(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, frame);
        assert!(read_frame(&mut &buf[buf.len()..]).unwrap().is_none());
    }

    #[test]
    fn non_divisible_grid_rejected() {
        let grid = CountGrid::zeros(2, 480, 641);
        assert!(scale_and_crop(&grid, 0).is_err());
    }
}
