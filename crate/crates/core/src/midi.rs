//! Standard MIDI File reading and writing for the note-event subset,
//! plus piano-roll sampling at analysis frame times.
//!
//! Reads SMF type 0 and 1 (note-on/off, tempo map, channels merged);
//! writes type 0 at 480 ticks per quarter with a fixed 120 BPM tempo
//! event, so one tick is 1/960 s.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{AmtError, Result};
use crate::segment::NoteEvent;

pub const WRITE_TICKS_PER_QUARTER: u16 = 480;
pub const WRITE_TEMPO_USPQ: u32 = 500_000; // 120 BPM
const DEFAULT_TEMPO_USPQ: u32 = 500_000;

/// A parsed (or to-be-written) score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrack {
    /// Note events sorted by onset.
    pub events: Vec<NoteEvent>,
    pub ticks_per_quarter: u16,
    /// (tick, microseconds per quarter), sorted by tick.
    pub tempo_map: Vec<(u64, u32)>,
}

impl ScoreTrack {
    pub fn new(mut events: Vec<NoteEvent>) -> Self {
        events.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap().then(a.pitch.cmp(&b.pitch)));
        ScoreTrack {
            events,
            ticks_per_quarter: WRITE_TICKS_PER_QUARTER,
            tempo_map: vec![(0, WRITE_TEMPO_USPQ)],
        }
    }

    pub fn duration(&self) -> f64 {
        self.events.iter().map(|e| e.offset).fold(0.0, f64::max)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(AmtError::MalformedFile("unexpected end of file".into()));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn vlq(&mut self) -> Result<u32> {
        let mut value = 0u32;
        for _ in 0..4 {
            let byte = self.u8()?;
            value = (value << 7) | (byte & 0x7F) as u32;
            if byte & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(AmtError::MalformedFile("variable-length quantity too long".into()))
    }
}

#[derive(Debug)]
struct TickEvent {
    tick: u64,
    pitch: u8,
    on: bool,
}

fn parse_track(data: &[u8], notes: &mut Vec<TickEvent>, tempos: &mut Vec<(u64, u32)>) -> Result<()> {
    let mut r = Reader { bytes: data, at: 0 };
    let mut tick = 0u64;
    let mut running_status: Option<u8> = None;

    while r.at < data.len() {
        tick += r.vlq()? as u64;
        let mut status = r.u8()?;
        if status < 0x80 {
            // running status: the byte just read is the first data byte
            status = running_status
                .ok_or_else(|| AmtError::MalformedFile("data byte without status".into()))?;
            r.at -= 1;
        }
        match status {
            0x80..=0xEF => {
                running_status = Some(status);
                let kind = status >> 4;
                let data_len = if matches!(kind, 0xC | 0xD) { 1 } else { 2 };
                let data_bytes = r.take(data_len)?;
                match kind {
                    0x9 => notes.push(TickEvent { tick, pitch: data_bytes[0], on: data_bytes[1] > 0 }),
                    0x8 => notes.push(TickEvent { tick, pitch: data_bytes[0], on: false }),
                    _ => {}
                }
            }
            0xFF => {
                running_status = None;
                let meta_type = r.u8()?;
                let len = r.vlq()? as usize;
                let body = r.take(len)?;
                match meta_type {
                    0x51 => {
                        if len != 3 {
                            return Err(AmtError::MalformedFile("bad tempo event length".into()));
                        }
                        let uspq = ((body[0] as u32) << 16) | ((body[1] as u32) << 8) | body[2] as u32;
                        tempos.push((tick, uspq));
                    }
                    0x2F => return Ok(()),
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running_status = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            _ => return Err(AmtError::MalformedFile(format!("unexpected status byte {status:#x}"))),
        }
    }
    Ok(())
}

/// Piecewise conversion of an absolute tick under a tempo map.
fn tick_to_seconds(tick: u64, tempo_map: &[(u64, u32)], tpq: u16) -> f64 {
    let mut seconds = 0.0;
    let mut prev_tick = 0u64;
    let mut uspq = DEFAULT_TEMPO_USPQ;
    for &(change_tick, change_uspq) in tempo_map {
        if change_tick >= tick {
            break;
        }
        seconds += (change_tick - prev_tick) as f64 * uspq as f64 / (tpq as f64 * 1e6);
        prev_tick = change_tick;
        uspq = change_uspq;
    }
    seconds + (tick - prev_tick) as f64 * uspq as f64 / (tpq as f64 * 1e6)
}

/// Read an SMF type 0 or 1 file. Channels and tracks are merged;
/// velocity-0 note-ons count as note-offs; unmatched note-ons are
/// closed at end of track with a warning.
pub fn read_midi(path: &Path) -> Result<ScoreTrack> {
    let bytes = fs::read(path).map_err(|e| AmtError::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut r = Reader { bytes: &bytes, at: 0 };

    if r.take(4)? != b"MThd" {
        return Err(AmtError::MalformedFile("missing MThd header".into()));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(AmtError::MalformedFile("short MThd header".into()));
    }
    let format = r.u16()?;
    let n_tracks = r.u16()?;
    let division = r.u16()?;
    r.take(header_len - 6)?;

    if format > 1 {
        return Err(AmtError::MalformedFile(format!("SMF type {format} not supported")));
    }
    if division & 0x8000 != 0 {
        return Err(AmtError::MalformedFile("SMPTE time division not supported".into()));
    }
    if division == 0 {
        return Err(AmtError::MalformedFile("zero ticks per quarter".into()));
    }

    let mut notes: Vec<TickEvent> = Vec::new();
    let mut tempos: Vec<(u64, u32)> = Vec::new();
    for _ in 0..n_tracks {
        if r.take(4)? != b"MTrk" {
            return Err(AmtError::MalformedFile("missing MTrk chunk".into()));
        }
        let len = r.u32()? as usize;
        let body = r.take(len)?;
        parse_track(body, &mut notes, &mut tempos)?;
    }
    tempos.sort_by_key(|&(tick, _)| tick);

    // pair note-ons with note-offs per pitch, first-in first-out
    notes.sort_by_key(|e| (e.tick, e.on));
    let end_tick = notes.last().map(|e| e.tick).unwrap_or(0);
    let mut open: Vec<Vec<u64>> = vec![Vec::new(); 128];
    let mut events = Vec::new();
    let close = |pitch: u8, on_tick: u64, off_tick: u64, events: &mut Vec<NoteEvent>| {
        let onset = tick_to_seconds(on_tick, &tempos, division);
        let offset = tick_to_seconds(off_tick.max(on_tick + 1), &tempos, division);
        events.push(NoteEvent::new(pitch, onset, offset));
    };
    for e in &notes {
        if e.on {
            open[e.pitch as usize].push(e.tick);
        } else if !open[e.pitch as usize].is_empty() {
            let on_tick = open[e.pitch as usize].remove(0);
            close(e.pitch, on_tick, e.tick, &mut events);
        }
    }
    for (pitch, stack) in open.iter().enumerate() {
        for &on_tick in stack {
            log::warn!("note-on without note-off for pitch {pitch}; closing at end of track");
            close(pitch as u8, on_tick, end_tick, &mut events);
        }
    }

    let mut track = ScoreTrack::new(events);
    track.ticks_per_quarter = division;
    track.tempo_map = if tempos.is_empty() { vec![(0, DEFAULT_TEMPO_USPQ)] } else { tempos };
    Ok(track)
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7F) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let mut byte = stack[i];
        if i > 0 {
            byte |= 0x80;
        }
        out.push(byte);
    }
}

/// Write an SMF type 0 file at 480 ticks per quarter, fixed 120 BPM.
pub fn write_midi(path: &Path, track: &ScoreTrack) -> Result<()> {
    let ticks_per_second = WRITE_TICKS_PER_QUARTER as f64 * 1e6 / WRITE_TEMPO_USPQ as f64;

    // (tick, is_on, pitch); offs sort before ons at the same tick
    let mut moments: Vec<(u64, bool, u8)> = Vec::new();
    for e in &track.events {
        let on_tick = (e.onset * ticks_per_second).round() as u64;
        let off_tick = ((e.offset * ticks_per_second).round() as u64).max(on_tick + 1);
        moments.push((on_tick, true, e.pitch));
        moments.push((off_tick, false, e.pitch));
    }
    moments.sort_by_key(|&(tick, on, pitch)| (tick, on, pitch));

    let mut body = Vec::new();
    push_vlq(&mut body, 0);
    body.extend_from_slice(&[0xFF, 0x51, 0x03]);
    body.extend_from_slice(&WRITE_TEMPO_USPQ.to_be_bytes()[1..4]);

    let mut prev_tick = 0u64;
    for (tick, on, pitch) in moments {
        push_vlq(&mut body, (tick - prev_tick) as u32);
        prev_tick = tick;
        if on {
            body.extend_from_slice(&[0x90, pitch, 80]);
        } else {
            body.extend_from_slice(&[0x80, pitch, 0]);
        }
    }
    push_vlq(&mut body, 0);
    body.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(body.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&WRITE_TICKS_PER_QUARTER.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    fs::write(path, out)?;
    Ok(())
}

/// Sample a binary piano roll at frame times: cell (i, t) is 1 iff some
/// event of pitch i covers t*hop under the half-open [onset, offset)
/// convention. Events that fall between frame times produce no cells
/// and are flagged with a warning.
pub fn sample_roll(track: &ScoreTrack, hop: f64, n_frames: usize, pitch_range: (u8, u8)) -> Array2<u8> {
    let (lo, hi) = pitch_range;
    let n_pitches = (hi - lo + 1) as usize;
    let mut roll = Array2::<u8>::zeros((n_pitches, n_frames));
    for e in &track.events {
        if e.pitch < lo || e.pitch > hi {
            continue;
        }
        let row = (e.pitch - lo) as usize;
        let t_start = ((e.onset / hop) - 1e-9).ceil().max(0.0) as usize;
        let t_end = ((((e.offset / hop) - 1e-9).ceil().max(0.0)) as usize).min(n_frames);
        if t_start >= t_end {
            log::warn!(
                "event at pitch {} ({:.4}-{:.4} s) falls between frame times and samples to nothing",
                e.pitch, e.onset, e.offset
            );
            continue;
        }
        for t in t_start..t_end {
            roll[(row, t)] = 1;
        }
    }
    roll
}
