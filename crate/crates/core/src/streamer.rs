//! Beat-trio status flags and accumulator-triggered transmission.
//!
//! When beat `n-1` is labeled PVC, the flags of beats `n-2`, `n-1` and `n`
//! are raised. A beat's flag is therefore final two beats after it arrives;
//! that is when it leaves the window and, if flagged, joins the transmit
//! queue. A PVC on the last beat of a stream is closed by [`Streamer::finish`]
//! without its missing right delimiter.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::beat::{AnnotationLabel, BeatClass};

/// Beats labeled Other drive the flags as Normal.
pub fn flag_label(label: AnnotationLabel) -> BeatClass {
    label.class().unwrap_or(BeatClass::Normal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamerConfig {
    /// Notify once more than this many PVC labels have accumulated.
    pub th: u64,
    /// Stop monitoring after this many beats.
    pub n_th: u64,
}

impl Default for StreamerConfig {
    fn default() -> Self {
        StreamerConfig {
            th: 0,
            n_th: u64::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransmitDecision {
    Continue,
    NotifyAndTransmit,
    StopMonitoring,
}

/// A beat whose flag can no longer change.
#[derive(Debug, Clone, PartialEq)]
pub struct Finalized<T> {
    pub item: T,
    /// Zero-based position in the stream.
    pub index: u64,
    pub label: BeatClass,
    pub flag: bool,
}

#[derive(Debug, Clone)]
struct Slot<T> {
    item: T,
    index: u64,
    label: BeatClass,
    flag: bool,
}

impl<T> Slot<T> {
    fn finalize(self) -> Finalized<T> {
        Finalized {
            item: self.item,
            index: self.index,
            label: self.label,
            flag: self.flag,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Streamer<T> {
    cfg: StreamerConfig,
    window: VecDeque<Slot<T>>,
    emitted: VecDeque<Finalized<T>>,
    acc: u64,
    count: u64,
}

impl<T: Clone> Streamer<T> {
    pub fn new(cfg: StreamerConfig) -> Self {
        Streamer {
            cfg,
            window: VecDeque::with_capacity(3),
            emitted: VecDeque::new(),
            acc: 0,
            count: 0,
        }
    }

    /// PVC labels seen so far.
    pub fn accumulator(&self) -> u64 {
        self.acc
    }

    /// Beats ingested so far.
    pub fn beat_count(&self) -> u64 {
        self.count
    }

    /// Ingests one labeled beat and returns the beat finalized by it, if any.
    pub fn step(&mut self, item: T, label: BeatClass) -> Vec<Finalized<T>> {
        self.window.push_back(Slot {
            item,
            index: self.count,
            label,
            flag: false,
        });
        self.count += 1;
        if label == BeatClass::Pvc {
            self.acc += 1;
        }
        let len = self.window.len();
        if len >= 2 && self.window[len - 2].label == BeatClass::Pvc {
            for slot in self.window.iter_mut().skip(len.saturating_sub(3)) {
                slot.flag = true;
            }
        }
        let mut out = Vec::new();
        while self.window.len() > 2 {
            let done = self.window.pop_front().expect("window is non-empty").finalize();
            self.record(&done);
            out.push(done);
        }
        out
    }

    /// Ends the stream: closes a trailing PVC and finalizes the window.
    pub fn finish(&mut self) -> Vec<Finalized<T>> {
        if self.window.back().is_some_and(|s| s.label == BeatClass::Pvc) {
            for slot in self.window.iter_mut() {
                slot.flag = true;
            }
        }
        let mut out = Vec::new();
        while let Some(slot) = self.window.pop_front() {
            let done = slot.finalize();
            self.record(&done);
            out.push(done);
        }
        out
    }

    fn record(&mut self, done: &Finalized<T>) {
        if done.flag {
            self.emitted.push_back(done.clone());
        }
    }

    pub fn check_transmit(&self) -> TransmitDecision {
        if self.count >= self.cfg.n_th {
            TransmitDecision::StopMonitoring
        } else if self.acc > self.cfg.th {
            TransmitDecision::NotifyAndTransmit
        } else {
            TransmitDecision::Continue
        }
    }

    /// Flagged beats cleared for transmission and not yet handed out.
    pub fn drain_emitted(&mut self) -> Vec<Finalized<T>> {
        self.emitted.drain(..).collect()
    }

    pub fn pending_emitted(&self) -> usize {
        self.emitted.len()
    }
}

/// Final status flags for a whole label sequence.
pub fn status_flags(labels: &[BeatClass]) -> Vec<bool> {
    let mut s: Streamer<()> = Streamer::new(StreamerConfig::default());
    let mut flags = vec![false; labels.len()];
    let mut apply = |done: Vec<Finalized<()>>| {
        for f in done {
            flags[f.index as usize] = f.flag;
        }
    };
    for &l in labels {
        apply(s.step((), l));
    }
    apply(s.finish());
    flags
}

/// Number of beats a label sequence puts on the wire.
pub fn worst_case_overhead(labels: &[BeatClass]) -> usize {
    status_flags(labels).into_iter().filter(|&f| f).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub index: u64,
    pub label: BeatClass,
    pub flag: bool,
    pub transmitted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation<T> {
    /// One row per finalized beat, in stream order.
    pub trace: Vec<TraceRow>,
    /// Transmitted beats in order.
    pub transmitted: Vec<Finalized<T>>,
    /// Beat count at the first notification.
    pub notified_at: Option<u64>,
    /// Beat count when monitoring stopped early.
    pub stopped_at: Option<u64>,
}

/// Drives a stream through the state machine, flushing the transmit queue
/// whenever the accumulator trigger holds.
pub fn simulate<T: Clone>(
    beats: impl IntoIterator<Item = (T, BeatClass)>,
    cfg: StreamerConfig,
) -> Simulation<T> {
    let mut s = Streamer::new(cfg);
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut transmitted = Vec::new();
    let mut notified_at = None;
    let mut stopped_at = None;
    let push_rows = |done: Vec<Finalized<T>>, trace: &mut Vec<TraceRow>| {
        trace.extend(done.into_iter().map(|f| TraceRow {
            index: f.index,
            label: f.label,
            flag: f.flag,
            transmitted: false,
        }));
    };
    let flush = |s: &mut Streamer<T>, trace: &mut Vec<TraceRow>, out: &mut Vec<Finalized<T>>| {
        for f in s.drain_emitted() {
            trace[f.index as usize].transmitted = true;
            out.push(f);
        }
    };

    for (item, label) in beats {
        let done = s.step(item, label);
        push_rows(done, &mut trace);
        match s.check_transmit() {
            TransmitDecision::Continue => {}
            TransmitDecision::NotifyAndTransmit => {
                notified_at.get_or_insert(s.beat_count());
                flush(&mut s, &mut trace, &mut transmitted);
            }
            TransmitDecision::StopMonitoring => {
                stopped_at = Some(s.beat_count());
                break;
            }
        }
    }
    let done = s.finish();
    push_rows(done, &mut trace);
    if s.accumulator() > cfg.th {
        notified_at.get_or_insert(s.beat_count());
        flush(&mut s, &mut trace, &mut transmitted);
    }
    Simulation {
        trace,
        transmitted,
        notified_at,
        stopped_at,
    }
}
