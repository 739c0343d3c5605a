//! Approximate-time matcher: pairs each LiDAR scan with the temporally
//! closest set of camera label images.
//!
//! Selection rule: over the currently buffered messages, pick one message per
//! stream minimizing the tuple spread (max - min stamp). Ties break toward
//! the earlier pivot, then the earlier per-stream message. A tuple is emitted
//! only when its spread is within the configured slop and its pivot is
//! strictly newer than the previously emitted pivot.

use crate::error::{Error, Result};
use crate::time::Timestamp;
use std::collections::VecDeque;

pub const DEFAULT_SLOP_NS: i64 = 50_000_000;
pub const DEFAULT_CAPACITY: usize = 10;

struct StreamBuffer<H> {
    id: String,
    queue: VecDeque<(Timestamp, H)>,
    capacity: usize,
    last_pushed: Option<Timestamp>,
}

#[derive(Clone, Debug)]
pub struct MatchedTuple<H> {
    /// One (stamp, handle) per stream, in stream registration order.
    pub members: Vec<(Timestamp, H)>,
    /// Max member stamp.
    pub pivot: Timestamp,
    /// Max - min member stamp, nanoseconds.
    pub spread: i64,
}

pub struct Matcher<H> {
    streams: Vec<StreamBuffer<H>>,
    last_pivot: Option<Timestamp>,
}

impl<H> Matcher<H> {
    pub fn new<S: Into<String>>(stream_ids: Vec<S>, capacity: usize) -> Self {
        assert!(capacity > 0);
        Matcher {
            streams: stream_ids
                .into_iter()
                .map(|id| StreamBuffer {
                    id: id.into(),
                    queue: VecDeque::new(),
                    capacity,
                    last_pushed: None,
                })
                .collect(),
            last_pivot: None,
        }
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    /// Buffer a message. Stamps per stream must be non-decreasing; the oldest
    /// message is evicted when the buffer is full.
    pub fn push(&mut self, stream: usize, stamp: Timestamp, handle: H) -> Result<()> {
        let buf = &mut self.streams[stream];
        if let Some(last) = buf.last_pushed {
            if stamp < last {
                return Err(Error::OutOfOrderStamp {
                    stream: buf.id.clone(),
                    stamp: stamp.as_nanos(),
                    last: last.as_nanos(),
                });
            }
        }
        buf.last_pushed = Some(stamp);
        if buf.queue.len() == buf.capacity {
            buf.queue.pop_front();
        }
        buf.queue.push_back((stamp, handle));
        Ok(())
    }

    /// Buffered stamps per stream, oldest first. Used by exhaustive checks.
    pub fn buffered_stamps(&self) -> Vec<Vec<Timestamp>> {
        self.streams
            .iter()
            .map(|s| s.queue.iter().map(|(t, _)| *t).collect())
            .collect()
    }

    /// Best currently admissible selection: per-stream queue indices plus
    /// (spread, pivot). The minimum member of the optimal tuple is always
    /// some buffered message; for each such anchor the per-stream choice that
    /// minimizes the spread is the earliest message at or after the anchor.
    fn best_candidate(&self) -> Option<(Vec<usize>, i64, Timestamp)> {
        if self.streams.iter().any(|s| s.queue.is_empty()) {
            return None;
        }
        let mut best: Option<(Vec<usize>, i64, Timestamp, Vec<Timestamp>)> = None;
        for anchor_stream in 0..self.streams.len() {
            let anchors: Vec<(usize, Timestamp)> = self.streams[anchor_stream]
                .queue
                .iter()
                .enumerate()
                .map(|(i, (t, _))| (i, *t))
                .collect();
            'anchors: for (anchor_idx, anchor) in anchors {
                let mut indices = vec![0usize; self.streams.len()];
                let mut stamps = vec![anchor; self.streams.len()];
                indices[anchor_stream] = anchor_idx;
                let mut pivot = anchor;
                for (s, buf) in self.streams.iter().enumerate() {
                    if s == anchor_stream {
                        continue;
                    }
                    match buf.queue.iter().position(|(t, _)| *t >= anchor) {
                        Some(i) => {
                            indices[s] = i;
                            let t = buf.queue[i].0;
                            stamps[s] = t;
                            if t > pivot {
                                pivot = t;
                            }
                        }
                        None => continue 'anchors,
                    }
                }
                if let Some(last) = self.last_pivot {
                    if pivot <= last {
                        continue;
                    }
                }
                let spread = pivot - anchor;
                let better = match &best {
                    None => true,
                    Some((_, bs, bp, bstamps)) => {
                        (spread, pivot, &stamps) < (*bs, *bp, bstamps)
                    }
                };
                if better {
                    best = Some((indices, spread, pivot, stamps));
                }
            }
        }
        best.map(|(i, s, p, _)| (i, s, p))
    }

    /// Emit the minimal-spread tuple if one exists within `slop_ns`.
    /// Emitted members and all strictly older messages are consumed.
    pub fn try_emit(&mut self, slop_ns: i64) -> Option<MatchedTuple<H>> {
        let (indices, spread, pivot) = self.best_candidate()?;
        if spread > slop_ns {
            return None;
        }
        let mut members = Vec::with_capacity(self.streams.len());
        for (s, &idx) in indices.iter().enumerate() {
            let buf = &mut self.streams[s];
            // drop strictly older messages, then take the selected one
            for _ in 0..idx {
                buf.queue.pop_front();
            }
            members.push(buf.queue.pop_front().expect("selected message present"));
        }
        self.last_pivot = Some(pivot);
        Some(MatchedTuple {
            members,
            pivot,
            spread,
        })
    }
}
