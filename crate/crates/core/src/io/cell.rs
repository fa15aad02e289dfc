use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use super::sample::{MessageKind, SampleMessage};

#[derive(Debug, Default)]
struct CellInner {
    latest: Option<SampleMessage>,
    arrived: Option<Instant>,
}

/// Latest-value slot. Lower-seq arrivals never replace a fresher message.
#[derive(Debug, Clone, Default)]
pub struct LatestCell {
    inner: Arc<Mutex<CellInner>>,
    stats: Arc<CellStats>,
}

#[derive(Debug, Default)]
pub struct CellStats {
    pub accepted: AtomicU64,
    pub rejected_stale: AtomicU64,
}

impl LatestCell {
    pub fn new() -> Self {
        LatestCell::default()
    }

    /// Stores `msg` if it is newer than what the cell holds; returns whether it was kept.
    pub fn offer(&self, msg: SampleMessage) -> bool {
        let mut inner = self.inner.lock().unwrap();
        let fresher = inner.latest.is_none_or(|cur| msg.seq > cur.seq);
        if fresher {
            inner.latest = Some(msg);
            inner.arrived = Some(Instant::now());
            self.stats.accepted.fetch_add(1, Ordering::Relaxed);
        } else {
            self.stats.rejected_stale.fetch_add(1, Ordering::Relaxed);
        }
        fresher
    }

    pub fn latest(&self) -> Option<SampleMessage> {
        self.inner.lock().unwrap().latest
    }

    /// Latest message with its local arrival instant.
    pub fn latest_with_arrival(&self) -> Option<(SampleMessage, Instant)> {
        let inner = self.inner.lock().unwrap();
        inner.latest.zip(inner.arrived)
    }

    pub fn accepted(&self) -> u64 {
        self.stats.accepted.load(Ordering::Relaxed)
    }

    pub fn rejected_stale(&self) -> u64 {
        self.stats.rejected_stale.load(Ordering::Relaxed)
    }
}

/// Cells keyed by message stream, shared by everything reading one endpoint.
#[derive(Debug, Clone, Default)]
pub struct Demux {
    cells: Arc<Mutex<HashMap<(MessageKind, u16), LatestCell>>>,
}

impl Demux {
    pub fn cell(&self, kind: MessageKind, loop_id: u16) -> LatestCell {
        self.cells
            .lock()
            .unwrap()
            .entry((kind, loop_id))
            .or_default()
            .clone()
    }

    pub fn dispatch(&self, msg: SampleMessage) -> bool {
        self.cell(msg.kind, msg.loop_id).offer(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::TickTime;

    fn msg(seq: u32, v: f64) -> SampleMessage {
        SampleMessage::new(MessageKind::SensorSample, 0, seq, TickTime(0), v)
    }

    #[test]
    fn stale_arrivals_are_ignored() {
        let c = LatestCell::new();
        assert!(c.offer(msg(5, 1.0)));
        assert!(!c.offer(msg(3, 2.0)));
        assert!(!c.offer(msg(5, 3.0)));
        assert_eq!(c.latest().unwrap().value, 1.0);
        assert!(c.offer(msg(6, 4.0)));
        assert_eq!(c.latest().unwrap().value, 4.0);
        assert_eq!((c.accepted(), c.rejected_stale()), (2, 2));
    }

    #[test]
    fn demux_separates_streams() {
        let d = Demux::default();
        d.dispatch(msg(1, 1.0));
        d.dispatch(SampleMessage::new(MessageKind::ActuatorCmd, 0, 1, TickTime(0), 9.0));
        assert_eq!(d.cell(MessageKind::SensorSample, 0).latest().unwrap().value, 1.0);
        assert_eq!(d.cell(MessageKind::ActuatorCmd, 0).latest().unwrap().value, 9.0);
        assert!(d.cell(MessageKind::SensorSample, 1).latest().is_none());
    }

    proptest::proptest! {
        #[test]
        fn cell_holds_max_seq(seqs in proptest::collection::vec(0u32..1000, 1..100)) {
            let c = LatestCell::new();
            for s in &seqs {
                c.offer(msg(*s, *s as f64));
            }
            proptest::prop_assert_eq!(c.latest().unwrap().seq, *seqs.iter().max().unwrap());
        }
    }
}
