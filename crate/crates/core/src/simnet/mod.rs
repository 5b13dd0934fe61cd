//! Stage-based network simulator with exact traffic accounting.
//!
//! Nodes form a full mesh with uniform bandwidth `b` (bits per time unit per
//! receiving node). A stage completes when its slowest receiver has taken in
//! every message addressed to it, so
//! `stage_time = max_node(received_bits) / b`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::EncodedMessage;
use crate::error::{Error, Result};

/// A message handed to its receiver at the end of a stage.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub from: usize,
    pub msg: Arc<EncodedMessage>,
}

#[derive(Debug, Clone, Default)]
struct OpenStage {
    sent: Vec<u64>,
    received: Vec<u64>,
    received_index: Vec<u64>,
    received_value: Vec<u64>,
    messages: Vec<u64>,
    inbox: Vec<Vec<Delivery>>,
}

impl OpenStage {
    fn new(n: usize) -> Self {
        OpenStage {
            sent: vec![0; n],
            received: vec![0; n],
            received_index: vec![0; n],
            received_value: vec![0; n],
            messages: vec![0; n],
            inbox: vec![Vec::new(); n],
        }
    }
}

/// Closed-stage ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub sent_bits: Vec<u64>,
    pub received_bits: Vec<u64>,
    pub received_index_bits: Vec<u64>,
    pub received_value_bits: Vec<u64>,
    pub messages_received: Vec<u64>,
    pub time: f64,
    pub value_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub n: usize,
    pub b: f64,
    pub stages: Vec<StageRecord>,
    pub total_sent: Vec<u64>,
    pub total_received: Vec<u64>,
    pub total_bits: u64,
    pub total_index_bits: u64,
    pub total_value_bits: u64,
    pub simulated_time: f64,
}

impl TrafficReport {
    /// Simulated time counting value payloads only, as the closed-form
    /// cost formulas do.
    pub fn value_time(&self) -> f64 {
        self.stages.iter().map(|s| s.value_time).sum()
    }

    pub fn max_received(&self) -> u64 {
        self.total_received.iter().copied().max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub struct SimNet {
    n: usize,
    b: f64,
    latency: f64,
    closed: Vec<StageRecord>,
    open: Vec<OpenStage>,
}

impl SimNet {
    pub fn new(n: usize, bandwidth: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidNetwork("network needs at least one node".into()));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidNetwork(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(SimNet {
            n,
            b: bandwidth,
            latency: 0.0,
            closed: Vec::new(),
            open: Vec::new(),
        })
    }

    /// Adds a fixed per-message latency to each receiver's stage time.
    pub fn with_latency(mut self, latency: f64) -> Self {
        self.latency = latency.max(0.0);
        self
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> f64 {
        self.b
    }

    /// Index of the earliest stage still accepting messages.
    pub fn current_stage(&self) -> usize {
        self.closed.len()
    }

    pub fn send(&mut self, stage: usize, from: usize, to: usize, msg: Arc<EncodedMessage>) -> Result<()> {
        for node in [from, to] {
            if node >= self.n {
                return Err(Error::UnknownNode { node, n: self.n });
            }
        }
        if from == to {
            return Err(Error::SelfSend(from));
        }
        let current = self.current_stage();
        if stage < current {
            return Err(Error::StageClosed { requested: stage, current });
        }
        let slot = stage - current;
        while self.open.len() <= slot {
            self.open.push(OpenStage::new(self.n));
        }
        let s = &mut self.open[slot];
        let bits = msg.payload_bits();
        s.sent[from] += bits;
        s.received[to] += bits;
        s.received_index[to] += msg.index_bits;
        s.received_value[to] += msg.value_bits;
        s.messages[to] += 1;
        s.inbox[to].push(Delivery { from, msg });
        Ok(())
    }

    /// Closes the current stage and returns each node's inbox ordered by sender.
    pub fn deliver(&mut self) -> Vec<Vec<Delivery>> {
        let stage = if self.open.is_empty() {
            OpenStage::new(self.n)
        } else {
            self.open.remove(0)
        };
        let per_node = |bits: &[u64], msgs: &[u64]| {
            bits.iter()
                .zip(msgs)
                .map(|(&x, &m)| x as f64 / self.b + m as f64 * self.latency)
                .fold(0.0, f64::max)
        };
        let time = per_node(&stage.received, &stage.messages);
        let value_time = per_node(&stage.received_value, &vec![0; self.n]);
        self.closed.push(StageRecord {
            sent_bits: stage.sent,
            received_bits: stage.received,
            received_index_bits: stage.received_index,
            received_value_bits: stage.received_value,
            messages_received: stage.messages,
            time,
            value_time,
        });
        let mut inbox = stage.inbox;
        for msgs in &mut inbox {
            msgs.sort_by_key(|d| d.from);
        }
        inbox
    }

    /// Closes every open stage and produces the report.
    pub fn finalize(mut self) -> Result<TrafficReport> {
        while !self.open.is_empty() {
            self.deliver();
        }
        let n = self.n;
        let mut total_sent = vec![0u64; n];
        let mut total_received = vec![0u64; n];
        let (mut index_bits, mut value_bits) = (0u64, 0u64);
        for (i, s) in self.closed.iter().enumerate() {
            let sent: u64 = s.sent_bits.iter().sum();
            let received: u64 = s.received_bits.iter().sum();
            if sent != received {
                return Err(Error::UnbalancedLedger { stage: i, sent, received });
            }
            for v in 0..n {
                total_sent[v] += s.sent_bits[v];
                total_received[v] += s.received_bits[v];
            }
            index_bits += s.received_index_bits.iter().sum::<u64>();
            value_bits += s.received_value_bits.iter().sum::<u64>();
        }
        Ok(TrafficReport {
            n,
            b: self.b,
            simulated_time: self.closed.iter().map(|s| s.time).sum(),
            total_bits: total_received.iter().sum(),
            total_index_bits: index_bits,
            total_value_bits: value_bits,
            total_sent,
            total_received,
            stages: self.closed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::WireFormat;

    fn msg(bits: u64) -> Arc<EncodedMessage> {
        Arc::new(EncodedMessage {
            format: WireFormat::COO,
            universe: 1,
            index_bits: bits / 4,
            value_bits: bits - bits / 4,
            payload: Vec::new(),
        })
    }

    #[test]
    fn single_message_time() {
        let mut net = SimNet::new(2, 100.0).unwrap();
        net.send(0, 0, 1, msg(100)).unwrap();
        net.deliver();
        let r = net.finalize().unwrap();
        assert_eq!(r.stages[0].time, 1.0);
        assert_eq!(r.simulated_time, 1.0);
        assert_eq!(r.stages[0].value_time, 0.75);
    }

    #[test]
    fn receiver_serializes_incast() {
        let mut net = SimNet::new(4, 100.0).unwrap();
        for from in 1..4 {
            net.send(0, from, 0, msg(100)).unwrap();
        }
        let inbox = net.deliver();
        assert_eq!(inbox[0].iter().map(|d| d.from).collect::<Vec<_>>(), vec![1, 2, 3]);
        let r = net.finalize().unwrap();
        assert_eq!(r.stages[0].time, 3.0);
        assert_eq!(r.total_sent, vec![0, 100, 100, 100]);
    }

    #[test]
    fn empty_stage_and_run() {
        let mut net = SimNet::new(3, 1.0).unwrap();
        net.deliver();
        let r = net.finalize().unwrap();
        assert_eq!(r.stages.len(), 1);
        assert_eq!(r.stages[0].time, 0.0);
        let r = SimNet::new(3, 1.0).unwrap().finalize().unwrap();
        assert!(r.stages.is_empty());
        assert_eq!((r.simulated_time, r.total_bits), (0.0, 0));
    }

    #[test]
    fn rejects_bad_sends() {
        let mut net = SimNet::new(2, 1.0).unwrap();
        assert_eq!(net.send(0, 1, 1, msg(1)), Err(Error::SelfSend(1)));
        assert_eq!(net.send(0, 0, 5, msg(1)), Err(Error::UnknownNode { node: 5, n: 2 }));
        net.deliver();
        assert_eq!(
            net.send(0, 0, 1, msg(1)),
            Err(Error::StageClosed { requested: 0, current: 1 })
        );
        assert!(SimNet::new(2, 0.0).is_err());
        assert!(SimNet::new(0, 1.0).is_err());
    }

    #[test]
    fn future_stages_queue_separately() {
        let mut net = SimNet::new(2, 10.0).unwrap();
        net.send(1, 0, 1, msg(40)).unwrap();
        net.send(0, 1, 0, msg(20)).unwrap();
        let first = net.deliver();
        assert_eq!(first[0].len(), 1);
        assert!(first[1].is_empty());
        let r = net.finalize().unwrap();
        assert_eq!(r.stages.len(), 2);
        assert_eq!(r.simulated_time, 6.0);
        assert_eq!(r.max_received(), 40);
    }

    #[test]
    fn latency_hook() {
        let mut net = SimNet::new(2, 100.0).unwrap().with_latency(0.5);
        net.send(0, 0, 1, msg(100)).unwrap();
        net.send(0, 0, 1, msg(100)).unwrap();
        let r = net.finalize().unwrap();
        assert_eq!(r.simulated_time, 3.0);
    }

    #[test]
    fn report_json_shape() {
        let mut net = SimNet::new(2, 1.0).unwrap();
        net.send(0, 0, 1, msg(8)).unwrap();
        let json: serde_json::Value = serde_json::from_str(&net.finalize().unwrap().to_json()).unwrap();
        for key in ["n", "b", "stages", "total_bits", "simulated_time"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
