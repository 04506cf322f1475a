//! Exact byte accounting for mesh runs.

use serde::Serialize;

/// One transmitted message. `bytes` is the step message (step header plus
/// payload wire form); transport framing is not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageRecord {
    pub step: u32,
    pub round: u32,
    pub from: u32,
    pub to: u32,
    /// Device whose shard the message carries.
    pub origin: u32,
    pub bytes: u64,
    /// Size of the same shard as uncompressed 16-bit values.
    pub baseline_bytes: u64,
    pub warmup: bool,
}

/// Receiver-side count, used to check conservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReceiptRecord {
    pub step: u32,
    pub from: u32,
    pub to: u32,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ByteLedger {
    pub devices: usize,
    pub steps: usize,
    pub sent: Vec<MessageRecord>,
    pub received: Vec<ReceiptRecord>,
    /// False when the run aborted; totals then cover only what was recorded.
    pub valid: bool,
}

impl ByteLedger {
    pub(crate) fn assemble(
        devices: usize,
        steps: usize,
        mut sent: Vec<MessageRecord>,
        mut received: Vec<ReceiptRecord>,
        valid: bool,
    ) -> Self {
        sent.sort_by_key(|m| (m.step, m.round, m.from, m.to));
        received.sort_by_key(|r| (r.step, r.to, r.from));
        Self {
            devices,
            steps,
            sent,
            received,
            valid,
        }
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.iter().map(|m| m.bytes).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.received.iter().map(|r| r.bytes).sum()
    }

    pub fn total_baseline(&self) -> u64 {
        self.sent.iter().map(|m| m.baseline_bytes).sum()
    }

    pub fn sent_in_step(&self, step: u32) -> u64 {
        self.sent.iter().filter(|m| m.step == step).map(|m| m.bytes).sum()
    }

    pub fn received_in_step(&self, step: u32) -> u64 {
        self.received.iter().filter(|r| r.step == step).map(|r| r.bytes).sum()
    }

    pub fn baseline_in_step(&self, step: u32) -> u64 {
        self.sent
            .iter()
            .filter(|m| m.step == step)
            .map(|m| m.baseline_bytes)
            .sum()
    }

    pub fn device_sent_in_step(&self, device: u32, step: u32) -> u64 {
        self.sent
            .iter()
            .filter(|m| m.step == step && m.from == device)
            .map(|m| m.bytes)
            .sum()
    }

    /// Received bytes equal sent bytes in every step and on every directed link.
    pub fn conserved(&self) -> bool {
        let mut a: Vec<(u32, u32, u32, u64)> = self
            .sent
            .iter()
            .map(|m| (m.step, m.from, m.to, m.bytes))
            .collect();
        let mut b: Vec<(u32, u32, u32, u64)> = self
            .received
            .iter()
            .map(|r| (r.step, r.from, r.to, r.bytes))
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    /// Baseline over sent bytes, optionally leaving out warmup traffic.
    pub fn ratio(&self, include_warmup: bool) -> f64 {
        let (mut sent, mut base) = (0u64, 0u64);
        for m in self.sent.iter().filter(|m| include_warmup || !m.warmup) {
            sent += m.bytes;
            base += m.baseline_bytes;
        }
        if sent == 0 {
            0.0
        } else {
            base as f64 / sent as f64
        }
    }

    /// CSV with one row per message.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,round,from,to,origin,bytes,baseline_bytes,warmup\n");
        for m in &self.sent {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                m.step, m.round, m.from, m.to, m.origin, m.bytes, m.baseline_bytes, m.warmup as u8
            ));
        }
        s
    }
}
