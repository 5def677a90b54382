//! Run counters and the derived metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::spectrum::ChannelId;

/// Raw tallies of one run. The measured population is packets generated
/// after warmup (or all packets when the warmup cut is off).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Counters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub queued_at_end: u64,
    /// Sum of delivery delays of measured packets, seconds.
    pub delay_sum: f64,
    /// Bits of measured packets delivered.
    pub delivered_bits: u64,
    /// Bits delivered per channel, measured packets only.
    pub channel_bits: BTreeMap<ChannelId, u64>,
    /// Every packet regardless of warmup.
    pub total_generated: u64,
    pub total_delivered: u64,
    pub total_dropped: u64,
    pub total_queued_at_end: u64,
    pub doze_slots: u64,
    /// Node-slots in the communication windows that were run.
    pub node_slots: u64,
}

impl Counters {
    pub fn conserved(&self) -> bool {
        self.generated == self.delivered + self.dropped + self.queued_at_end
            && self.total_generated == self.total_delivered + self.total_dropped + self.total_queued_at_end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub queued_at_end: u64,
    pub throughput_bps: f64,
    pub normalized_throughput: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub pdr: Option<f64>,
    pub doze_fraction: Option<f64>,
    /// Delivered bits per second on each channel.
    pub channel_throughput: BTreeMap<ChannelId, f64>,
}

/// `window` is the measured span in seconds. Normalization is skipped
/// when the baseline delivered nothing.
pub fn compute_metrics(c: &Counters, window: f64, baseline_throughput: Option<f64>) -> Result<Metrics> {
    if !c.conserved() {
        return Err(Error::Contract(format!(
            "packet conservation broken: {} generated, {} delivered, {} dropped, {} queued",
            c.generated, c.delivered, c.dropped, c.queued_at_end
        )));
    }
    let per_sec = |bits: u64| if window > 0.0 { bits as f64 / window } else { 0.0 };
    let throughput_bps = per_sec(c.delivered_bits);
    let normalized_throughput = match baseline_throughput {
        Some(b) if b > 0.0 => Some(throughput_bps / b),
        _ => None,
    };
    Ok(Metrics {
        generated: c.generated,
        delivered: c.delivered,
        dropped: c.dropped,
        queued_at_end: c.queued_at_end,
        throughput_bps,
        normalized_throughput,
        mean_delay_s: (c.delivered > 0).then(|| c.delay_sum / c.delivered as f64),
        pdr: (c.generated > 0).then(|| c.delivered as f64 / c.generated as f64),
        doze_fraction: (c.node_slots > 0).then(|| c.doze_slots as f64 / c.node_slots as f64),
        channel_throughput: c.channel_bits.iter().map(|(&ch, &b)| (ch, per_sec(b))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counters(generated: u64, delivered: u64) -> Counters {
        Counters {
            generated,
            delivered,
            dropped: generated - delivered,
            delivered_bits: delivered * 8000,
            delay_sum: delivered as f64 * 0.05,
            total_generated: generated,
            total_delivered: delivered,
            total_dropped: generated - delivered,
            ..Counters::default()
        }
    }

    #[test]
    fn nothing_delivered() {
        let m = compute_metrics(&counters(100, 0), 10.0, None).unwrap();
        assert_eq!(m.pdr, Some(0.0));
        assert_eq!(m.throughput_bps, 0.0);
        assert_eq!(m.mean_delay_s, None);
    }

    #[test]
    fn ninety_percent() {
        let m = compute_metrics(&counters(100, 90), 10.0, None).unwrap();
        assert!((m.pdr.unwrap() - 0.9).abs() < 1e-12);
        assert!((m.mean_delay_s.unwrap() - 0.05).abs() < 1e-12);
        assert!((m.throughput_bps - 72_000.0).abs() < 1e-9);
    }

    #[test]
    fn nothing_generated_has_no_pdr() {
        let m = compute_metrics(&Counters::default(), 0.0, Some(1.0)).unwrap();
        assert_eq!(m.pdr, None);
        assert_eq!(m.throughput_bps, 0.0);
        assert_eq!(m.normalized_throughput, Some(0.0));
    }

    #[test]
    fn normalization_ratio() {
        let m = compute_metrics(&counters(100, 100), 1.0, Some(800_000.0 / 7.4)).unwrap();
        assert!((m.normalized_throughput.unwrap() - 7.4).abs() < 1e-9);
    }

    #[test]
    fn broken_conservation_is_an_error() {
        let mut c = counters(10, 5);
        c.dropped = 0;
        assert!(compute_metrics(&c, 1.0, None).is_err());
    }
}
