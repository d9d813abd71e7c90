//! Pulsed second-order correlation from two detector streams.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::PhotonEvent;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct G2Config {
    pub bin_width_ns: f64,
    /// Histogram half-range; a whole number of periods.
    pub window_ns: f64,
    pub period_ns: f64,
    /// Half-width of the window integrated around each peak.
    pub peak_half_width_ns: f64,
    pub side_peaks: usize,
}

impl Default for G2Config {
    fn default() -> Self {
        G2Config {
            bin_width_ns: 25.0,
            window_ns: 6.0 * 3250.0,
            period_ns: 3250.0,
            peak_half_width_ns: 1000.0,
            side_peaks: 5,
        }
    }
}

impl G2Config {
    /// Smallest window holding `side_peaks` peaks on each side.
    pub fn for_period(period_ns: f64, gate_ns: f64, side_peaks: usize) -> Self {
        G2Config {
            window_ns: (side_peaks as f64 + 1.0) * period_ns,
            period_ns,
            peak_half_width_ns: gate_ns,
            side_peaks,
            ..G2Config::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let whole = |a: f64, b: f64| b > 0.0 && ((a / b) - (a / b).round()).abs() < 1e-9;
        if !(self.bin_width_ns > 0.0 && self.window_ns > 0.0) {
            return Err(Error::config("correlation", "bin width and window must be > 0"));
        }
        if !whole(self.window_ns, self.bin_width_ns) {
            return Err(Error::config("correlation.bin_width_ns", "must divide the window"));
        }
        if !whole(self.window_ns, self.period_ns) {
            return Err(Error::config("correlation.window_ns", "must be a whole number of periods"));
        }
        Ok(())
    }

    fn half_bins(&self) -> usize {
        (self.window_ns / self.bin_width_ns).round() as usize
    }
}

/// Coincidence counts per delay bin `t₂ − t₁`; bin `i` is centred on
/// `(i − n) × bin_width` for `n` bins per side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G2Histogram {
    pub config: G2Config,
    pub counts: Vec<u64>,
    pub pairs: u64,
    /// One of the streams was empty.
    pub empty: bool,
}

impl G2Histogram {
    pub fn delay_ns(&self, i: usize) -> f64 {
        (i as f64 - self.config.half_bins() as f64) * self.config.bin_width_ns
    }

    /// Counts in bins whose centre lies within the peak window at `k` periods.
    pub fn peak_integral(&self, k: i64) -> u64 {
        let c = k as f64 * self.config.period_ns;
        let h = self.config.peak_half_width_ns;
        self.counts
            .iter()
            .enumerate()
            .filter(|(i, _)| (self.delay_ns(*i) - c).abs() <= h)
            .map(|(_, &n)| n)
            .sum()
    }

    /// `(k, integral)` for the zero peak and the configured side peaks.
    pub fn peaks(&self) -> Vec<(i64, u64)> {
        let n = self.config.side_peaks as i64;
        (-n..=n).map(|k| (k, self.peak_integral(k))).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "delay_ns,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{c}", self.delay_ns(i))?;
        }
        Ok(())
    }
}

fn check_sorted(s: &[f64]) -> Result<()> {
    if s.windows(2).any(|w| w[1] < w[0]) || s.iter().any(|t| !t.is_finite()) {
        return Err(Error::precondition("timestamps must be finite and sorted"));
    }
    Ok(())
}

/// All-pairs histogram of `t₂ − t₁` within ±window.
pub fn coincidence_histogram(stream1: &[f64], stream2: &[f64], config: &G2Config) -> Result<G2Histogram> {
    config.validate()?;
    check_sorted(stream1)?;
    check_sorted(stream2)?;
    let n = config.half_bins();
    let (b, w) = (config.bin_width_ns, config.window_ns);
    let counts = stream1
        .par_chunks(8192)
        .map(|chunk| {
            let mut h = vec![0u64; 2 * n + 1];
            let mut lo = stream2.partition_point(|&t| t < chunk[0] - w);
            for &t1 in chunk {
                while lo < stream2.len() && stream2[lo] < t1 - w {
                    lo += 1;
                }
                for &t2 in &stream2[lo..] {
                    let d = t2 - t1;
                    if d > w {
                        break;
                    }
                    let i = (d / b).round() as i64 + n as i64;
                    h[i.clamp(0, 2 * n as i64) as usize] += 1;
                }
            }
            h
        })
        .reduce(
            || vec![0u64; 2 * n + 1],
            |mut a, h| {
                for (x, y) in a.iter_mut().zip(&h) {
                    *x += y;
                }
                a
            },
        );
    let pairs = counts.iter().sum();
    Ok(G2Histogram {
        config: *config,
        counts,
        pairs,
        empty: stream1.is_empty() || stream2.is_empty(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G2Zero {
    pub value: f64,
    pub uncertainty: f64,
    pub zero_peak: u64,
    pub side_peaks: Vec<u64>,
    /// 95% upper limit when the zero peak is empty.
    pub upper_bound: Option<f64>,
}

/// Zero-delay peak over the mean side peak, with Poisson errors.
pub fn g2_zero(hist: &G2Histogram) -> Result<G2Zero> {
    let c = &hist.config;
    if c.side_peaks < 2 {
        return Err(Error::precondition("g²(0) needs at least 2 side peaks per side"));
    }
    if c.side_peaks as f64 * c.period_ns + c.peak_half_width_ns > c.window_ns + 1e-9 {
        return Err(Error::precondition("outer side peaks fall outside the histogram window"));
    }
    let n = c.side_peaks as i64;
    let side: Vec<u64> = (-n..=n).filter(|&k| k != 0).map(|k| hist.peak_integral(k)).collect();
    let total: u64 = side.iter().sum();
    if total == 0 {
        return Err(Error::Undefined("side peaks are empty".into()));
    }
    let mean = total as f64 / side.len() as f64;
    let c0 = hist.peak_integral(0);
    let value = c0 as f64 / mean;
    let (uncertainty, upper_bound) = if c0 == 0 {
        (1.0 / mean, Some(3.0 / mean))
    } else {
        (value * (1.0 / c0 as f64 + 1.0 / total as f64).sqrt(), None)
    };
    Ok(G2Zero {
        value,
        uncertainty,
        zero_peak: c0,
        side_peaks: side,
        upper_bound,
    })
}

/// Antibunched iff `value + 2σ < 0.5`.
pub fn antibunching_verdict(value: f64, uncertainty: f64) -> bool {
    value + 2.0 * uncertainty < 0.5
}

/// Detector-1 and detector-2 click times, sorted.
pub fn streams_from_events(events: &[PhotonEvent]) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for e in events {
        match e.detector {
            Some(1) => a.push(e.time_ns),
            Some(2) => b.push(e.time_ns),
            _ => {}
        }
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    (a, b)
}

/// Reads `detector,time_ns` rows (detector 1 or 2; an optional header line
/// is skipped) into two sorted streams.
pub fn read_timestamp_csv<R: BufRead>(input: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = line.split(',').map(str::trim);
        let (Some(d), Some(t), None) = (f.next(), f.next(), f.next()) else {
            return Err(Error::Format(format!("line {}: expected `detector,time_ns`", i + 1)));
        };
        let Ok(t) = t.parse::<f64>() else {
            if i == 0 {
                continue;
            }
            return Err(Error::Format(format!("line {}: bad time `{t}`", i + 1)));
        };
        match d {
            "1" => a.push(t),
            "2" => b.push(t),
            _ => return Err(Error::Format(format!("line {}: detector must be 1 or 2", i + 1))),
        }
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(bin: f64, window: f64, period: f64) -> G2Config {
        G2Config {
            bin_width_ns: bin,
            window_ns: window,
            period_ns: period,
            peak_half_width_ns: 0.3 * period,
            side_peaks: 2,
        }
    }

    #[test]
    fn single_pair() {
        let h = coincidence_histogram(&[1000.0], &[1100.0], &cfg(10.0, 500.0, 100.0)).unwrap();
        assert_eq!(h.pairs, 1);
        let i = h.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(h.delay_ns(i), 100.0);
    }

    #[test]
    fn identical_streams_are_symmetric() {
        let s: Vec<f64> = (0..200).map(|i| i as f64 * 37.0).collect();
        let h = coincidence_histogram(&s, &s, &cfg(10.0, 500.0, 100.0)).unwrap();
        let r: Vec<u64> = h.counts.iter().rev().cloned().collect();
        assert_eq!(h.counts, r);
    }

    #[test]
    fn empty_stream_is_flagged() {
        let h = coincidence_histogram(&[], &[1.0], &cfg(10.0, 500.0, 100.0)).unwrap();
        assert!(h.empty && h.pairs == 0);
        assert!(matches!(g2_zero(&h), Err(Error::Undefined(_))));
    }

    #[test]
    fn bad_configs_and_unsorted_input() {
        assert!(coincidence_histogram(&[], &[], &cfg(30.0, 500.0, 100.0)).is_err());
        assert!(coincidence_histogram(&[], &[], &cfg(10.0, 500.0, 300.0)).is_err());
        assert!(coincidence_histogram(&[2.0, 1.0], &[], &cfg(10.0, 500.0, 100.0)).is_err());
    }

    #[test]
    fn poissonian_streams_are_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut gen = |n: usize| {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 1e8).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let (a, b) = (gen(40_000), gen(40_000));
        let c = cfg(100.0, 10_000.0, 1000.0);
        let h = coincidence_histogram(&a, &b, &c).unwrap();
        let expect = 40_000.0 * 40_000.0 / 1e8 * 100.0;
        let outliers = h.counts[1..h.counts.len() - 1]
            .iter()
            .filter(|&&n| (n as f64 - expect).abs() > 3.0 * expect.sqrt())
            .count();
        assert!(outliers <= 2, "{outliers}");
    }

    #[test]
    fn g2_of_pulsed_streams() {
        let c = G2Config::default();
        // one click per cycle alternating between detectors: perfect antibunching
        let (a, b): (Vec<f64>, Vec<f64>) = (
            (0..2000).map(|k| (2 * k) as f64 * 3250.0 + 500.0).collect(),
            (0..2000).map(|k| (2 * k + 1) as f64 * 3250.0 + 500.0).collect(),
        );
        let h = coincidence_histogram(&a, &b, &c).unwrap();
        let g = g2_zero(&h).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.upper_bound.is_some());
        assert!(antibunching_verdict(g.value, g.uncertainty));
    }

    #[test]
    fn verdicts() {
        assert!(antibunching_verdict(0.12, 0.02));
        assert!(!antibunching_verdict(1.0, 0.05));
        assert!(!antibunching_verdict(0.48, 0.02));
    }

    #[test]
    fn timestamp_csv() {
        let text = "detector,time_ns\n2,30.5\n1,20\n1,10\n";
        let (a, b) = read_timestamp_csv(text.as_bytes()).unwrap();
        assert_eq!(a, vec![10.0, 20.0]);
        assert_eq!(b, vec![30.5]);
        assert!(read_timestamp_csv("3,1.0\n".as_bytes()).is_err());
        assert!(read_timestamp_csv("1,1.0\n1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn histogram_csv() {
        let h = coincidence_histogram(&[0.0], &[20.0], &cfg(10.0, 100.0, 100.0)).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 22);
        assert!(text.contains("\n20,1\n"));
    }
}
