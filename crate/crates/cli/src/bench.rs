use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Summary of one stage's wall-clock samples, in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl StageStats {
    pub fn from_samples(samples: &[Duration]) -> Self {
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        if n == 0 {
            return StageStats {
                mean_ms: 0.0,
                median_ms: 0.0,
                p95_ms: 0.0,
            };
        }
        let median = if n % 2 == 1 {
            ms[n / 2]
        } else {
            (ms[n / 2 - 1] + ms[n / 2]) / 2.0
        };
        // Nearest-rank percentile.
        let p95 = ms[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        StageStats {
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            median_ms: median,
            p95_ms: p95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
}

impl Machine {
    pub fn current() -> Self {
        Machine {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stages {
    /// Crop and frontal-view projection.
    pub preprocess: StageStats,
    pub forward: StageStats,
    /// Candidate extraction, scoring and suppression.
    pub postprocess: StageStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: usize,
    pub warmup: usize,
    pub threads: usize,
    pub algo: String,
    pub height: usize,
    pub width: usize,
    pub machine: Machine,
    pub stages: Stages,
    pub total: StageStats,
    pub frames_per_second: f64,
    pub detections: usize,
}

impl TimingReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} frames ({} warm-up) of {}x{}, {} thread(s), {} convolution\n",
            self.frames, self.warmup, self.height, self.width, self.threads, self.algo
        );
        s += &format!(
            "{:<12} {:>10} {:>10} {:>10}\n",
            "stage", "mean ms", "median ms", "p95 ms"
        );
        for (name, st) in [
            ("preprocess", &self.stages.preprocess),
            ("forward", &self.stages.forward),
            ("postprocess", &self.stages.postprocess),
            ("total", &self.total),
        ] {
            s += &format!(
                "{name:<12} {:>10.2} {:>10.2} {:>10.2}\n",
                st.mean_ms, st.median_ms, st.p95_ms
            );
        }
        s += &format!("{:.2} frames/s\n", self.frames_per_second);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_samples() {
        let samples: Vec<Duration> = (1..=20).map(Duration::from_millis).collect();
        let s = StageStats::from_samples(&samples);
        assert!((s.mean_ms - 10.5).abs() < 1e-9);
        assert!((s.median_ms - 10.5).abs() < 1e-9);
        assert!((s.p95_ms - 19.0).abs() < 1e-9);
    }
}
