//! Job traces: JSON-lines I/O and a seeded Poisson workload generator.

use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::patterns::Collective;

/// One job of a trace: arrival, size, and what an iteration costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceJob {
    pub job_id: u64,
    pub arrival_time: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub model_tag: String,
    pub collective: Collective,
    pub iterations: u64,
    pub compute_time_per_iter: f64,
    pub comm_bytes_per_iter: f64,
    pub alpha: f64,
    pub batch_size: String,
}

impl TraceJob {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.iterations == 0 {
            return Err("iterations must be at least 1".into());
        }
        if self.n == 0 {
            return Err("N must be at least 1".into());
        }
        if !(self.arrival_time >= 0.0) || !self.arrival_time.is_finite() {
            return Err(format!("bad arrival time {}", self.arrival_time));
        }
        if !(self.compute_time_per_iter >= 0.0) || !(self.comm_bytes_per_iter >= 0.0) {
            return Err("negative per-iteration cost".into());
        }
        Ok(())
    }
}

pub fn read_trace(reader: impl BufRead) -> Result<Vec<TraceJob>, ConfigError> {
    let mut jobs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ConfigError::Trace {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let job: TraceJob = serde_json::from_str(&line).map_err(|e| ConfigError::Trace {
            line: i + 1,
            message: e.to_string(),
        })?;
        job.validate().map_err(|message| ConfigError::Trace { line: i + 1, message })?;
        jobs.push(job);
    }
    Ok(jobs)
}

pub fn write_trace(jobs: &[TraceJob], mut out: impl Write) -> std::io::Result<()> {
    for j in jobs {
        serde_json::to_writer(&mut out, j)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A family of jobs in the workload mix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobClass {
    pub model_tag: String,
    pub weight: f64,
    pub collective: Collective,
    pub alpha: f64,
    /// `(N, weight)` pairs.
    pub sizes: Vec<(usize, f64)>,
    pub compute_time_per_iter: f64,
    /// Gradient or activation bytes exchanged per iteration.
    pub comm_bytes_per_iter: f64,
    pub batch_sizes: Vec<String>,
    /// Median standalone compute time of a job, in seconds.
    pub median_duration: f64,
    /// Log-normal shape of the duration.
    #[serde(default = "default_sigma")]
    pub duration_sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobMix {
    pub classes: Vec<JobClass>,
}

impl Default for JobMix {
    /// Cluster-trace-like mix: mostly small jobs, a tail of large ones.
    fn default() -> Self {
        let class = |tag: &str,
                     weight: f64,
                     collective: Collective,
                     alpha: f64,
                     sizes: &[(usize, f64)],
                     compute: f64,
                     comm_mb: f64,
                     batches: &[&str],
                     median: f64| JobClass {
            model_tag: tag.into(),
            weight,
            collective,
            alpha,
            sizes: sizes.to_vec(),
            compute_time_per_iter: compute,
            comm_bytes_per_iter: comm_mb * 1e6,
            batch_sizes: batches.iter().map(|s| s.to_string()).collect(),
            median_duration: median,
            duration_sigma: 1.0,
        };
        Self {
            classes: vec![
                class(
                    "resnet50",
                    0.30,
                    Collective::Ring,
                    0.15,
                    &[(1, 0.35), (2, 0.15), (4, 0.2), (8, 0.2), (16, 0.1)],
                    0.12,
                    100.0,
                    &["64", "128"],
                    675.0,
                ),
                class(
                    "vgg16",
                    0.20,
                    Collective::Hd,
                    0.15,
                    &[(1, 0.2), (4, 0.2), (8, 0.25), (16, 0.15), (32, 0.1), (64, 0.1)],
                    0.2,
                    550.0,
                    &["32", "64"],
                    900.0,
                ),
                class(
                    "bert",
                    0.20,
                    Collective::Hd,
                    0.15,
                    &[(8, 0.3), (16, 0.25), (32, 0.2), (64, 0.15), (128, 0.1)],
                    0.3,
                    1300.0,
                    &["32", "64"],
                    1125.0,
                ),
                class(
                    "gpt",
                    0.10,
                    Collective::HierRing,
                    0.3,
                    &[(16, 0.3), (32, 0.3), (64, 0.25), (128, 0.15)],
                    0.5,
                    2000.0,
                    &["16"],
                    1350.0,
                ),
                class(
                    "moe",
                    0.12,
                    Collective::AllToAll,
                    1.0,
                    &[(8, 0.3), (16, 0.3), (32, 0.2), (64, 0.2)],
                    0.3,
                    800.0,
                    &["16", "32"],
                    1125.0,
                ),
                class(
                    "dlrm",
                    0.08,
                    Collective::AllToAll,
                    1.0,
                    &[(4, 0.3), (8, 0.4), (16, 0.2), (32, 0.1)],
                    0.15,
                    300.0,
                    &["1024"],
                    675.0,
                ),
            ],
        }
    }
}

impl JobMix {
    pub fn validate(&self) -> Result<(), String> {
        if self.classes.is_empty() {
            return Err("job mix has no classes".into());
        }
        for c in &self.classes {
            if c.weight < 0.0 || c.sizes.is_empty() || c.sizes.iter().any(|s| s.0 == 0 || s.1 < 0.0) {
                return Err(format!("class `{}` has bad weights or sizes", c.model_tag));
            }
            if !(0.0..=1.0).contains(&c.alpha) {
                return Err(format!("class `{}` alpha outside [0, 1]", c.model_tag));
            }
            if c.batch_sizes.is_empty() || c.compute_time_per_iter <= 0.0 || c.median_duration <= 0.0 {
                return Err(format!("class `{}` needs batch sizes and positive times", c.model_tag));
            }
        }
        Ok(())
    }
}

/// `count` jobs with exponential inter-arrival times of mean `lambda_s`.
pub fn synthesize_trace(mix: &JobMix, lambda_s: f64, count: usize, seed: u64) -> Result<Vec<TraceJob>, String> {
    if !(lambda_s > 0.0) {
        return Err(format!("lambda must be positive, got {lambda_s}"));
    }
    mix.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(1.0 / lambda_s).map_err(|e| e.to_string())?;
    let pick_class =
        WeightedIndex::new(mix.classes.iter().map(|c| c.weight)).map_err(|e| e.to_string())?;
    let size_dists: Vec<WeightedIndex<f64>> = mix
        .classes
        .iter()
        .map(|c| WeightedIndex::new(c.sizes.iter().map(|s| s.1)).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let mut t = 0.0;
    let mut jobs = Vec::with_capacity(count);
    for id in 0..count {
        t += gap.sample(&mut rng);
        let ci = pick_class.sample(&mut rng);
        let c = &mix.classes[ci];
        let n = c.sizes[size_dists[ci].sample(&mut rng)].0;
        let dur = LogNormal::new(c.median_duration.ln(), c.duration_sigma)
            .map_err(|e| e.to_string())?
            .sample(&mut rng);
        let iterations = ((dur / c.compute_time_per_iter).round() as u64).max(1);
        let batch = c.batch_sizes[rand::Rng::gen_range(&mut rng, 0..c.batch_sizes.len())].clone();
        jobs.push(TraceJob {
            job_id: id as u64,
            arrival_time: t,
            n,
            model_tag: c.model_tag.clone(),
            collective: c.collective,
            iterations,
            compute_time_per_iter: c.compute_time_per_iter,
            comm_bytes_per_iter: c.comm_bytes_per_iter,
            alpha: c.alpha,
            batch_size: batch,
        });
    }
    Ok(jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_trace() {
        let mix = JobMix::default();
        assert_eq!(
            synthesize_trace(&mix, 120.0, 200, 4).unwrap(),
            synthesize_trace(&mix, 120.0, 200, 4).unwrap()
        );
        assert_ne!(
            synthesize_trace(&mix, 120.0, 200, 4).unwrap(),
            synthesize_trace(&mix, 120.0, 200, 5).unwrap()
        );
    }

    #[test]
    fn mean_gap_within_three_sigma() {
        let jobs = synthesize_trace(&JobMix::default(), 120.0, 5000, 11).unwrap();
        let mean = jobs.last().unwrap().arrival_time / 5000.0;
        // exponential: sd of the mean is lambda / sqrt(n)
        let sigma = 120.0 / (5000f64).sqrt();
        assert!((mean - 120.0).abs() < 3.0 * sigma, "mean gap {mean}");
    }

    #[test]
    fn jsonl_round_trip() {
        let jobs = synthesize_trace(&JobMix::default(), 50.0, 20, 1).unwrap();
        let mut buf = Vec::new();
        write_trace(&jobs, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("\"N\":"));
        assert_eq!(read_trace(&buf[..]).unwrap(), jobs);
    }

    #[test]
    fn bad_line_is_reported_with_number() {
        let text = "{\"job_id\":0}\n";
        match read_trace(text.as_bytes()) {
            Err(ConfigError::Trace { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        assert!(synthesize_trace(&JobMix::default(), 0.0, 1, 1).is_err());
    }
}
