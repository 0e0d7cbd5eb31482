//! Round time model: computation, transmission and idle wait.

use crate::domain::{ModelSpec, NodeId, SchedulerConstants};
use crate::error::{Error, Result};

/// Time spent in one round, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTiming {
    pub comp: f64,
    pub comm: f64,
    pub idle: f64,
    pub total: f64,
}

impl RoundTiming {
    pub fn new(comp: f64, comm: f64, idle: f64) -> Self {
        Self {
            comp,
            comm,
            idle,
            total: comp + comm + idle,
        }
    }

    /// A skipped round: no transmission, no training, wait `H`.
    pub fn skip(constants: &SchedulerConstants) -> Self {
        Self::new(0.0, 0.0, constants.idle_wait)
    }
}

pub fn comp_time(samples: f64, model: &ModelSpec, compute: f64) -> Result<f64> {
    if !(compute > 0.0) {
        return Err(Error::InvalidResource(format!(
            "compute must be positive, got {compute}"
        )));
    }
    Ok(model.flops_per_sample * samples / compute)
}

pub fn comm_time(from: NodeId, to: NodeId, model: &ModelSpec, bandwidth: f64) -> Result<f64> {
    if from == to {
        return Ok(0.0);
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidResource(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    Ok(model.model_bits / bandwidth)
}

/// `H` when less than one whole sample is trained, zero otherwise.
pub fn idle_time(samples: f64, constants: &SchedulerConstants) -> f64 {
    if samples < 1.0 {
        constants.idle_wait
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn comp_examples() {
        let cnn = ModelSpec::mnist_cnn();
        assert_eq!(comp_time(0.0, &cnn, 10e12).unwrap(), 0.0);
        assert!(rel(comp_time(1000.0, &cnn, 10e12).unwrap(), 7.157e-3) < 1e-12);
        let resnet = ModelSpec::resnet18();
        assert!(rel(comp_time(100.0, &resnet, 0.01 * 10e12).unwrap(), 10.65) < 1e-12);
        assert!(comp_time(1.0, &cnn, 0.0).is_err());
    }

    #[test]
    fn comm_examples() {
        let cnn = ModelSpec::mnist_cnn();
        assert_eq!(comm_time(NodeId(3), NodeId(3), &cnn, 1.0).unwrap(), 0.0);
        assert!(rel(comm_time(NodeId(0), NodeId(1), &cnn, 200e6 * 0.5).unwrap(), 0.3842) < 1e-12);
        let resnet = ModelSpec::resnet18();
        assert!(
            rel(comm_time(NodeId(0), NodeId(1), &resnet, 200e6 * 0.005).unwrap(), 358.38) < 1e-12
        );
        assert!(comm_time(NodeId(0), NodeId(1), &cnn, -5.0).is_err());
    }

    #[test]
    fn idle_examples() {
        let mut c = SchedulerConstants::new(0.0, 1.0, 1).unwrap();
        assert_eq!(idle_time(0.0, &c), 1.0);
        assert_eq!(idle_time(1.0, &c), 0.0);
        c.idle_wait = 2.5;
        assert_eq!(idle_time(0.5, &c), 2.5);
    }

    #[test]
    fn comp_is_linear_in_samples_and_inverse_in_compute() {
        let m = ModelSpec::mnist_cnn();
        for &(s, a, r) in &[(10.0, 3.0, 1e12), (777.0, 0.25, 3.3e11), (1.0, 1e4, 9e12)] {
            let base = comp_time(s, &m, r).unwrap();
            assert!(rel(comp_time(a * s, &m, r).unwrap(), a * base) < 1e-12);
            assert!(rel(comp_time(s, &m, 2.0 * r).unwrap(), base / 2.0) < 1e-12);
        }
    }

    #[test]
    fn timing_total_is_sum() {
        let t = RoundTiming::new(0.1, 0.2, 0.0);
        assert_eq!(t.total, 0.1 + 0.2);
        let s = RoundTiming::skip(&SchedulerConstants::new(0.0, 3.0, 1).unwrap());
        assert_eq!((s.comp, s.comm, s.idle, s.total), (0.0, 0.0, 3.0, 3.0));
    }
}
