use rand::Rng;
use rand_distr::StandardNormal;

/// Ornstein-Uhlenbeck exploration process around zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
    state: f64,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64, dt: f64) -> Self {
        Self {
            theta,
            sigma,
            dt,
            state: 0.0,
        }
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let xi: f64 = rng.sample(StandardNormal);
        self.state += -self.theta * self.state * self.dt + self.sigma * self.dt.sqrt() * xi;
        self.state
    }
}

/// Linear decay from `start` to `end` over the first `fraction` of
/// `episodes`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl LinearSchedule {
    pub fn value(&self, episode: usize, episodes: usize) -> f64 {
        let horizon = (self.fraction * episodes as f64).max(1.0);
        let p = episode as f64 / horizon;
        if p >= 1.0 {
            self.end
        } else {
            self.start + (self.end - self.start) * p
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_reverts_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut n = OuNoise::new(0.15, 0.2, 1.0);
        for _ in 0..5 {
            n.sample(&mut rng);
        }
        n.sigma = 0.0;
        let x0 = n.state();
        let x1 = n.sample(&mut rng);
        assert!((x1 - 0.85 * x0).abs() < 1e-15);
        n.reset();
        assert_eq!(n.state(), 0.0);
    }

    #[test]
    fn schedule_endpoints() {
        let s = LinearSchedule {
            start: 0.2,
            end: 0.02,
            fraction: 0.8,
        };
        assert_eq!(s.value(0, 100), 0.2);
        assert!((s.value(40, 100) - 0.11).abs() < 1e-15);
        assert_eq!(s.value(80, 100), 0.02);
        assert_eq!(s.value(99, 100), 0.02);
    }
}
