/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub(crate) fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn summary(&self, sampled: bool) -> Option<Summary> {
        (self.count > 0).then(|| Summary {
            mean: self.mean,
            std: crate::math::sqrt((self.m2 / self.count as f64).max(0.0)),
            count: self.count,
            sampled,
        })
    }
}

/// Mean and population standard deviation over `count` observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: u64,
    /// True when the statistic was estimated from a seeded pair sample.
    pub sampled: bool,
}

/// Population mean and standard deviation of a slice.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, crate::math::sqrt(var))
}
