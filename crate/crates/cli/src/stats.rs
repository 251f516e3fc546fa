//! Rates and means with normal-approximation 95% half-widths.

pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub hits: usize,
    pub n: usize,
}

impl Rate {
    pub fn from_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        let (mut hits, mut n) = (0, 0);
        for f in flags {
            hits += f as usize;
            n += 1;
        }
        Self { hits, n }
    }

    /// `None` when nothing was counted.
    pub fn value(&self) -> Option<f64> {
        (self.n > 0).then(|| self.hits as f64 / self.n as f64)
    }

    pub fn half_width(&self) -> Option<f64> {
        self.value()
            .map(|p| Z95 * (p * (1.0 - p) / self.n as f64).sqrt())
    }

    pub fn pooled(rates: impl IntoIterator<Item = Rate>) -> Self {
        rates.into_iter().fold(Rate { hits: 0, n: 0 }, |acc, r| Rate {
            hits: acc.hits + r.hits,
            n: acc.n + r.n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mean {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub sd: f64,
}

impl Mean {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { n, mean, sd })
    }

    pub fn half_width(&self) -> f64 {
        Z95 * self.sd / (self.n as f64).sqrt()
    }
}

/// Fixed-precision cell; empty when absent.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}
