//! Bootstrap means, percentile intervals and the Shapiro–Wilk test.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    values: Vec<f64>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Stats("sample set is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Stats(format!("non-finite sample {v}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation (n − 1 denominator); 0 for one value.
    pub fn std_dev(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    /// Reads one value per row; a non-numeric first row is taken as a header.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let field = record.get(0).unwrap_or("").trim();
            match field.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) if i == 0 => continue,
                Err(_) => {
                    return Err(Error::Parse {
                        path: format!("{}:{}", path.display(), i + 1),
                        message: format!("`{field}` is not a number"),
                    })
                }
            }
        }
        Self::new(values)
    }

    pub fn write_csv(&self, path: &Path, header: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record([header])?;
        for v in &self.values {
            w.write_record([v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub means: Vec<f64>,
    pub grand_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub resample_size: usize,
    pub reps: usize,
    pub seed: u64,
}

/// `reps` means of `resample_size` draws with replacement; rep `j` uses
/// stream `j` of a generator seeded with `seed`.
pub fn bootstrap_mean(s: &SampleSet, resample_size: usize, reps: usize, seed: u64) -> Result<BootstrapResult> {
    if resample_size == 0 || reps == 0 {
        return Err(Error::Stats("resample size and repetitions must be positive".into()));
    }
    let n = s.len();
    let means: Vec<f64> = (0..reps)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            (0..resample_size).map(|_| s.values[rng.random_range(0..n)]).sum::<f64>() / resample_size as f64
        })
        .collect();
    let grand_mean = means.iter().sum::<f64>() / reps as f64;
    let (ci_low, ci_high) = confidence_interval(&means, 0.95)?;
    Ok(BootstrapResult { means, grand_mean, ci_low, ci_high, level: 0.95, resample_size, reps, seed })
}

/// Linear interpolation between order statistics at `(n − 1)·p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval at `level` in `(0, 1]`.
pub fn confidence_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Stats("confidence interval of an empty list".into()));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Stats(format!("level must lie in (0, 1], got {level}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&sorted, tail), quantile(&sorted, 1.0 - tail)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
}

fn poly(cc: &[f64], x: f64) -> f64 {
    let mut ret = cc[0];
    if cc.len() > 1 {
        let mut p = x * cc[cc.len() - 1];
        for &c in cc[1..cc.len() - 1].iter().rev() {
            p = (p + c) * x;
        }
        ret += p;
    }
    ret
}

/// Shapiro–Wilk W and p-value (Royston's AS R94 approximation), 3 ≤ n ≤ 5000.
pub fn shapiro_wilk(s: &SampleSet) -> Result<ShapiroWilk> {
    const SMALL: f64 = 1e-19;
    const G: [f64; 2] = [-2.273, 0.459];
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];

    let n = s.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::Stats(format!("Shapiro–Wilk needs 3 to 5000 samples, got {n}")));
    }
    let mut x = s.values.clone();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < SMALL {
        return Err(Error::Stats("Shapiro–Wilk is undefined for zero-variance samples".into()));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let an = n as f64;
    let nn2 = n / 2;

    // a[1..=nn2], index 0 unused
    let mut a = vec![0.0f64; nn2 + 1];
    if n == 3 {
        a[1] = 0.5f64.sqrt();
    } else {
        let an25 = an + 0.25;
        let m: Vec<f64> =
            (0..=nn2).map(|i| if i == 0 { 0.0 } else { std_normal.inverse_cdf((i as f64 - 0.375) / an25) }).collect();
        let summ2 = 2.0 * m[1..].iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[1] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -m[2] / ssumm2 + poly(&C2, rsn);
            a[2] = a2;
            (3, ((summ2 - 2.0 * m[1] * m[1] - 2.0 * m[2] * m[2]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt())
        } else {
            (2, ((summ2 - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[1] = a1;
        for i in i1..=nn2 {
            a[i] = -m[i] / fac;
        }
    }

    // W as the squared correlation between the data and the coefficients
    let coef = |i: usize| -> f64 {
        let j = n - 1 - i;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => -a[1 + i],
            std::cmp::Ordering::Greater => a[1 + j],
            std::cmp::Ordering::Equal => 0.0,
        }
    };
    let sa = (0..n).map(coef).sum::<f64>() / an;
    let sx = x.iter().map(|v| v / range).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, xi) in x.iter().enumerate() {
        let asa = coef(i) - sa;
        let xsx = xi / range - sx;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        const PI6: f64 = 6.0 / std::f64::consts::PI;
        const STQR: f64 = std::f64::consts::FRAC_PI_3;
        let p = (PI6 * (w.sqrt().asin() - STQR)).max(0.0);
        return Ok(ShapiroWilk { w, p_value: p });
    }
    let mut y = w1.ln();
    let xx = an.ln();
    let (m, sd) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok(ShapiroWilk { w, p_value: 1e-99 });
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        (poly(&C5, xx), poly(&C6, xx).exp())
    };
    let p = 1.0 - std_normal.cdf((y - m) / sd);
    Ok(ShapiroWilk { w, p_value: p })
}
