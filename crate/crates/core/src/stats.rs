//! Significance machinery: one-sample and paired t-tests, one-way ANOVA,
//! Cohen's d, and the special functions behind them.
//!
//! The incomplete beta function is evaluated with Lentz's continued
//! fraction and a Lanczos log-gamma; the targeted absolute error of the
//! resulting t and F tail probabilities is below 1e-10 for the degrees of
//! freedom this pipeline uses.

use thiserror::Error;

/// Tail convention of a reported p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    OneSidedGreater,
    TwoSided,
}

/// A test statistic with its degrees of freedom and p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    /// Second degrees of freedom; only meaningful for F tests.
    pub df2: f64,
    pub p: f64,
    pub tail: Tail,
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("degenerate sample: zero variance, statistic undefined")]
    ZeroVariance,
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("paired test needs equal lengths, got {a} and {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("anova needs at least 2 groups with at least 2 values each")]
    BadGroups,
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// Log-gamma, Lanczos approximation (g = 7, n = 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection formula
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction.
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "betainc needs positive shape parameters");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // the continued fraction converges fastest for x < (a+1)/(a+b+2)
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x)) / a
    } else {
        1.0 - (ln_front.exp() * beta_cf(b, a, 1.0 - x)) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * betainc(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Survival function of the F distribution with (df1, df2).
pub fn f_sf(f: f64, df1: f64, df2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    let x = df2 / (df2 + df1 * f);
    betainc(0.5 * df2, 0.5 * df1, x)
}

/// Two-sided t quantile via bisection on the CDF: returns q with
/// P(|T| <= q) = 1 - alpha. Used for confidence intervals.
pub fn t_quantile_two_sided(alpha: f64, df: f64) -> f64 {
    let target = 1.0 - alpha / 2.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while t_cdf(hi, df) < target {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Tests and effect sizes
// ---------------------------------------------------------------------------

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// t = (mean - mu) / (sd / sqrt(n)), df = n - 1. A sample with zero
/// variance is a degenerate-sample error, not a p-value.
pub fn one_sample_t(values: &[f64], mu: f64, tail: Tail) -> Result<TestResult, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: values.len(),
        });
    }
    let sd = sample_sd(values);
    if sd == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let n = values.len() as f64;
    let t = (mean(values) - mu) / (sd / n.sqrt());
    let df = n - 1.0;
    let p = match tail {
        Tail::OneSidedGreater => 1.0 - t_cdf(t, df),
        Tail::TwoSided => 2.0 * (1.0 - t_cdf(t.abs(), df)),
    };
    Ok(TestResult {
        statistic: t,
        df,
        df2: 0.0,
        p: p.clamp(0.0, 1.0),
        tail,
    })
}

/// Two-sided paired t-test: one-sample test of the differences against 0.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    one_sample_t(&diffs, 0.0, Tail::TwoSided)
}

/// One-way ANOVA over two or more groups.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(StatsError::BadGroups);
    }
    let total_n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flatten().sum::<f64>() / total_n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let df1 = (groups.len() - 1) as f64;
    let df2 = (total_n - groups.len()) as f64;
    if ss_within == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let f = (ss_between / df1) / (ss_within / df2);
    Ok(TestResult {
        statistic: f,
        df: df1,
        df2,
        p: f_sf(f, df1, df2).clamp(0.0, 1.0),
        tail: Tail::OneSidedGreater,
    })
}

/// Standardized mean difference (mean - mu) / sd.
pub fn cohens_d(values: &[f64], mu: f64) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: values.len(),
        });
    }
    let sd = sample_sd(values);
    if sd == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((mean(values) - mu) / sd)
}

/// Mean and two-sided 95% CI half-width using Student's t over the sample.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    if values.len() < 2 {
        return (m, f64::NAN);
    }
    let sd = sample_sd(values);
    let n = values.len() as f64;
    let q = t_quantile_two_sided(0.05, n - 1.0);
    (m, q * sd / n.sqrt())
}
