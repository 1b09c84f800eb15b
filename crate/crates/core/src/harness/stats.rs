use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::plant::{N_MODELED, PARAM_NAMES};

/// Significance level for the per-parameter tests.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeveneResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean absolute deviation from the median: the spread the
/// Brown–Forsythe test compares.
pub fn median_spread(v: &[f64]) -> f64 {
    let m = median(v);
    mean(&v.iter().map(|x| (x - m).abs()).collect::<Vec<_>>())
}

/// Brown–Forsythe test (Levene's test centred on group medians) for equal
/// spread across `groups`.
///
/// When every absolute deviation equals its group mean the within-group
/// term vanishes: the statistic is then `+∞` (p = 0) if the group means
/// differ and `0` (p = 1) if they do not.
pub fn brown_forsythe(groups: &[&[f64]]) -> Result<LeveneResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::Stats("need at least two groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::Stats(format!("every group needs at least 2 samples, got {}", g.len())));
    }
    if groups.iter().flat_map(|g| g.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Stats("samples must be finite".into()));
    }
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g);
            g.iter().map(|x| (x - m).abs()).collect()
        })
        .collect();
    let n: usize = z.iter().map(Vec::len).sum();
    let zi: Vec<f64> = z.iter().map(|g| mean(g)).collect();
    let zbar = z.iter().flatten().sum::<f64>() / n as f64;
    let between: f64 = z
        .iter()
        .zip(&zi)
        .map(|(g, m)| g.len() as f64 * (m - zbar).powi(2))
        .sum();
    let within: f64 = z
        .iter()
        .zip(&zi)
        .map(|(g, m)| g.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    if within == 0.0 {
        return Ok(if between == 0.0 {
            LeveneResult {
                statistic: 0.0,
                p_value: 1.0,
            }
        } else {
            LeveneResult {
                statistic: f64::INFINITY,
                p_value: 0.0,
            }
        });
    }
    let w = (df2 / df1) * between / within;
    let f = FisherSnedecor::new(df1, df2).map_err(|e| Error::Stats(e.to_string()))?;
    Ok(LeveneResult {
        statistic: w,
        p_value: f.sf(w).clamp(0.0, 1.0),
    })
}

/// One modeled control's comparison against chance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTest {
    pub name: &'static str,
    pub mean_abs_diff: f64,
    pub baseline_mean_abs_diff: f64,
    pub spread: f64,
    pub baseline_spread: f64,
    pub test: LeveneResult,
}

impl ParamTest {
    /// Significantly different spread, and tighter than chance.
    pub fn better_than_chance(&self) -> bool {
        self.test.p_value < ALPHA && self.spread < self.baseline_spread
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatTestResult {
    /// Per control: ground truth minus prediction, one entry per note.
    pub differences: Vec<Vec<f64>>,
    /// Per control: ground truth minus a uniform random draw.
    pub baseline: Vec<Vec<f64>>,
    pub params: Vec<ParamTest>,
}

impl StatTestResult {
    pub fn rejections(&self) -> usize {
        self.params.iter().filter(|p| p.better_than_chance()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "parameter,mean_abs_diff,baseline_mean_abs_diff,spread,baseline_spread,W,p_value,better_than_chance\n",
        );
        for p in &self.params {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6e},{}\n",
                p.name,
                p.mean_abs_diff,
                p.baseline_mean_abs_diff,
                p.spread,
                p.baseline_spread,
                p.test.statistic,
                p.test.p_value,
                p.better_than_chance()
            ));
        }
        s
    }
}

/// Compares predicted against true controls, one row per note, for the
/// first seven controls. The chance baseline is drawn uniformly from
/// `[0, 1]` with `seed`.
pub fn stat_tests(predicted: &[[f64; N_MODELED]], truth: &[[f64; N_MODELED]], seed: u64) -> Result<StatTestResult> {
    if predicted.len() != truth.len() {
        return Err(Error::Stats(format!(
            "{} predictions against {} ground-truth rows",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::Stats("need at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut differences = vec![Vec::with_capacity(truth.len()); N_MODELED];
    let mut baseline = vec![Vec::with_capacity(truth.len()); N_MODELED];
    for (p, t) in predicted.iter().zip(truth) {
        for k in 0..N_MODELED {
            differences[k].push(t[k] - p[k]);
            baseline[k].push(t[k] - rng.gen::<f64>());
        }
    }
    let abs_mean = |v: &[f64]| mean(&v.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let params = (0..N_MODELED)
        .map(|k| {
            Ok(ParamTest {
                name: PARAM_NAMES[k],
                mean_abs_diff: abs_mean(&differences[k]),
                baseline_mean_abs_diff: abs_mean(&baseline[k]),
                spread: median_spread(&differences[k]),
                baseline_spread: median_spread(&baseline[k]),
                test: brown_forsythe(&[&differences[k], &baseline[k]])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StatTestResult {
        differences,
        baseline,
        params,
    })
}
