//! Score distributions and repayment curves per group.

use std::io::Read;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};

/// Piecewise-linear CDF over strictly increasing knots.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedCdf {
    pub fn new(xs: Vec<f64>, mut cdf: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidParams(format!("tabulated cdf: {m}")));
        if xs.len() < 2 || xs.len() != cdf.len() {
            return bad(format!("need >= 2 knots of equal length, got {} and {}", xs.len(), cdf.len()));
        }
        if xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("scores must be finite and strictly increasing".into());
        }
        if cdf.iter().any(|c| !(0.0..=1.0).contains(c)) || cdf.windows(2).any(|w| w[0] > w[1]) {
            return bad("cdf values must be nondecreasing within [0, 1]".into());
        }
        let last = cdf.len() - 1;
        if cdf[0] > 1e-9 || cdf[last] < 1.0 - 1e-9 {
            return bad(format!("cdf must run from 0 to 1, got {} .. {}", cdf[0], cdf[last]));
        }
        cdf[0] = 0.0;
        cdf[last] = 1.0;
        Ok(TabulatedCdf { xs, cdf })
    }

    /// `Beta(a, b)` rescaled to `[lo, hi]`, tabulated at `knots` evenly
    /// spaced scores.
    pub fn beta(a: f64, b: f64, lo: f64, hi: f64, knots: usize) -> Result<Self> {
        let dist = Beta::new(a, b).map_err(|e| Error::InvalidParams(format!("beta({a}, {b}): {e}")))?;
        if !(lo < hi) || knots < 2 {
            return Err(Error::InvalidParams(format!("beta table on [{lo}, {hi}] with {knots} knots")));
        }
        let step = (hi - lo) / (knots - 1) as f64;
        let xs: Vec<f64> = (0..knots)
            .map(|k| if k + 1 == knots { hi } else { lo + k as f64 * step })
            .collect();
        let cdf = (0..knots).map(|k| dist.cdf(k as f64 / (knots - 1) as f64)).collect();
        Self::new(xs, cdf)
    }

    pub fn lo(&self) -> f64 {
        self.xs[0]
    }

    pub fn hi(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.cdf)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo() {
            return 0.0;
        }
        if x >= self.hi() {
            return 1.0;
        }
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let t = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.cdf[k] + t * (self.cdf[k + 1] - self.cdf[k])
    }

    /// Generalized inverse `inf { x : F(x) >= u }`.
    pub fn inverse(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u);
        if k == 0 {
            return self.lo();
        }
        if k >= self.cdf.len() {
            return self.hi();
        }
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = (u - c0) / (c1 - c0);
        (self.xs[k - 1] + t * (self.xs[k] - self.xs[k - 1])).clamp(self.xs[k - 1], self.xs[k])
    }

    /// Slope of the segment containing `x`; zero outside the support.
    pub fn density(&self, x: f64) -> f64 {
        if x < self.lo() || x > self.hi() {
            return 0.0;
        }
        let k = (self.xs.partition_point(|&v| v <= x).max(1) - 1).min(self.xs.len() - 2);
        (self.cdf[k + 1] - self.cdf[k]) / (self.xs[k + 1] - self.xs[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreCurve {
    /// `Beta(a, b)` rescaled to the score bounds.
    Beta { a: f64, b: f64 },
    Table { scores: Vec<f64>, cdf: Vec<f64> },
}

/// `ρ(x) = P(Y = 1 | X = x)` for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RepayCurve {
    /// `1 / (1 + exp(-(x - x0) / scale))`.
    Logistic { x0: f64, scale: f64 },
    Constant { p: f64 },
    /// Linear interpolation, flat beyond the end knots.
    Table { scores: Vec<f64>, rho: Vec<f64> },
}

impl RepayCurve {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            RepayCurve::Logistic { x0, scale } => 1.0 / (1.0 + (-(x - x0) / scale).exp()),
            RepayCurve::Constant { p } => *p,
            RepayCurve::Table { scores, rho } => {
                let n = scores.len();
                if x <= scores[0] {
                    return rho[0];
                }
                if x >= scores[n - 1] {
                    return rho[n - 1];
                }
                let k = scores.partition_point(|&v| v <= x) - 1;
                let t = (x - scores[k]) / (scores[k + 1] - scores[k]);
                rho[k] + t * (rho[k + 1] - rho[k])
            }
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match self {
            RepayCurve::Logistic { x0, scale } => {
                if !x0.is_finite() || !(*scale > 0.0 && scale.is_finite()) {
                    return Err(format!("logistic needs finite x0 and scale > 0, got ({x0}, {scale})"));
                }
            }
            RepayCurve::Constant { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(format!("constant repayment probability {p} outside [0, 1]"));
                }
            }
            RepayCurve::Table { scores, rho } => {
                if scores.len() < 2 || scores.len() != rho.len() {
                    return Err("rho table needs >= 2 rows of scores and rho".into());
                }
                if scores.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err("rho table scores must be strictly increasing".into());
                }
                if rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
                    return Err("rho table values must lie in [0, 1]".into());
                }
                if rho.windows(2).any(|w| w[0] > w[1]) {
                    return Err("rho must be nondecreasing in the score".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub score: ScoreCurve,
    pub rho: RepayCurve,
}

fn default_knots() -> usize {
    4097
}

/// Serialized form of a [`GroupModel`]. Group 0 is the disadvantaged group
/// and `theta = P(A = 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct GroupModelSpec {
    pub theta: f64,
    pub score_bounds: [f64; 2],
    #[serde(default = "default_knots")]
    pub knots: usize,
    pub groups: Vec<GroupSpec>,
}

impl Default for GroupModelSpec {
    fn default() -> Self {
        GroupModelSpec {
            theta: 0.5,
            score_bounds: [300.0, 850.0],
            knots: default_knots(),
            groups: vec![
                GroupSpec {
                    name: "Black".into(),
                    score: ScoreCurve::Beta { a: 4.0, b: 4.0 },
                    rho: RepayCurve::Logistic { x0: 575.0, scale: 30.0 },
                },
                GroupSpec {
                    name: "White".into(),
                    score: ScoreCurve::Beta { a: 6.0, b: 3.0 },
                    rho: RepayCurve::Logistic { x0: 580.0, scale: 40.0 },
                },
            ],
        }
    }
}

#[derive(Debug)]
struct GroupInner {
    spec: GroupModelSpec,
    cdfs: Vec<TabulatedCdf>,
}

/// Two groups with their score CDFs, repayment curves and mixing weight.
/// Cheap to clone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GroupModelSpec", into = "GroupModelSpec")]
pub struct GroupModel(Arc<GroupInner>);

impl PartialEq for GroupModel {
    fn eq(&self, other: &Self) -> bool {
        self.0.spec == other.0.spec
    }
}

impl From<GroupModel> for GroupModelSpec {
    fn from(m: GroupModel) -> Self {
        m.0.spec.clone()
    }
}

impl TryFrom<GroupModelSpec> for GroupModel {
    type Error = Error;

    fn try_from(spec: GroupModelSpec) -> Result<Self> {
        let bad = |m: String| Error::InvalidParams(format!("group model: {m}"));
        if !(0.0..=1.0).contains(&spec.theta) {
            return Err(bad(format!("theta {} outside [0, 1]", spec.theta)));
        }
        let [lo, hi] = spec.score_bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(bad(format!("score bounds [{lo}, {hi}]")));
        }
        if spec.groups.len() != 2 {
            return Err(bad(format!("exactly 2 groups are supported, got {}", spec.groups.len())));
        }
        let mut cdfs = Vec::with_capacity(2);
        for g in &spec.groups {
            g.rho.validate().map_err(|e| bad(format!("{}: {e}", g.name)))?;
            let cdf = match &g.score {
                ScoreCurve::Beta { a, b } => TabulatedCdf::beta(*a, *b, lo, hi, spec.knots)?,
                ScoreCurve::Table { scores, cdf } => TabulatedCdf::new(scores.clone(), cdf.clone())?,
            };
            if cdf.lo() < lo || cdf.hi() > hi {
                return Err(bad(format!("{}: score table leaves the bounds [{lo}, {hi}]", g.name)));
            }
            cdfs.push(cdf);
        }
        Ok(GroupModel(Arc::new(GroupInner { spec, cdfs })))
    }
}

impl Default for GroupModel {
    fn default() -> Self {
        GroupModel::try_from(GroupModelSpec::default()).expect("default group model is valid")
    }
}

impl GroupModel {
    pub fn spec(&self) -> &GroupModelSpec {
        &self.0.spec
    }

    pub fn theta(&self) -> f64 {
        self.0.spec.theta
    }

    /// `P(A = j)`.
    pub fn weight(&self, group: usize) -> f64 {
        if group == 1 {
            self.theta()
        } else {
            1.0 - self.theta()
        }
    }

    pub fn score_bounds(&self) -> [f64; 2] {
        self.0.spec.score_bounds
    }

    pub fn name(&self, group: usize) -> &str {
        &self.0.spec.groups[group].name
    }

    pub fn cdf(&self, group: usize) -> &TabulatedCdf {
        &self.0.cdfs[group]
    }

    pub fn rho(&self, x: f64, group: usize) -> f64 {
        self.0.spec.groups[group].rho.eval(x)
    }

    /// `P(A = 1 | X = x)` by Bayes' rule on the tabulated densities; the
    /// prior `theta` where neither group has density.
    pub fn posterior_one(&self, x: f64) -> f64 {
        let f0 = self.weight(0) * self.cdf(0).density(x);
        let f1 = self.weight(1) * self.cdf(1).density(x);
        if f0 + f1 > 0.0 {
            f1 / (f0 + f1)
        } else {
            self.theta()
        }
    }

    /// Group-marginalized repayment curve `Σ_j P(A=j|x) ρ(x, j)`.
    pub fn rho_bar(&self, x: f64) -> f64 {
        let p1 = self.posterior_one(x);
        (1.0 - p1) * self.rho(x, 0) + p1 * self.rho(x, 1)
    }

    /// Reads `score,cdf_0,rho_0,cdf_1,rho_1` rows (ascending scores) into a
    /// tabulated model with bounds taken from the first and last score.
    pub fn from_csv<R: Read>(input: R, theta: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::ModelFormat(format!("curve csv is missing column `{name}`")))
        };
        let cols = [col("score")?, col("cdf_0")?, col("rho_0")?, col("cdf_1")?, col("rho_1")?];
        let mut table: [Vec<f64>; 5] = Default::default();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            for (k, &c) in cols.iter().enumerate() {
                let field = rec.get(c).unwrap_or("").trim();
                let v: f64 = field.parse().map_err(|_| {
                    Error::ModelFormat(format!("curve csv row {}: `{field}` is not a number", line + 2))
                })?;
                table[k].push(v);
            }
        }
        let [scores, cdf0, rho0, cdf1, rho1] = table;
        if scores.len() < 2 {
            return Err(Error::ModelFormat("curve csv needs at least 2 rows".into()));
        }
        let bounds = [scores[0], scores[scores.len() - 1]];
        let group = |name: &str, cdf: Vec<f64>, rho: Vec<f64>| GroupSpec {
            name: name.into(),
            score: ScoreCurve::Table {
                scores: scores.clone(),
                cdf,
            },
            rho: RepayCurve::Table {
                scores: scores.clone(),
                rho,
            },
        };
        GroupModel::try_from(GroupModelSpec {
            theta,
            score_bounds: bounds,
            knots: scores.len(),
            groups: vec![group("group_0", cdf0, rho0), group("group_1", cdf1, rho1)],
        })
    }
}
