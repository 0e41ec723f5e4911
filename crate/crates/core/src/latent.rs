//! Tools built on the interpretable latent space: non-causal reference
//! curve fitting, the threshold maneuver classifier and the rule-based
//! watchdog.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{parse_range, KeyValues};
use crate::data::{Dataset, ManeuverClass, TimeGrid};
use crate::decoder::{decoder_gradients, predict_lateral, LatentParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierThresholds {
    /// Amplitude threshold in meters.
    pub t_lambda: f64,
    /// Stretch threshold.
    pub t_mu: f64,
}

impl Default for ClassifierThresholds {
    fn default() -> Self {
        ClassifierThresholds { t_lambda: 0.85, t_mu: 0.25 }
    }
}

impl ClassifierThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_lambda > 0.0 && self.t_mu > 0.0) {
            return Err(Error::Config(format!("thresholds must be positive, got {self:?}")));
        }
        Ok(())
    }

    /// Reads `t_lambda` and `t_mu`, keeping defaults for absent keys.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let th = ClassifierThresholds {
            t_lambda: kv.parse_value("t_lambda")?.unwrap_or(d.t_lambda),
            t_mu: kv.parse_value("t_mu")?.unwrap_or(d.t_mu),
        };
        th.validate()?;
        Ok(th)
    }
}

pub fn classify(lp: &LatentParams, th: &ClassifierThresholds) -> ManeuverClass {
    if lp.stretch < th.t_mu || lp.lambda.abs() < th.t_lambda {
        ManeuverClass::KL
    } else if lp.lambda > th.t_lambda {
        ManeuverClass::LL
    } else {
        ManeuverClass::LR
    }
}

pub const RULE_LAMBDA: &str = "lambda_abs_max";
pub const RULE_STRETCH: &str = "stretch_range";
pub const RULE_ACCEL: &str = "a_x_range";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WatchdogRuleSet {
    pub lambda_abs_max: f64,
    pub stretch_range: (f64, f64),
    pub a_x_range: (f64, f64),
}

impl Default for WatchdogRuleSet {
    fn default() -> Self {
        WatchdogRuleSet { lambda_abs_max: 8.0, stretch_range: (1e-4, 10.0), a_x_range: (-5.0, 5.0) }
    }
}

impl WatchdogRuleSet {
    pub fn validate(&self) -> Result<()> {
        let nonempty = |(a, b): (f64, f64)| a <= b;
        if !(self.lambda_abs_max > 0.0) || !nonempty(self.stretch_range) || !nonempty(self.a_x_range) {
            return Err(Error::Config(format!("invalid watchdog rules {self:?}")));
        }
        Ok(())
    }

    /// Reads `lambda_abs_max`, `stretch_range = min,max` and
    /// `a_x_range = min,max`, keeping defaults for absent keys.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut rules = Self::default();
        if let Some(v) = kv.parse_value("lambda_abs_max")? {
            rules.lambda_abs_max = v;
        }
        if let Some(r) = kv.get("stretch_range") {
            rules.stretch_range = parse_range(r)?;
        }
        if let Some(r) = kv.get("a_x_range") {
            rules.a_x_range = parse_range(r)?;
        }
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(Vec<&'static str>),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        *self == Verdict::Accepted
    }

    /// Violated rule names joined by `;`, empty when accepted.
    pub fn rules(&self) -> String {
        match self {
            Verdict::Accepted => String::new(),
            Verdict::Rejected(r) => r.join(";"),
        }
    }
}

/// Checks every rule; non-finite values violate the rule they belong to.
pub fn validate(lp: &LatentParams, rules: &WatchdogRuleSet) -> Verdict {
    let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    let mut violated = Vec::new();
    if !(lp.lambda.abs() < rules.lambda_abs_max) {
        violated.push(RULE_LAMBDA);
    }
    if !within(lp.stretch, rules.stretch_range) {
        violated.push(RULE_STRETCH);
    }
    if !within(lp.a_x, rules.a_x_range) {
        violated.push(RULE_ACCEL);
    }
    if violated.is_empty() {
        Verdict::Accepted
    } else {
        Verdict::Rejected(violated)
    }
}

/// Least-squares parameters of a ground-truth future.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitResult {
    pub params: LatentParams,
    /// RMS longitudinal residual in meters.
    pub residual_x: f64,
    /// RMS lateral residual in meters.
    pub residual_y: f64,
    /// The lateral track carried no signal; `lambda` is 0 and `stretch`
    /// sits at the lower end of the search range.
    pub degenerate: bool,
}

const LAMBDA_GRID: (f64, f64, f64) = (-10.0, 10.0, 0.25);
const LN_MU_GRID: (f64, f64, f64) = (-4.0, 2.0, 0.25);
/// Bounds on ln mu during refinement; wider than the grid so slow keep-lane
/// drifts below its lower edge are still recovered.
const LN_MU_REFINE: (f64, f64) = (-10.0, 2.0);
const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-10;

fn grid_points((lo, hi, step): (f64, f64, f64)) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(move |k| lo + k as f64 * step)
}

fn sse(ys: &[f64], lambda: f64, z3: f64, grid: &TimeGrid) -> f64 {
    predict_lateral(lambda, z3, grid).iter().zip(ys).map(|(p, y)| (p - y) * (p - y)).sum()
}

/// Least-squares step for a two-column Jacobian via modified Gram-Schmidt.
/// Returns `None` when the columns are numerically dependent.
fn two_column_solve(a: &[f64], b: &[f64], r: &[f64]) -> Option<(f64, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let r11 = norm(a);
    if r11 == 0.0 {
        return None;
    }
    let q1: Vec<f64> = a.iter().map(|x| x / r11).collect();
    let r12 = dot(&q1, b);
    let mut w: Vec<f64> = b.iter().zip(&q1).map(|(x, q)| x - r12 * q).collect();
    let c = dot(&q1, &w);
    w.iter_mut().zip(&q1).for_each(|(x, q)| *x -= c * q);
    let r12 = r12 + c;
    let r22 = norm(&w);
    if r22 <= 1e-14 * norm(b).max(r11) {
        return None;
    }
    let q2: Vec<f64> = w.iter().map(|x| x / r22).collect();
    let d2 = dot(&q2, r) / r22;
    let d1 = (dot(&q1, r) - r12 * d2) / r11;
    Some((d1, d2))
}

/// Fits `(a_x, lambda, mu)` to a target future. `a_x` is the closed-form
/// least-squares solution; `(lambda, ln mu)` come from a coarse grid search
/// refined by Gauss-Newton with step halving.
///
/// Uses the ground truth future, so it is a reference tool only.
pub fn fit_reference_params(target_future: &[[f64; 2]], v0x: f64, grid: &TimeGrid) -> Result<FitResult> {
    let p = grid.pred_steps;
    if p < 3 || target_future.len() != p {
        return Err(Error::Usage(format!("curve fit needs {p} >= 3 future points, got {}", target_future.len())));
    }
    if target_future.iter().flatten().any(|v| !v.is_finite()) || !v0x.is_finite() {
        return Err(Error::Data("curve fit: non-finite input".into()));
    }

    let (mut num, mut den) = (0.0, 0.0);
    for (i, pt) in target_future.iter().enumerate() {
        let t = grid.time(i);
        let basis = 0.5 * t * t;
        num += (pt[0] - v0x * t) * basis;
        den += basis * basis;
    }
    let a_x = num / den;
    let residual_x = (target_future
        .iter()
        .enumerate()
        .map(|(i, pt)| {
            let t = grid.time(i);
            let e = pt[0] - v0x * t - 0.5 * a_x * t * t;
            e * e
        })
        .sum::<f64>()
        / p as f64)
        .sqrt();

    let ys: Vec<f64> = target_future.iter().map(|pt| pt[1]).collect();
    if ys.iter().all(|y| *y == 0.0) {
        return Ok(FitResult {
            params: LatentParams { a_x, lambda: 0.0, stretch: LN_MU_GRID.0.exp() },
            residual_x,
            residual_y: 0.0,
            degenerate: true,
        });
    }

    let (mut lambda, mut z3, mut best) = (0.0, LN_MU_GRID.0, f64::INFINITY);
    for l in grid_points(LAMBDA_GRID) {
        for m in grid_points(LN_MU_GRID) {
            let e = sse(&ys, l, m, grid);
            if e < best {
                (lambda, z3, best) = (l, m, e);
            }
        }
    }

    // Variable projection: lambda is re-solved in closed form after every
    // stretch update, so the iteration follows the lambda * mu valley that
    // slows a joint update on keep-lane tracks.
    let best_amplitude = |z3: f64| -> (f64, f64) {
        let g = predict_lateral(1.0, z3, grid);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let l = if gg > 0.0 { g.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / gg } else { 0.0 };
        let l = l.clamp(LAMBDA_GRID.0, LAMBDA_GRID.1);
        (l, sse(&ys, l, z3, grid))
    };
    let (l0, e0) = best_amplitude(z3);
    if e0 <= best {
        (lambda, best) = (l0, e0);
    }
    for _ in 0..MAX_ITERATIONS {
        let pred = predict_lateral(lambda, z3, grid);
        let r: Vec<f64> = ys.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let jac = decoder_gradients([0.0, lambda, z3], grid);
        let ja: Vec<f64> = jac.iter().map(|j| j.dy_dz2).collect();
        let jb: Vec<f64> = jac.iter().map(|j| j.dy_dz3).collect();
        let Some((_, mut dz)) = two_column_solve(&ja, &jb, &r) else { break };
        let mut improved = false;
        // Bounded refinement: without it noisy keep-lane tracks drift
        // toward huge lambda and vanishing mu.
        dz = (z3 + dz).clamp(LN_MU_REFINE.0, LN_MU_REFINE.1) - z3;
        for _ in 0..60 {
            let (l, e) = best_amplitude(z3 + dz);
            if e <= best {
                z3 += dz;
                (lambda, best) = (l, e);
                improved = true;
                break;
            }
            dz *= 0.5;
        }
        if !improved || dz.abs() < STEP_TOLERANCE {
            break;
        }
    }

    Ok(FitResult {
        params: LatentParams { a_x, lambda, stretch: z3.exp() },
        residual_x,
        residual_y: (best / p as f64).sqrt(),
        degenerate: false,
    })
}

/// Fits every scenario of `ds`, in order.
pub fn fit_dataset(ds: &Dataset) -> Result<Vec<FitResult>> {
    ds.scenarios.par_iter().map(|s| fit_reference_params(&s.target_future, s.v0()[0], &ds.grid)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub parameter: &'static str,
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(parameter: &'static str, values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("no samples".into()));
        }
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let k = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
        Ok(Histogram { parameter, edges, counts })
    }

    /// Counts with `lo <= v < hi`, computed from bins fully inside the interval.
    pub fn mass_between(&self, lo: f64, hi: f64) -> usize {
        (0..self.counts.len()).filter(|&k| self.edges[k] >= lo && self.edges[k + 1] <= hi).map(|k| self.counts[k]).sum()
    }
}

/// Histograms of fitted `lambda`, `mu` and `a_x` over a dataset.
pub fn reference_histogram(ds: &Dataset, bins: usize) -> Result<Vec<Histogram>> {
    let fits = fit_dataset(ds)?;
    histograms_of(&fits, bins)
}

pub fn histograms_of(fits: &[FitResult], bins: usize) -> Result<Vec<Histogram>> {
    let pick = |f: fn(&FitResult) -> f64| fits.iter().map(f).collect::<Vec<_>>();
    Ok(vec![
        Histogram::new("lambda", &pick(|f| f.params.lambda), bins)?,
        Histogram::new("mu", &pick(|f| f.params.stretch), bins)?,
        Histogram::new("a_x", &pick(|f| f.params.a_x), bins)?,
    ])
}

pub fn write_histograms_csv<W: Write>(hists: &[Histogram], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("writing histogram: {e}"));
    w.write_record(["parameter", "bin_lo", "bin_hi", "count"]).map_err(err)?;
    for h in hists {
        for (k, c) in h.counts.iter().enumerate() {
            w.write_record([
                h.parameter.to_string(),
                h.edges[k].to_string(),
                h.edges[k + 1].to_string(),
                c.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<histogram>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GeneratorConfig, ManeuverTruth};
    use crate::decoder::decode;

    fn lp(lambda: f64, stretch: f64, a_x: f64) -> LatentParams {
        LatentParams { a_x, lambda, stretch }
    }

    fn track(a_x: f64, lambda: f64, stretch: f64, v0x: f64, g: &TimeGrid) -> Vec<[f64; 2]> {
        let t = decode([a_x, lambda, stretch.ln()], v0x, g);
        t.xs.iter().zip(&t.ys).map(|(x, y)| [*x, *y]).collect()
    }

    #[test]
    fn classifier_cases() {
        let th = ClassifierThresholds::default();
        assert_eq!(classify(&lp(3.0, 1.0, 0.0), &th), ManeuverClass::LL);
        assert_eq!(classify(&lp(3.0, 0.1, 0.0), &th), ManeuverClass::KL);
        assert_eq!(classify(&lp(-2.0, 1.0, 0.0), &th), ManeuverClass::LR);
        assert_eq!(classify(&lp(0.5, 1.0, 0.0), &th), ManeuverClass::KL);
    }

    #[test]
    fn watchdog_cases() {
        let rules = WatchdogRuleSet::default();
        assert_eq!(validate(&lp(9.0, 1.0, 0.0), &rules), Verdict::Rejected(vec![RULE_LAMBDA]));
        assert_eq!(validate(&lp(2.0, 1.0, 0.0), &rules), Verdict::Accepted);
        assert_eq!(validate(&lp(2.0, 1.0, 20.0), &rules), Verdict::Rejected(vec![RULE_ACCEL]));
        let all = validate(&lp(f64::NAN, 50.0, -9.0), &rules);
        assert_eq!(all, Verdict::Rejected(vec![RULE_LAMBDA, RULE_STRETCH, RULE_ACCEL]));
        assert_eq!(all.rules(), "lambda_abs_max;stretch_range;a_x_range");
    }

    #[test]
    fn rules_from_config() {
        let kv = KeyValues::parse("lambda_abs_max = 5\nstretch_range = 0.01, 3\n").unwrap();
        let r = WatchdogRuleSet::from_key_values(&kv).unwrap();
        assert_eq!(r.lambda_abs_max, 5.0);
        assert_eq!(r.stretch_range, (0.01, 3.0));
        assert_eq!(r.a_x_range, (-5.0, 5.0));
        let bad = KeyValues::parse("a_x_range = 2,1\n").unwrap();
        assert!(WatchdogRuleSet::from_key_values(&bad).is_err());
        let th = ClassifierThresholds::from_key_values(&KeyValues::parse("t_mu=0.3").unwrap()).unwrap();
        assert_eq!(th, ClassifierThresholds { t_lambda: 0.85, t_mu: 0.3 });
    }

    #[test]
    fn fit_round_trip() {
        let g = TimeGrid::default();
        let f = fit_reference_params(&track(0.0, 3.5, 0.8, 30.0, &g), 30.0, &g).unwrap();
        assert!((f.params.lambda - 3.5).abs() < 1e-3, "{f:?}");
        assert!((f.params.stretch - 0.8).abs() < 1e-3, "{f:?}");
        assert!(!f.degenerate);
    }

    #[test]
    fn fit_acceleration_closed_form() {
        let g = TimeGrid::default();
        let f = fit_reference_params(&track(1.7, 0.0, 1.0, 25.0, &g), 25.0, &g).unwrap();
        assert!((f.params.a_x - 1.7).abs() <= 1e-9);
    }

    #[test]
    fn straight_track_is_degenerate() {
        let g = TimeGrid::default();
        let f = fit_reference_params(&track(0.0, 0.0, 1.0, 25.0, &g), 25.0, &g).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.params.lambda, 0.0);
    }

    #[test]
    fn fit_is_locally_optimal() {
        let g = TimeGrid::default();
        for (l, m) in [(3.2, 1.1), (-4.0, 0.7), (0.2, 0.15)] {
            let tr = track(0.3, l, m, 28.0, &g);
            let ys: Vec<f64> = tr.iter().map(|p| p[1]).collect();
            let f = fit_reference_params(&tr, 28.0, &g).unwrap();
            let base = sse(&ys, f.params.lambda, f.params.stretch.ln(), &g);
            for (dl, dm) in [(1e-2, 0.0), (-1e-2, 0.0), (0.0, 1e-2), (0.0, -1e-2)] {
                let other = sse(&ys, f.params.lambda + dl, (f.params.stretch + dm).ln(), &g);
                assert!(other >= base);
            }
        }
    }

    #[test]
    fn noisy_keep_lane_fit_stays_bounded() {
        let cfg =
            GeneratorConfig { count: 60, class_mix: [0.0, 1.0, 0.0], noise_sigma: 0.05, seed: 4, ..Default::default() };
        let ds = generate_synthetic(&cfg, TimeGrid::default()).unwrap();
        for f in fit_dataset(&ds).unwrap() {
            assert!(f.params.lambda.abs() <= 10.0, "{:?}", f.params);
            assert!((-10.0 - 1e-12..=2.0 + 1e-12).contains(&f.params.stretch.ln()), "{:?}", f.params);
        }
    }

    #[test]
    fn short_future_is_rejected() {
        let g = TimeGrid::from_steps(0.1, 3, 2).unwrap();
        assert!(fit_reference_params(&[[0.0; 2]; 2], 1.0, &g).is_err());
    }

    #[test]
    fn histogram_modes_follow_classes() {
        let g = TimeGrid::from_steps(0.1, 5, 50).unwrap();
        let ds = generate_synthetic(&GeneratorConfig { count: 300, seed: 2, ..GeneratorConfig::default() }, g).unwrap();
        let hists = reference_histogram(&ds, 40).unwrap();
        let lam = &hists[0];
        let counts = ds.label_counts();
        assert_eq!(lam.counts.iter().sum::<usize>(), 300);
        assert!(lam.mass_between(2.9, 4.3) >= counts[0]);
        assert!(lam.mass_between(-4.3, -2.9) >= counts[2]);
        assert_eq!(lam.mass_between(-2.5, -0.5) + lam.mass_between(0.5, 2.5), 0);

        let kl = generate_synthetic(
            &GeneratorConfig { count: 50, class_mix: [0.0, 1.0, 0.0], seed: 3, ..GeneratorConfig::default() },
            g,
        )
        .unwrap();
        let fits = fit_dataset(&kl).unwrap();
        assert!(fits.iter().all(|f| f.params.lambda.abs() < 0.85));
    }

    #[test]
    fn empty_histogram_is_error() {
        assert_eq!(
            Histogram::new("lambda", &[], 10).unwrap_err().to_string(),
            Error::Data("no samples".into()).to_string()
        );
    }

    #[test]
    fn histogram_csv_layout() {
        let h = Histogram::new("mu", &[0.0, 1.0, 2.0], 2).unwrap();
        let mut buf = Vec::new();
        write_histograms_csv(&[h], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "parameter,bin_lo,bin_hi,count\nmu,0,1,1\nmu,1,2,2\n");
    }

    #[test]
    fn noiseless_generator_tracks_round_trip() {
        let g = TimeGrid::default();
        let cfg = GeneratorConfig { count: 30, seed: 5, ..GeneratorConfig::default() };
        let (ds, truth): (_, Vec<ManeuverTruth>) = crate::data::generate_synthetic_with_truth(&cfg, g).unwrap();
        for (s, t) in ds.scenarios.iter().zip(&truth) {
            let f = fit_reference_params(&s.target_future, s.v0()[0], &g).unwrap();
            assert!((f.params.lambda - t.lambda).abs() < 1e-3, "{f:?} {t:?}");
            assert!((f.params.stretch - t.stretch).abs() < 1e-3, "{f:?} {t:?}");
            assert!((f.params.a_x - t.a_x).abs() < 1e-3);
        }
    }
}
