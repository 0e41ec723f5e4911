//! Error metrics: per-scenario displacement errors, empirical CDFs and
//! percentiles, confusion matrices and amplitude-error statistics.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::data::ManeuverClass;
use crate::decoder::Trajectory;
use crate::error::{Error, Result};

/// How a per-step error series is reduced to one number per scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ErrorMode {
    #[default]
    Final,
    Mean,
    Max,
}

impl FromStr for ErrorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(ErrorMode::Final),
            "mean" => Ok(ErrorMode::Mean),
            "max" => Ok(ErrorMode::Max),
            _ => Err(Error::Usage(format!("error mode must be final, mean or max, got {s:?}"))),
        }
    }
}

impl fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMode::Final => "final",
            ErrorMode::Mean => "mean",
            ErrorMode::Max => "max",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Axis {
    Longitudinal,
    #[default]
    Lateral,
}

fn reduce(errors: impl Iterator<Item = f64>, mode: ErrorMode) -> f64 {
    let v: Vec<f64> = errors.collect();
    match mode {
        ErrorMode::Final => *v.last().expect("nonempty"),
        ErrorMode::Mean => v.iter().sum::<f64>() / v.len() as f64,
        ErrorMode::Max => v.iter().copied().fold(0.0, f64::max),
    }
}

/// Absolute error along one axis, reduced per `mode`.
pub fn axis_error(pred: &Trajectory, target: &[[f64; 2]], axis: Axis, mode: ErrorMode) -> Result<f64> {
    if pred.xs.len() != target.len() || pred.ys.len() != target.len() || target.is_empty() {
        return Err(Error::Usage(format!(
            "error metric: prediction has {} points, target {}",
            pred.xs.len(),
            target.len()
        )));
    }
    let (series, col) = match axis {
        Axis::Longitudinal => (&pred.xs, 0),
        Axis::Lateral => (&pred.ys, 1),
    };
    Ok(reduce(series.iter().zip(target).map(|(p, t)| (p - t[col]).abs()), mode))
}

pub fn lateral_error(pred: &Trajectory, target: &[[f64; 2]], mode: ErrorMode) -> Result<f64> {
    axis_error(pred, target, Axis::Lateral, mode)
}

/// Empirical CDF `f(e) = #{e_i <= e} / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EcdfCurve {
    values: Vec<f64>,
}

impl EcdfCurve {
    pub fn new(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Usage("ECDF of an empty error list".into()));
        }
        if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Usage("ECDF errors must be finite and nonnegative".into()));
        }
        let mut values = errors.to_vec();
        values.sort_by(f64::total_cmp);
        Ok(EcdfCurve { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sorted error values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn query(&self, e: f64) -> f64 {
        self.values.partition_point(|v| *v <= e) as f64 / self.values.len() as f64
    }

    /// Smallest sample `e` with `f(e) >= q`.
    pub fn percentile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Usage(format!("percentile fraction must be in (0, 1], got {q}")));
        }
        let n = self.values.len();
        let mut k = ((q * n as f64).ceil() as usize).clamp(1, n);
        while k > 1 && (k - 1) as f64 / n as f64 >= q {
            k -= 1;
        }
        while k < n && (k as f64 / n as f64) < q {
            k += 1;
        }
        Ok(self.values[k - 1])
    }

    /// One `error,fraction` row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Data(format!("writing ECDF: {e}"));
        w.write_record(["error", "fraction"]).map_err(err)?;
        let n = self.values.len() as f64;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([v.to_string(), ((i + 1) as f64 / n).to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<ecdf>", e))
    }
}

pub fn ecdf(errors: &[f64]) -> Result<EcdfCurve> {
    EcdfCurve::new(errors)
}

pub fn percentile(curve: &EcdfCurve, q: f64) -> Result<f64> {
    curve.percentile(q)
}

/// Rows are true classes, columns predicted classes, both in `LL, KL, LR` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Row-normalized rates; rows without samples are `None`.
    pub fn rates(&self) -> [Option<[f64; 3]>; 3] {
        self.counts.map(|row| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row.map(|c| c as f64 / n as f64))
        })
    }

    /// Mean of the diagonal rates over classes that occur.
    pub fn macro_accuracy(&self) -> f64 {
        let diag: Vec<f64> = self.rates().iter().enumerate().filter_map(|(i, r)| r.map(|r| r[i])).collect();
        diag.iter().sum::<f64>() / diag.len() as f64
    }

    /// Fraction of all samples on the diagonal.
    pub fn accuracy(&self) -> f64 {
        (0..3).map(|i| self.counts[i][i]).sum::<usize>() as f64 / self.total() as f64
    }

    /// Counts and rates, one row per true class.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Data(format!("writing confusion matrix: {e}"));
        w.write_record(["true", "pred_LL", "pred_KL", "pred_LR", "rate_LL", "rate_KL", "rate_LR"]).map_err(err)?;
        for (c, (row, rates)) in ManeuverClass::ALL.iter().zip(self.counts.iter().zip(self.rates())) {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(usize::to_string));
            rec.extend((0..3).map(|j| rates.map_or(String::new(), |r| r[j].to_string())));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<confusion>", e))
    }
}

pub fn confusion(truth: &[ManeuverClass], predicted: &[ManeuverClass]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::Usage(format!("confusion: {} true labels, {} predictions", truth.len(), predicted.len())));
    }
    let mut counts = [[0; 3]; 3];
    for (t, p) in truth.iter().zip(predicted) {
        counts[t.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaErrorStats {
    /// Mean of `pred - ref`.
    pub bias: f64,
    /// Mean, population standard deviation, minimum and maximum of `|pred - ref|`.
    pub mean_abs: f64,
    pub std_abs: f64,
    pub min_abs: f64,
    pub max_abs: f64,
    pub count: usize,
}

impl LambdaErrorStats {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Data(format!("writing lambda stats: {e}"));
        w.write_record(["count", "bias", "mean_abs", "std_abs", "min_abs", "max_abs"]).map_err(err)?;
        w.write_record([
            self.count.to_string(),
            self.bias.to_string(),
            self.mean_abs.to_string(),
            self.std_abs.to_string(),
            self.min_abs.to_string(),
            self.max_abs.to_string(),
        ])
        .map_err(err)?;
        w.flush().map_err(|e| Error::io("<lambda stats>", e))
    }
}

pub fn lambda_error_stats(pred: &[f64], reference: &[f64]) -> Result<LambdaErrorStats> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::Usage(format!("lambda stats: {} predictions, {} references", pred.len(), reference.len())));
    }
    let n = pred.len() as f64;
    let signed: Vec<f64> = pred.iter().zip(reference).map(|(p, r)| p - r).collect();
    let abs: Vec<f64> = signed.iter().map(|d| d.abs()).collect();
    let mean_abs = abs.iter().sum::<f64>() / n;
    Ok(LambdaErrorStats {
        bias: signed.iter().sum::<f64>() / n,
        mean_abs,
        std_abs: (abs.iter().map(|a| (a - mean_abs) * (a - mean_abs)).sum::<f64>() / n).sqrt(),
        min_abs: abs.iter().copied().fold(f64::INFINITY, f64::min),
        max_abs: abs.iter().copied().fold(0.0, f64::max),
        count: pred.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ManeuverClass::*;

    fn traj(ys: &[f64]) -> Trajectory {
        Trajectory { xs: vec![0.0; ys.len()], ys: ys.to_vec() }
    }

    fn target(ys: &[f64]) -> Vec<[f64; 2]> {
        ys.iter().map(|y| [0.0, *y]).collect()
    }

    #[test]
    fn lateral_error_modes() {
        let t = target(&[0.0, 1.0, 2.0]);
        for mode in [ErrorMode::Final, ErrorMode::Mean, ErrorMode::Max] {
            assert_eq!(lateral_error(&traj(&[0.0, 1.0, 2.0]), &t, mode).unwrap(), 0.0);
            let e = lateral_error(&traj(&[0.3, 1.3, 2.3]), &t, mode).unwrap();
            assert!((e - 0.3).abs() < 1e-12);
        }
        let ramp: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let zeros = target(&[0.0; 11]);
        assert_eq!(lateral_error(&traj(&ramp), &zeros, ErrorMode::Final).unwrap(), 1.0);
        assert_eq!(lateral_error(&traj(&ramp), &zeros, ErrorMode::Max).unwrap(), 1.0);
        let mut oracle = 0.0;
        for r in &ramp {
            oracle += r;
        }
        oracle /= 11.0;
        assert!((lateral_error(&traj(&ramp), &zeros, ErrorMode::Mean).unwrap() - oracle).abs() < 1e-12);
        assert!(matches!(lateral_error(&traj(&[1.0]), &zeros, ErrorMode::Final), Err(Error::Usage(_))));
    }

    #[test]
    fn ecdf_hand_values() {
        let c = ecdf(&[0.5, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(c.query(1.5), 0.5);
        assert_eq!(c.query(4.0), 1.0);
        assert_eq!(c.query(0.1), 0.0);
        assert!(matches!(ecdf(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn percentile_hand_values() {
        let c = ecdf(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.percentile(0.95).unwrap(), 4.0);
        assert_eq!(c.percentile(0.5).unwrap(), 2.0);
        assert_eq!(c.percentile(1.0).unwrap(), 4.0);
        assert_eq!(ecdf(&[2.5]).unwrap().percentile(0.01).unwrap(), 2.5);
        assert!(c.percentile(0.0).is_err());
    }

    #[test]
    fn confusion_cases() {
        let labels = [LL, KL, LR, KL];
        let m = confusion(&labels, &labels).unwrap();
        assert_eq!(m.macro_accuracy(), 1.0);
        assert_eq!(m.rates()[1], Some([0.0, 1.0, 0.0]));

        let m = confusion(&[KL, KL], &[LL, LL]).unwrap();
        assert_eq!(m.rates()[1], Some([1.0, 0.0, 0.0]));
        assert_eq!(m.macro_accuracy(), 0.0);
        assert!(confusion(&[KL], &[]).is_err());
    }

    #[test]
    fn confusion_hand_count() {
        let truth = [LL, LL, LL, KL, KL, KL, LR, LR, LR];
        let pred = [LL, LL, KL, KL, KL, LR, LR, KL, LR];
        let m = confusion(&truth, &pred).unwrap();
        assert_eq!(m.counts, [[2, 1, 0], [0, 2, 1], [0, 1, 2]]);
        assert!((m.macro_accuracy() - 2.0 / 3.0).abs() < 1e-15);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("true,pred_LL,pred_KL,pred_LR,rate_LL,rate_KL,rate_LR\nLL,2,1,0,"));
    }

    #[test]
    fn lambda_stats_cases() {
        let r = [1.0, -2.0, 3.5];
        let s = lambda_error_stats(&r, &r).unwrap();
        assert_eq!((s.bias, s.mean_abs, s.std_abs, s.min_abs, s.max_abs), (0.0, 0.0, 0.0, 0.0, 0.0));
        let shifted: Vec<f64> = r.iter().map(|v| v + 0.2).collect();
        let s = lambda_error_stats(&shifted, &r).unwrap();
        assert!((s.bias - 0.2).abs() < 1e-12 && s.std_abs < 1e-12 && (s.max_abs - 0.2).abs() < 1e-12);
        assert!(lambda_error_stats(&[1.0], &[]).is_err());
    }

    #[test]
    fn ecdf_csv_layout() {
        let mut buf = Vec::new();
        ecdf(&[2.0, 1.0]).unwrap().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "error,fraction\n1,0.5\n2,1\n");
    }

    proptest! {
        #[test]
        fn ecdf_is_a_monotone_step_function(errors in prop::collection::vec(0.0f64..100.0, 1..60), probe in prop::collection::vec(-1.0f64..110.0, 10)) {
            let c = ecdf(&errors).unwrap();
            let mut probe = probe;
            probe.sort_by(f64::total_cmp);
            for w in probe.windows(2) {
                prop_assert!(c.query(w[0]) <= c.query(w[1]));
            }
            let min = c.values()[0];
            let max = *c.values().last().unwrap();
            prop_assert_eq!(c.query(min - 1e-9), 0.0);
            prop_assert_eq!(c.query(max), 1.0);
            for e in &errors {
                prop_assert_eq!(c.percentile(c.query(*e)).unwrap(), *e);
            }
        }

        #[test]
        fn duplicating_the_worst_error_never_lowers_a_percentile(errors in prop::collection::vec(0.0f64..10.0, 1..40), q in 0.01f64..1.0) {
            let c = ecdf(&errors).unwrap();
            let mut more = errors.clone();
            more.push(*c.values().last().unwrap());
            prop_assert!(ecdf(&more).unwrap().percentile(q).unwrap() >= c.percentile(q).unwrap());
        }

        #[test]
        fn confusion_rows_sum_to_one(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..80)) {
            let t: Vec<ManeuverClass> = pairs.iter().map(|p| ManeuverClass::ALL[p.0]).collect();
            let p: Vec<ManeuverClass> = pairs.iter().map(|p| ManeuverClass::ALL[p.1]).collect();
            let m = confusion(&t, &p).unwrap();
            prop_assert_eq!(m.total(), pairs.len());
            for r in m.rates().iter().flatten() {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
