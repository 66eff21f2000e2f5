//! Observation-mask generation (MCAR / MAR / MNAR) and MinMax scaling.
//!
//! Masks use `1` for observed and `0` for missing entries.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stream, StreamRng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar];
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "MCAR",
            Mechanism::Mar => "MAR",
            Mechanism::Mnar => "MNAR",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MCAR" => Ok(Mechanism::Mcar),
            "MAR" => Ok(Mechanism::Mar),
            "MNAR" => Ok(Mechanism::Mnar),
            other => Err(Error::param(format!("unknown missingness mechanism `{other}`"))),
        }
    }
}

/// Parameters of a missingness simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mechanism: Mechanism,
    /// Target missing fraction (of all entries for MCAR, of maskable entries
    /// for MAR, of nodes for MNAR).
    pub ratio: f64,
    pub seed: u64,
    /// MAR: fraction of nodes kept fully observed.
    pub mar_observed_fraction: f64,
    /// MAR: fraction of columns that drive the logistic model and are never
    /// masked.
    pub mar_driver_fraction: f64,
}

impl MaskSpec {
    pub fn new(mechanism: Mechanism, ratio: f64, seed: u64) -> Self {
        Self {
            mechanism,
            ratio,
            seed,
            mar_observed_fraction: 0.2,
            mar_driver_fraction: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::param(format!("missing ratio {} outside [0, 1]", self.ratio)));
        }
        for (name, f) in [
            ("mar_observed_fraction", self.mar_observed_fraction),
            ("mar_driver_fraction", self.mar_driver_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::param(format!("{name} = {f} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Mask for features `x` under this spec's mechanism.
    pub fn generate<T: Scalar>(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        match self.mechanism {
            Mechanism::Mcar => mcar_mask(x.rows(), x.cols(), self),
            Mechanism::Mar => mar_mask(x, self),
            Mechanism::Mnar => mnar_mask(x.rows(), x.cols(), self),
        }
    }
}

fn expect_mechanism(spec: &MaskSpec, m: Mechanism) -> Result<()> {
    spec.validate()?;
    if spec.mechanism != m {
        return Err(Error::param(format!("{} spec passed to {m} generator", spec.mechanism)));
    }
    Ok(())
}

/// Every entry dropped independently with probability `ratio`.
pub fn mcar_mask<T: Scalar>(n: usize, d: usize, spec: &MaskSpec) -> Result<Matrix<T>> {
    expect_mechanism(spec, Mechanism::Mcar)?;
    let mut rng = stream(spec.seed);
    Ok(Matrix::from_fn(n, d, |_, _| {
        if rng.random::<f64>() < spec.ratio {
            T::zero()
        } else {
            T::one()
        }
    }))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic MAR mask.
///
/// A random subset of `mar_driver_fraction · d` columns (at least one, at
/// most `d − 1`) and `mar_observed_fraction · n` nodes stay observed. Every
/// remaining entry `(i, j)` is missing when `u_ij < sigmoid(w · z_i + b)`,
/// where `z_i` are node `i`'s standardized driver values, `w` is a random
/// unit vector, `u_ij` fixed uniforms, and the intercept `b` is found by
/// bisection so that the realized missing fraction of maskable entries
/// matches `ratio`.
pub fn mar_mask<T: Scalar>(x: &Matrix<T>, spec: &MaskSpec) -> Result<Matrix<T>> {
    expect_mechanism(spec, Mechanism::Mar)?;
    let (n, d) = x.shape();
    if d < 2 {
        return Err(Error::param("MAR masking needs at least two columns"));
    }
    let mut rng = stream(spec.seed);
    let mut mask = Matrix::filled(n, d, T::one());
    if spec.ratio == 0.0 || n == 0 {
        return Ok(mask);
    }

    let n_drivers = ((spec.mar_driver_fraction * d as f64).round() as usize).clamp(1, d - 1);
    let mut drivers: Vec<usize> = sample(&mut rng, d, n_drivers).into_vec();
    drivers.sort_unstable();
    let targets: Vec<usize> = (0..d).filter(|j| !drivers.contains(j)).collect();

    let n_fixed = ((spec.mar_observed_fraction * n as f64).round() as usize).min(n);
    let fixed = sample(&mut rng, n, n_fixed).into_vec();
    let maskable_rows: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
    if maskable_rows.is_empty() {
        return Ok(mask);
    }

    let mut w: Vec<f64> = (0..n_drivers).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    w.iter_mut().for_each(|v| *v /= norm);

    let standardized: Vec<Vec<f64>> = drivers
        .iter()
        .map(|&j| {
            let col: Vec<f64> = x.column(j).into_iter().map(Scalar::as_f64).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            col.into_iter()
                .map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
                .collect()
        })
        .collect();
    let scores: Vec<f64> = maskable_rows
        .iter()
        .map(|&i| w.iter().zip(&standardized).map(|(wk, col)| wk * col[i]).sum())
        .collect();
    let uniforms: Vec<Vec<f64>> = maskable_rows
        .iter()
        .map(|_| targets.iter().map(|_| rng.random::<f64>()).collect())
        .collect();

    let total = (maskable_rows.len() * targets.len()) as f64;
    let realized = |b: f64| -> f64 {
        let mut missing = 0usize;
        for (s, us) in scores.iter().zip(&uniforms) {
            let p = sigmoid(s + b);
            missing += us.iter().filter(|&&u| u < p).count();
        }
        missing as f64 / total
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if realized(mid) < spec.ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = if (realized(lo) - spec.ratio).abs() <= (realized(hi) - spec.ratio).abs() {
        lo
    } else {
        hi
    };

    for ((&i, s), us) in maskable_rows.iter().zip(&scores).zip(&uniforms) {
        let p = sigmoid(s + b);
        for (&j, &u) in targets.iter().zip(us) {
            if u < p {
                mask.set(i, j, T::zero());
            }
        }
    }
    Ok(mask)
}

/// `⌈ratio · n⌉` nodes, sampled without replacement, lose their whole row.
pub fn mnar_mask<T: Scalar>(n: usize, d: usize, spec: &MaskSpec) -> Result<Matrix<T>> {
    expect_mechanism(spec, Mechanism::Mnar)?;
    let mut rng: StreamRng = stream(spec.seed);
    let count = ((spec.ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut mask = Matrix::filled(n, d, T::one());
    for i in sample(&mut rng, n, count.min(n)) {
        mask.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
    }
    Ok(mask)
}

/// Whether every mask row is entirely observed or entirely missing.
pub fn is_row_structured<T: Scalar>(mask: &Matrix<T>) -> bool {
    (0..mask.rows()).all(|i| {
        let row = mask.row(i);
        row.iter().all(|&v| v == row[0])
    })
}

/// Per-column affine map onto `[0, 1]` fitted on observed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingRecord {
    /// Maps scaled values back to original units. Constant columns map back
    /// to their single observed value.
    pub fn unscale<T: Scalar>(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.min.len() {
            return Err(Error::Dimension {
                op: "ScalingRecord::unscale",
                left: (x.rows(), self.min.len()),
                right: x.shape(),
            });
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            let (lo, hi) = (self.min[j], self.max[j]);
            if hi > lo {
                T::lit(x.get(i, j).as_f64() * (hi - lo) + lo)
            } else {
                T::lit(lo)
            }
        }))
    }

    /// Applies the fitted map to any matrix with the same columns.
    pub fn scale<T: Scalar>(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.min.len() {
            return Err(Error::Dimension {
                op: "ScalingRecord::scale",
                left: (x.rows(), self.min.len()),
                right: x.shape(),
            });
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            let (lo, hi) = (self.min[j], self.max[j]);
            if hi > lo {
                T::lit((x.get(i, j).as_f64() - lo) / (hi - lo))
            } else {
                T::lit(0.5)
            }
        }))
    }

    /// Per-column scale factor `max − min` (zero for constant columns).
    pub fn span(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(lo, hi)| hi - lo).collect()
    }
}

/// MinMax-scales every column using its observed entries; missing entries
/// stay 0 and constant columns map to 0.5.
pub fn minmax_scale<T: Scalar>(x: &Matrix<T>, mask: &Matrix<T>) -> Result<(Matrix<T>, ScalingRecord)> {
    if x.shape() != mask.shape() {
        return Err(Error::Dimension {
            op: "minmax_scale",
            left: x.shape(),
            right: mask.shape(),
        });
    }
    let (n, d) = x.shape();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for j in 0..d {
            if mask.get(i, j) != T::zero() {
                let v = x.get(i, j).as_f64();
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
    }
    if let Some(column) = min.iter().position(|v| v.is_infinite()) {
        return Err(Error::FullyMissingColumn { column });
    }
    let scaled = Matrix::from_fn(n, d, |i, j| {
        if mask.get(i, j) == T::zero() {
            T::zero()
        } else if max[j] > min[j] {
            T::lit((x.get(i, j).as_f64() - min[j]) / (max[j] - min[j]))
        } else {
            T::lit(0.5)
        }
    });
    Ok((scaled, ScalingRecord { min, max }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    type M = Matrix<f64>;

    fn missing_fraction(m: &M) -> f64 {
        m.data().iter().filter(|&&v| v == 0.0).count() as f64 / m.data().len() as f64
    }

    #[test]
    fn mcar_extremes_and_rate() {
        let all: M = mcar_mask(5, 4, &MaskSpec::new(Mechanism::Mcar, 0.0, 1)).unwrap();
        assert!(all.data().iter().all(|&v| v == 1.0));
        let none: M = mcar_mask(5, 4, &MaskSpec::new(Mechanism::Mcar, 1.0, 1)).unwrap();
        assert!(none.data().iter().all(|&v| v == 0.0));
        let big: M = mcar_mask(1000, 100, &MaskSpec::new(Mechanism::Mcar, 0.2, 3)).unwrap();
        assert!((missing_fraction(&big) - 0.2).abs() <= 0.01);
    }

    #[test]
    fn mcar_positions_look_exchangeable() {
        // Column-wise chi-square on a large sample; loose sanity bound, the
        // fraction check above is the real gate.
        let (n, d) = (20_000, 10);
        let m: M = mcar_mask(n, d, &MaskSpec::new(Mechanism::Mcar, 0.3, 17)).unwrap();
        let expected = 0.3 * n as f64;
        let chi2: f64 = (0..d)
            .map(|j| {
                let miss = m.column(j).iter().filter(|&&v| v == 0.0).count() as f64;
                (miss - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < 60.0, "chi2 = {chi2}");
    }

    #[test]
    fn masks_are_deterministic() {
        let x: M = standard_normal(50, 6, &mut stream(1));
        for mech in Mechanism::ALL {
            let spec = MaskSpec::new(mech, 0.4, 99);
            assert_eq!(spec.generate(&x).unwrap(), spec.generate(&x).unwrap());
        }
    }

    #[test]
    fn wrong_mechanism_is_rejected() {
        assert!(mcar_mask::<f64>(2, 2, &MaskSpec::new(Mechanism::Mnar, 0.1, 0)).is_err());
        assert!(mnar_mask::<f64>(2, 2, &MaskSpec::new(Mechanism::Mnar, 1.5, 0)).is_err());
    }

    #[test]
    fn mar_keeps_drivers_and_hits_ratio() {
        let mut rng = stream(5);
        let base: M = standard_normal(400, 1, &mut rng);
        let noise: M = standard_normal(400, 10, &mut rng);
        // Strong column correlation: every column follows the same latent.
        let x = M::from_fn(400, 10, |i, j| base[(i, 0)] + 0.1 * noise[(i, j)]);
        let spec = MaskSpec::new(Mechanism::Mar, 0.2, 8);
        let m = mar_mask(&x, &spec).unwrap();
        let drivers: Vec<usize> = (0..10).filter(|&j| m.column(j).iter().all(|&v| v == 1.0)).collect();
        assert!(drivers.len() >= 3);
        let full_rows = (0..400).filter(|&i| m.row(i).iter().all(|&v| v == 1.0)).count();
        assert!(full_rows >= 80);
        // Realized fraction over maskable entries: non-driver columns of
        // nodes that are not held fully observed. Driver count is 3.
        let missing = m.data().iter().filter(|&&v| v == 0.0).count() as f64;
        let maskable = (400.0 - 80.0) * 7.0;
        assert!((missing / maskable - 0.2).abs() <= 0.01, "{}", missing / maskable);
    }

    #[test]
    fn mar_zero_ratio_and_narrow_input() {
        let x: M = standard_normal(10, 4, &mut stream(2));
        let m = mar_mask(&x, &MaskSpec::new(Mechanism::Mar, 0.0, 1)).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        let narrow: M = standard_normal(10, 1, &mut stream(2));
        assert!(mar_mask(&narrow, &MaskSpec::new(Mechanism::Mar, 0.2, 1)).is_err());
    }

    #[test]
    fn mnar_drops_whole_rows() {
        let m: M = mnar_mask(10, 3, &MaskSpec::new(Mechanism::Mnar, 0.2, 4)).unwrap();
        let empty = (0..10).filter(|&i| m.row(i).iter().all(|&v| v == 0.0)).count();
        assert_eq!(empty, 2);
        assert!(is_row_structured(&m));
        let full: M = mnar_mask(10, 3, &MaskSpec::new(Mechanism::Mnar, 0.0, 4)).unwrap();
        assert!(full.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn minmax_examples() {
        let x = M::from_rows(&[[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]]).unwrap();
        let mask = M::filled(3, 2, 1.0);
        let (s, rec) = minmax_scale(&x, &mask).unwrap();
        assert_eq!(s.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.column(1), vec![0.5; 3]);
        assert_eq!(rec.unscale(&s).unwrap(), x);
        assert_eq!(rec.scale(&x).unwrap(), s);
        let hole = M::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(minmax_scale(&x, &hole), Err(Error::FullyMissingColumn { column: 1 }));
    }

    proptest::proptest! {
        #[test]
        fn minmax_round_trips(seed in 0u64..1000) {
            let mut rng = stream(seed);
            let x: M = standard_normal(8, 3, &mut rng).scale(50.0);
            let mask = M::filled(8, 3, 1.0);
            let (s, rec) = minmax_scale(&x, &mask).unwrap();
            proptest::prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            proptest::prop_assert!(rec.unscale(&s).unwrap().max_abs_diff(&x).unwrap() <= 1e-12);
        }
    }
}
