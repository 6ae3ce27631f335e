//! Saliency metrics on `f64` grids.

use crate::datamodel::{FixationMap, Grid};
use crate::error::{Error, Result};

/// Regularization constant inside the KL logarithm.
pub const EPSILON: f64 = 2.2e-16;

fn same_shape(a: &Grid, b: &Grid) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("maps are {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn normalized(g: &Grid, what: &str) -> Result<Vec<f64>> {
    if g.data.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid(format!("{what} has negative values")));
    }
    let sum: f64 = g.data.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Degenerate(format!("degenerate {what}: map sums to zero")));
    }
    Ok(g.data.iter().map(|v| v / sum).collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `Σ ĝ·ln(ε + ĝ/(Ŝ + ε))` on sum-normalized maps.
pub fn kl_divergence(gs: &Grid, s: &Grid) -> Result<f64> {
    kl_divergence_with(gs, s, EPSILON)
}

pub fn kl_divergence_with(gs: &Grid, s: &Grid, eps: f64) -> Result<f64> {
    same_shape(gs, s)?;
    let g = normalized(gs, "density")?;
    let p = normalized(s, "saliency")?;
    Ok(g.iter().zip(&p).map(|(g, p)| g * (eps + g / (p + eps)).ln()).sum())
}

/// Pearson correlation with population standard deviations.
pub fn correlation_coefficient(gs: &Grid, s: &Grid) -> Result<f64> {
    same_shape(gs, s)?;
    let (mg, sg) = mean_std(&gs.data);
    let (ms, ss) = mean_std(&s.data);
    if sg == 0.0 || ss == 0.0 {
        return Err(Error::Degenerate("zero variance: correlation undefined".into()));
    }
    let cov = gs.data.iter().zip(&s.data).map(|(a, b)| (a - mg) * (b - ms)).sum::<f64>() / gs.data.len() as f64;
    Ok((cov / (sg * ss)).clamp(-1.0, 1.0))
}

pub fn mse(gs: &Grid, s: &Grid) -> Result<f64> {
    same_shape(gs, s)?;
    Ok(gs.data.iter().zip(&s.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / gs.data.len() as f64)
}

/// Histogram intersection of the sum-normalized maps.
pub fn similarity(gs: &Grid, s: &Grid) -> Result<f64> {
    same_shape(gs, s)?;
    let g = normalized(gs, "density")?;
    let p = normalized(s, "saliency")?;
    Ok(g.iter().zip(&p).map(|(a, b)| a.min(*b)).sum())
}

fn check_fixations(gf: &FixationMap, s: &Grid) -> Result<()> {
    if gf.shape() != s.shape() {
        return Err(Error::Shape(format!("fixations are {:?}, map is {:?}", gf.shape(), s.shape())));
    }
    if gf.count() == 0 {
        return Err(Error::Degenerate("no fixations".into()));
    }
    Ok(())
}

/// Mean z-scored saliency at fixated pixels.
pub fn nss(gf: &FixationMap, s: &Grid) -> Result<f64> {
    check_fixations(gf, s)?;
    let (mean, std) = mean_std(&s.data);
    if std == 0.0 {
        return Err(Error::Degenerate("zero variance: NSS undefined".into()));
    }
    let (sum, n) = s
        .data
        .iter()
        .zip(&gf.data)
        .filter(|(_, &f)| f != 0)
        .fold((0.0, 0usize), |(acc, n), (v, _)| (acc + (v - mean) / std, n + 1));
    Ok(sum / n as f64)
}

/// AUC-Judd. Thresholds at every distinct fixated saliency value; true
/// positive rate over fixations, false positive rate over non-fixated
/// pixels; trapezoidal area from (0,0) to (1,1). Pixels tied at a threshold
/// share the trapezoid, so each tie contributes half weight.
pub fn auc_judd(gf: &FixationMap, s: &Grid) -> Result<f64> {
    check_fixations(gf, s)?;
    let n_fix = gf.count();
    let n_other = s.data.len() - n_fix;
    if n_other == 0 {
        return Err(Error::Degenerate("every pixel is fixated: AUC undefined".into()));
    }
    let mut fixated: Vec<f64> = Vec::with_capacity(n_fix);
    let mut others: Vec<f64> = Vec::with_capacity(n_other);
    for (&v, &f) in s.data.iter().zip(&gf.data) {
        if f != 0 {
            fixated.push(v);
        } else {
            others.push(v);
        }
    }
    let desc = |a: &f64, b: &f64| b.total_cmp(a);
    fixated.sort_by(desc);
    others.sort_by(desc);
    let (mut prev_tp, mut prev_fp, mut area) = (0.0, 0.0, 0.0);
    let (mut i, mut j) = (0, 0);
    while i < fixated.len() {
        let t = fixated[i];
        while i < fixated.len() && fixated[i] >= t {
            i += 1;
        }
        while j < others.len() && others[j] >= t {
            j += 1;
        }
        let tp = i as f64 / n_fix as f64;
        let fp = j as f64 / n_other as f64;
        area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    area += (1.0 - prev_fp) * (1.0 + prev_tp) / 2.0;
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Grid {
        Grid::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn kl_hand_value() {
        let kl = kl_divergence(&row(&[0.75, 0.25]), &row(&[0.5, 0.5])).unwrap();
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.1308).abs() < 1e-4);
    }

    #[test]
    fn kl_of_proportional_maps_is_zero() {
        let g = row(&[1.0, 2.0, 3.0]);
        let s = row(&[0.5, 1.0, 1.5]);
        assert!(kl_divergence(&g, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn kl_rejects_zero_density() {
        let err = kl_divergence(&row(&[0.0, 0.0]), &row(&[0.5, 0.5])).unwrap_err();
        assert!(err.to_string().contains("degenerate density"), "{err}");
    }

    #[test]
    fn cc_hand_values() {
        let g = row(&[1.0, 2.0, 3.0, 4.0]);
        assert!((correlation_coefficient(&g, &row(&[1.0, 3.0, 2.0, 4.0])).unwrap() - 0.8).abs() < 1e-12);
        assert!((correlation_coefficient(&g, &g).unwrap() - 1.0).abs() < 1e-12);
        let flipped = row(&[4.0, 3.0, 2.0, 1.0]);
        assert!((correlation_coefficient(&g, &flipped).unwrap() + 1.0).abs() < 1e-12);
        assert!(correlation_coefficient(&g, &row(&[1.0; 4])).is_err());
    }

    #[test]
    fn mse_hand_values() {
        assert_eq!(mse(&row(&[0.0, 1.0]), &row(&[0.5, 0.5])).unwrap(), 0.25);
        assert_eq!(mse(&row(&[1.0; 3]), &row(&[0.0; 3])).unwrap(), 1.0);
    }

    #[test]
    fn sim_hand_values() {
        assert!((similarity(&row(&[0.7, 0.3]), &row(&[0.4, 0.6])).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(similarity(&row(&[1.0, 0.0]), &row(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn nss_hand_values() {
        let s = Grid::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let one = FixationMap::from_points(2, 2, &[(1, 1)]).unwrap();
        assert!((nss(&one, &s).unwrap() - 1.5 / 1.25f64.sqrt()).abs() < 1e-12);
        let all = FixationMap::new(2, 2, vec![1; 4]).unwrap();
        assert!(nss(&all, &s).unwrap().abs() < 1e-12);
        let flat = Grid::new(2, 2, vec![0.5; 4]).unwrap();
        assert!(nss(&one, &flat).unwrap_err().to_string().contains("zero variance"));
    }

    #[test]
    fn auc_extremes() {
        let s = Grid::new(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let f = FixationMap::from_points(2, 2, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(auc_judd(&f, &s).unwrap(), 1.0);
        let flat = Grid::new(2, 2, vec![0.3; 4]).unwrap();
        assert_eq!(auc_judd(&f, &flat).unwrap(), 0.5);
        let all = FixationMap::new(2, 2, vec![1; 4]).unwrap();
        assert!(auc_judd(&all, &s).is_err());
    }
}
