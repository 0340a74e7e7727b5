//! Forecast error metrics.

use crate::error::{Error, Result};

fn check_len(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(&[pred.len()], &[target.len()], "prediction vs target"));
    }
    if pred.is_empty() {
        return Err(Error::Argument("metrics need at least one element".into()));
    }
    Ok(())
}

/// `(mean((p - t)²), mean(|p - t|))` over all elements.
pub fn mse_mae(pred: &[f64], target: &[f64]) -> Result<(f64, f64)> {
    check_len(pred, target)?;
    let n = pred.len() as f64;
    let (se, ae) = pred.iter().zip(target).fold((0.0, 0.0), |(se, ae), (p, t)| {
        let d = p - t;
        (se + d * d, ae + d.abs())
    });
    Ok((se / n, ae / n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledErrors {
    pub smape: f64,
    pub mase: f64,
    pub owa: f64,
}

/// SMAPE, MASE and OWA for one forecast.
///
/// `naive2_smape` and `naive2_mase` are the reference scores OWA is relative to.
/// Terms with `|p| + |t| = 0` contribute zero to SMAPE.
pub fn smape_mase_owa(
    pred: &[f64],
    target: &[f64],
    insample: &[f64],
    season_period: usize,
    naive2_smape: f64,
    naive2_mase: f64,
) -> Result<ScaledErrors> {
    check_len(pred, target)?;
    let m = season_period.max(1);
    if insample.len() <= m {
        return Err(Error::Argument(format!(
            "in-sample length {} must exceed season period {m}",
            insample.len()
        )));
    }
    let h = pred.len() as f64;
    let smape = 200.0 / h
        * pred
            .iter()
            .zip(target)
            .map(|(p, t)| {
                let den = p.abs() + t.abs();
                if den == 0.0 {
                    0.0
                } else {
                    (p - t).abs() / den
                }
            })
            .sum::<f64>();
    let naive = insample.windows(m + 1).map(|w| (w[m] - w[0]).abs()).sum::<f64>()
        / (insample.len() - m) as f64;
    if naive == 0.0 {
        return Err(Error::Degenerate(
            "seasonal naive error of the in-sample series is zero".into(),
        ));
    }
    let mase = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / h / naive;
    let owa = 0.5 * (smape / naive2_smape + mase / naive2_mase);
    Ok(ScaledErrors { smape, mase, owa })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_forecast() {
        assert_eq!(mse_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        let s = smape_mase_owa(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0, 4.0], 1, 1.0, 1.0).unwrap();
        assert_eq!((s.smape, s.mase, s.owa), (0.0, 0.0, 0.0));
    }

    #[test]
    fn symmetric_unit_errors() {
        assert_eq!(mse_mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn hand_evaluated_mase() {
        let s = smape_mase_owa(&[3.0, 3.0], &[2.0, 4.0], &[1.0, 2.0, 3.0], 1, 1.0, 1.0).unwrap();
        assert!((s.mase - 1.0).abs() < 1e-15);
        let owa = smape_mase_owa(&[3.0, 3.0], &[2.0, 4.0], &[1.0, 2.0, 3.0], 1, s.smape, s.mase)
            .unwrap()
            .owa;
        assert!((owa - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_terms_and_degenerate_series() {
        let s = smape_mase_owa(&[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0], 1, 1.0, 1.0).unwrap();
        assert_eq!(s.smape, 0.0);
        assert!(matches!(
            smape_mase_owa(&[1.0], &[2.0], &[5.0, 5.0, 5.0], 1, 1.0, 1.0),
            Err(Error::Degenerate(_))
        ));
        assert!(smape_mase_owa(&[1.0], &[2.0], &[1.0, 2.0], 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(mse_mae(&[1.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
    }
}
