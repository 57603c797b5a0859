//! SMAPE and per-angle absolute error over Cobb angle triples.
//!
//! The default SMAPE is the challenge variant: for each image the absolute
//! errors of the three angles are summed and divided by the sum of all six
//! angles, and the per-image ratios are averaged and scaled to percent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cobb::CobbTriple;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmapeVariant {
    /// `Σ|g - p| / Σ(g + p)` per image.
    #[default]
    Challenge,
    /// Mean over the three angles of `|g - p| / ((g + p) / 2)`.
    Textbook,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image_id: String,
    /// `Σ_m |a_g - a_p|`
    pub numerator: f64,
    /// `Σ_m (a_g + a_p)`
    pub denominator: f64,
    /// `None` when the image is excluded from the mean.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: SmapeVariant,
    /// Percent.
    pub smape: f64,
    pub n_images: usize,
    /// Mean absolute error in degrees, `[MT, PT, TL]`.
    pub mae_per_angle: [f64; 3],
    pub per_image: Vec<ImageScore>,
    /// Images with an undefined ratio (zero denominator, non-zero numerator).
    pub excluded: Vec<String>,
}

fn check_inputs(gt: &[CobbTriple], pred: &[CobbTriple]) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::InvalidInput("no images to evaluate".into()));
    }
    if gt.len() != pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} ground-truth triples but {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    for (i, t) in gt.iter().chain(pred).enumerate() {
        if t.as_array().iter().any(|a| !a.is_finite() || *a < 0.0) {
            let which = if i < gt.len() { "ground truth" } else { "prediction" };
            return Err(Error::InvalidInput(format!(
                "{which} {} has a negative or non-finite angle: {:?}",
                i % gt.len(),
                t.as_array()
            )));
        }
    }
    Ok(())
}

fn image_ratio(g: [f64; 3], p: [f64; 3], variant: SmapeVariant) -> (f64, f64, Option<f64>) {
    let numerator: f64 = g.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
    let denominator: f64 = g.iter().zip(&p).map(|(a, b)| a + b).sum();
    let ratio = match variant {
        SmapeVariant::Challenge => {
            if denominator > 0.0 {
                Some(numerator / denominator)
            } else if numerator == 0.0 {
                Some(0.0)
            } else {
                None
            }
        }
        SmapeVariant::Textbook => Some(
            g.iter()
                .zip(&p)
                .map(|(a, b)| {
                    let d = (a + b) / 2.0;
                    if d > 0.0 {
                        (a - b).abs() / d
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / 3.0,
        ),
    };
    (numerator, denominator, ratio)
}

/// Scores paired triples. `ids[i]` names the image of `gt[i]` and `pred[i]`.
pub fn evaluate(
    ids: &[String],
    gt: &[CobbTriple],
    pred: &[CobbTriple],
    variant: SmapeVariant,
) -> Result<EvalReport> {
    check_inputs(gt, pred)?;
    if ids.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "{} image ids for {} triples",
            ids.len(),
            gt.len()
        )));
    }
    let per_image: Vec<ImageScore> = ids
        .iter()
        .zip(gt.iter().zip(pred))
        .map(|(id, (g, p))| {
            let (numerator, denominator, ratio) = image_ratio(g.as_array(), p.as_array(), variant);
            ImageScore {
                image_id: id.clone(),
                numerator,
                denominator,
                ratio,
            }
        })
        .collect();
    let ratios: Vec<f64> = per_image.iter().filter_map(|s| s.ratio).collect();
    if ratios.is_empty() {
        return Err(Error::InvalidInput(
            "every image has an undefined SMAPE ratio".into(),
        ));
    }
    let excluded = per_image
        .iter()
        .filter(|s| s.ratio.is_none())
        .map(|s| s.image_id.clone())
        .collect();
    Ok(EvalReport {
        variant,
        smape: 100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64,
        n_images: per_image.len(),
        mae_per_angle: mae_per_angle(gt, pred)?,
        per_image,
        excluded,
    })
}

/// Challenge-variant SMAPE over positionally paired triples, with image ids
/// taken from the position.
pub fn smape(gt: &[CobbTriple], pred: &[CobbTriple]) -> Result<EvalReport> {
    let ids: Vec<String> = (0..gt.len()).map(|i| i.to_string()).collect();
    evaluate(&ids, gt, pred, SmapeVariant::Challenge)
}

/// Mean absolute error per angle, `[MT, PT, TL]`.
pub fn mae_per_angle(gt: &[CobbTriple], pred: &[CobbTriple]) -> Result<[f64; 3]> {
    check_inputs(gt, pred)?;
    let mut sum = [0.0; 3];
    for (g, p) in gt.iter().zip(pred) {
        for (k, (a, b)) in g.as_array().iter().zip(p.as_array()).enumerate() {
            sum[k] += (a - b).abs();
        }
    }
    let n = gt.len() as f64;
    Ok(sum.map(|s| s / n))
}

/// Joins two id-keyed tables. Every id must appear in both.
pub fn pair_by_id(
    gt: &BTreeMap<String, CobbTriple>,
    pred: &BTreeMap<String, CobbTriple>,
) -> Result<(Vec<String>, Vec<CobbTriple>, Vec<CobbTriple>)> {
    let missing_pred: Vec<&String> = gt.keys().filter(|k| !pred.contains_key(*k)).collect();
    let missing_gt: Vec<&String> = pred.keys().filter(|k| !gt.contains_key(*k)).collect();
    if !missing_pred.is_empty() || !missing_gt.is_empty() {
        return Err(Error::InvalidInput(format!(
            "image ids do not match: {} without prediction {:?}, {} without ground truth {:?}",
            missing_pred.len(),
            missing_pred.iter().take(5).collect::<Vec<_>>(),
            missing_gt.len(),
            missing_gt.iter().take(5).collect::<Vec<_>>(),
        )));
    }
    let ids: Vec<String> = gt.keys().cloned().collect();
    let g = ids.iter().map(|k| gt[k]).collect();
    let p = ids.iter().map(|k| pred[k]).collect();
    Ok((ids, g, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(a: f64, b: f64, c: f64) -> CobbTriple {
        CobbTriple::new(a, b, c)
    }

    #[test]
    fn identity_is_zero() {
        let g = vec![t(10.0, 20.0, 30.0), t(0.0, 0.0, 0.0), t(45.5, 3.0, 9.0)];
        let r = smape(&g, &g).unwrap();
        assert_eq!(r.smape, 0.0);
        assert_eq!(r.mae_per_angle, [0.0; 3]);
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn hand_computed_single_image() {
        let r = smape(&[t(10.0, 20.0, 30.0)], &[t(20.0, 20.0, 30.0)]).unwrap();
        assert!((r.smape - 100.0 * 10.0 / 130.0).abs() < 1e-12);
        assert!((r.smape - 7.692307692307692).abs() < 1e-9);
        assert_eq!(r.per_image[0].numerator, 10.0);
        assert_eq!(r.per_image[0].denominator, 130.0);
        assert_eq!(r.mae_per_angle, [10.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_of_ratios() {
        // ratios 0.1 and 0.3
        let g = vec![t(45.0, 0.0, 0.0), t(20.0, 0.0, 0.0)];
        let p = vec![t(55.0, 0.0, 0.0), t(10.0, 0.0, 0.0)];
        let r = smape(&g, &p).unwrap();
        assert!((r.per_image[0].ratio.unwrap() - 0.1).abs() < 1e-15);
        assert!((r.per_image[1].ratio.unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let g = vec![t(9.0, 0.0, 0.0), t(7.0, 0.0, 0.0)];
        let p = vec![t(11.0, 0.0, 0.0), t(13.0, 0.0, 0.0)];
        let r = smape(&g, &p).unwrap();
        assert!((r.smape - 20.0).abs() < 1e-12);
        assert_eq!(r.mae_per_angle, [4.0, 0.0, 0.0]);
    }

    #[test]
    fn textbook_variant_differs() {
        let ids = vec!["a".to_string()];
        let r = evaluate(&ids, &[t(10.0, 20.0, 30.0)], &[t(20.0, 20.0, 30.0)], SmapeVariant::Textbook).unwrap();
        // (10 / 15) / 3
        assert!((r.smape - 100.0 * (10.0 / 15.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        assert!(smape(&[], &[]).is_err());
        assert!(smape(&[t(1.0, 2.0, 3.0)], &[]).is_err());
        assert!(smape(&[t(-1.0, 2.0, 3.0)], &[t(1.0, 2.0, 3.0)]).is_err());
        assert!(smape(&[t(f64::NAN, 2.0, 3.0)], &[t(1.0, 2.0, 3.0)]).is_err());
    }

    #[test]
    fn pairing_by_id() {
        let mut g = BTreeMap::new();
        let mut p = BTreeMap::new();
        g.insert("b".to_string(), t(1.0, 2.0, 3.0));
        g.insert("a".to_string(), t(4.0, 5.0, 6.0));
        p.insert("a".to_string(), t(4.0, 5.0, 7.0));
        assert!(pair_by_id(&g, &p).is_err());
        p.insert("b".to_string(), t(1.0, 2.0, 3.0));
        let (ids, gg, pp) = pair_by_id(&g, &p).unwrap();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(gg[0].tl, 6.0);
        assert_eq!(pp[0].tl, 7.0);
    }

    fn arb_triples() -> impl Strategy<Value = Vec<(CobbTriple, CobbTriple)>> {
        prop::collection::vec(
            (prop::array::uniform3(0.0..90.0f64), prop::array::uniform3(0.0..90.0f64))
                .prop_map(|(a, b)| (t(a[0], a[1], a[2]), t(b[0], b[1], b[2]))),
            1..20,
        )
    }

    proptest! {
        #[test]
        fn symmetric_scale_invariant_bounded(pairs in arb_triples(), lambda in 0.01..100.0f64) {
            let (g, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = smape(&g, &p).unwrap();
            let swapped = smape(&p, &g).unwrap();
            prop_assert!((r.smape - swapped.smape).abs() < 1e-9);
            let scale = |v: &[CobbTriple]| v.iter().map(|x| t(x.mt * lambda, x.pt * lambda, x.tl * lambda)).collect::<Vec<_>>();
            let scaled = smape(&scale(&g), &scale(&p)).unwrap();
            prop_assert!((r.smape - scaled.smape).abs() < 1e-9);
            prop_assert!(r.per_image.iter().all(|s| (0.0..=1.0).contains(&s.ratio.unwrap())));
            prop_assert_eq!(r.per_image.len(), r.n_images);
        }
    }
}
