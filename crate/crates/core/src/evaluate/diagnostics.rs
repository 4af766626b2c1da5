use crate::error::{Error, Result};

/// Split-chain potential scale reduction factor.
///
/// Each chain is cut into two halves (dropping the middle draw of an odd
/// length) and the classic between/within variance ratio is computed over
/// the halves.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if n < 2 {
        return Err(Error::Argument("split R-hat needs chains of at least 4 draws".into()));
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let len = c.len();
            [&c[..n], &c[len - n..]]
        })
        .collect();
    let m = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_std_normal, stream_rng};

    #[test]
    fn hand_computed_value() {
        // halves: [1,2], [3,4], [2,3], [4,5]
        let r = split_rhat(&[vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 3.0, 4.0, 5.0]]).unwrap();
        // means 1.5, 3.5, 2.5, 4.5 -> grand 3, B = 2/3 * 5 = 10/3; W = 0.5
        let var_plus = 0.5 * 0.5 + (10.0 / 3.0) / 2.0;
        assert!((r - (var_plus / 0.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mixed_chains_are_near_one() {
        let mut rng = stream_rng(1, 0);
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut v = vec![0.0; 2000];
                fill_std_normal(&mut rng, &mut v);
                v
            })
            .collect();
        let r = split_rhat(&chains).unwrap();
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn separated_chains_are_flagged() {
        let a: Vec<f64> = (0..100).map(|i| (i % 7) as f64 * 0.01).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 5.0).collect();
        assert!(split_rhat(&[a, b]).unwrap() > 1.5);
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0]]).is_err());
        assert_eq!(split_rhat(&[vec![2.0; 10]]).unwrap(), 1.0);
    }
}
