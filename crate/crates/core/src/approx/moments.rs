//! Closed-form moments of the channel-sampled convolution estimator
//! (scaled, with replacement).
//!
//! For channel `i` write `a_{hw} = I[b, oh+h, ow+w, i] · K[h, w, i, oc]` for
//! the taps of one output element. The second moment of that channel's
//! contribution splits into a diagonal part `Σ a²` and a cross part
//! `Σ_{(h,w)≠(h',w')} a a'`. Summed over all output elements the diagonal
//! part equals `‖I^[i]‖²‖K_[i]‖² − E_i` and the cross part is `R_i`.

use crate::error::{Error, Result};
use crate::sampling::Distribution;
use crate::tensor::{axis_sum_squares, conv2d_exact, sum_squares, ConvGeometry, PaddingMode, Tensor4};

/// Per-channel spatial corrections to the norm-product second moment.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionTerms {
    /// Deficit between `‖I^[i]‖²‖K_[i]‖²` and the summed diagonal term.
    pub e_ik: Vec<f64>,
    /// Summed cross terms between distinct kernel taps.
    pub r_ik: Vec<f64>,
}

/// Taps `a_{hw}` of channel `i` at one output element, padded taps as zero.
fn taps(
    g: &ConvGeometry,
    input: &Tensor4,
    kernel: &Tensor4,
    [b, oh, ow, oc]: [usize; 4],
    i: usize,
    out: &mut Vec<f64>,
) {
    out.clear();
    for h in 0..g.kh {
        let r = g.in_row(oh, h);
        for w in 0..g.kw {
            let x = match (r, g.in_col(ow, w)) {
                (Some(r), Some(c)) => input.get([b, r, c, i]),
                _ => 0.0,
            };
            out.push(x * kernel.get([h, w, i, oc]));
        }
    }
}

/// `(Σ a², Σ_{p≠q} a_p a_q)`, the cross sum by explicit pairs.
fn diag_and_cross(a: &[f64]) -> (f64, f64) {
    let diag = sum_squares(a);
    let mut cross = 0.0;
    for (p, x) in a.iter().enumerate() {
        for (q, y) in a.iter().enumerate() {
            if p != q {
                cross += x * y;
            }
        }
    }
    (diag, cross)
}

fn for_each_output(g: &ConvGeometry, mut f: impl FnMut([usize; 4])) {
    for b in 0..g.batch {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                for oc in 0..g.oc {
                    f([b, oh, ow, oc]);
                }
            }
        }
    }
}

/// Summed diagonal and cross terms per channel.
fn channel_diag_cross(input: &Tensor4, kernel: &Tensor4, g: &ConvGeometry) -> (Vec<f64>, Vec<f64>) {
    let mut diag = vec![0.0; g.ic];
    let mut cross = vec![0.0; g.ic];
    let mut buf = Vec::with_capacity(g.kh * g.kw);
    for_each_output(g, |coords| {
        for i in 0..g.ic {
            taps(g, input, kernel, coords, i, &mut buf);
            let (d, c) = diag_and_cross(&buf);
            diag[i] += d;
            cross[i] += c;
        }
    });
    (diag, cross)
}

fn norm_products(input: &Tensor4, kernel: &Tensor4) -> Vec<f64> {
    let a = axis_sum_squares(input, 3);
    let b = axis_sum_squares(kernel, 2);
    a.iter().zip(&b).map(|(x, y)| x * y).collect()
}

/// `E_IK` and `R_IK` by direct summation. Cost is
/// `B·OH·OW·OC·IC·(KH·KW)²`; intended for small instances.
pub fn correction_terms(input: &Tensor4, kernel: &Tensor4, pad: PaddingMode) -> Result<CorrectionTerms> {
    let g = ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    let (diag, cross) = channel_diag_cross(input, kernel, &g);
    let e_ik = norm_products(input, kernel)
        .iter()
        .zip(&diag)
        .map(|(n, d)| (n - d).max(0.0))
        .collect();
    Ok(CorrectionTerms { e_ik, r_ik: cross })
}

fn check_dist(dist: &Distribution, ic: usize, k: usize) -> Result<()> {
    if dist.len() != ic {
        return Err(Error::shape(format!(
            "distribution over {} items for {ic} channels",
            dist.len()
        )));
    }
    if k == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    Ok(())
}

fn zero_probability_error(i: usize) -> Error {
    Error::domain(format!("channel {i} contributes to the output but has probability 0"))
}

/// `E‖O − Õ‖_F² = Σ_i (‖I^[i]‖²‖K_[i]‖² − E_i + R_i) / (k p_i) − ‖O‖²/k`.
pub fn conv_expected_error(
    input: &Tensor4,
    kernel: &Tensor4,
    dist: &Distribution,
    k: usize,
    pad: PaddingMode,
) -> Result<f64> {
    let g = ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    check_dist(dist, g.ic, k)?;
    let (diag, cross) = channel_diag_cross(input, kernel, &g);
    let terms = correction_terms(input, kernel, pad)?;
    let norms = norm_products(input, kernel);
    let mut total = 0.0;
    for i in 0..g.ic {
        let contributes = diag[i] + cross[i] > 0.0;
        let p = dist.probs()[i];
        if p == 0.0 {
            if contributes {
                return Err(zero_probability_error(i));
            }
            continue;
        }
        total += (norms[i] - terms.e_ik[i] + terms.r_ik[i]) / (k as f64 * p);
    }
    let exact = conv2d_exact(input, kernel, pad)?;
    Ok(total - sum_squares(exact.data()) / k as f64)
}

/// Variance of one output element of the estimator:
/// `(1/k) [Σ_i (Σ a² + Σ_{p≠q} a_p a_q) / p_i − O²]`.
pub fn conv_variance_element(
    input: &Tensor4,
    kernel: &Tensor4,
    dist: &Distribution,
    k: usize,
    pad: PaddingMode,
    coords: [usize; 4],
) -> Result<f64> {
    let g = ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    check_dist(dist, g.ic, k)?;
    let out = g.output_dims();
    if coords.iter().zip(&out).any(|(c, d)| c >= d) {
        return Err(Error::domain(format!("coordinates {coords:?} outside output {out:?}")));
    }
    let mut buf = Vec::with_capacity(g.kh * g.kw);
    let mut second = 0.0;
    let mut o = 0.0;
    for i in 0..g.ic {
        taps(&g, input, kernel, coords, i, &mut buf);
        o += buf.iter().sum::<f64>();
        let (d, c) = diag_and_cross(&buf);
        let p = dist.probs()[i];
        if p == 0.0 {
            if d + c > 0.0 {
                return Err(zero_probability_error(i));
            }
            continue;
        }
        second += (d + c) / p;
    }
    Ok((second - o * o) / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::sampling::conv_nps_distribution;

    fn random(dims: [usize; 4], rng: &mut Rng) -> Tensor4 {
        Tensor4::from_fn(dims, |_| rng.normal(0.0, 1.0))
    }

    #[test]
    fn pointwise_kernels_have_no_corrections() {
        let mut rng = Rng::new(1);
        let i = random([2, 3, 3, 3], &mut rng);
        let k = random([1, 1, 3, 2], &mut rng);
        for pad in [PaddingMode::Valid, PaddingMode::Same] {
            let t = correction_terms(&i, &k, pad).unwrap();
            assert!(t.r_ik.iter().all(|r| *r == 0.0));
            let n = norm_products(&i, &k);
            for (e, n) in t.e_ik.iter().zip(&n) {
                assert!(e.abs() <= 1e-12 * n);
            }
        }
    }

    #[test]
    fn zero_kernel_channel_has_no_corrections() {
        let mut rng = Rng::new(2);
        let i = random([1, 4, 4, 2], &mut rng);
        let k = Tensor4::from_fn(
            [2, 2, 2, 1],
            |[h, w, c, _]| if c == 1 { 0.0 } else { (h + w) as f64 + 0.5 },
        );
        let t = correction_terms(&i, &k, PaddingMode::Valid).unwrap();
        assert_eq!(t.e_ik[1], 0.0);
        assert_eq!(t.r_ik[1], 0.0);
    }

    #[test]
    fn hand_summed_single_channel() {
        // 3x3 input, 2x2 kernel, valid: four output positions.
        let input = Tensor4::new([1, 3, 3, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let kernel = Tensor4::new([2, 2, 1, 1], vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        // ‖I‖² = 285, ‖K‖² = 6.25.
        // Diagonal: Σ over windows of Σ x²k², windows {1,2,4,5},{2,3,5,6},{4,5,7,8},{5,6,8,9}
        //   k² = [1, 1, 4, 0.25]
        //   (1+4+64+6.25) + (4+9+100+9) + (16+25+196+16) + (25+36+256+20.25) = 75.25+122+253+337.25 = 787.5
        // E = 285·6.25 − 787.5 = 993.75.
        // Cross: Σ over windows of (Σ a)² − Σ a², a = x·k:
        //   (1−2+8+2.5)² − 75.25 = 90.25 − 75.25 = 15
        //   (2−3+10+3)²  − 122   = 144 − 122   = 22
        //   (4−5+14+4)²  − 253   = 289 − 253   = 36
        //   (5−6+16+4.5)² − 337.25 = 380.25 − 337.25 = 43
        //   R = 116
        let t = correction_terms(&input, &kernel, PaddingMode::Valid).unwrap();
        assert!((t.e_ik[0] - 993.75).abs() < 1e-9);
        assert!((t.r_ik[0] - 116.0).abs() < 1e-9);
    }

    #[test]
    fn single_channel_is_deterministic() {
        let mut rng = Rng::new(3);
        let i = random([1, 4, 4, 1], &mut rng);
        let k = random([2, 2, 1, 2], &mut rng);
        let dist = Distribution::uniform(1);
        for ks in [1, 3] {
            let e = conv_expected_error(&i, &k, &dist, ks, PaddingMode::Valid).unwrap();
            assert!(e.abs() < 1e-10, "{e}");
            let v = conv_variance_element(&i, &k, &dist, ks, PaddingMode::Valid, [0, 1, 2, 1]).unwrap();
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn error_scales_quadratically_with_input() {
        let mut rng = Rng::new(4);
        let i = random([1, 4, 4, 3], &mut rng);
        let k = random([2, 2, 3, 2], &mut rng);
        let dist = conv_nps_distribution(&i, &k).unwrap();
        let e1 = conv_expected_error(&i, &k, &dist, 2, PaddingMode::Same).unwrap();
        let e2 = conv_expected_error(&i.scale(2.0), &k, &dist, 2, PaddingMode::Same).unwrap();
        assert!((e2 - 4.0 * e1).abs() < 1e-10 * e2.abs());
    }

    #[test]
    fn element_variances_sum_to_expected_error() {
        let mut rng = Rng::new(5);
        let i = random([2, 4, 3, 3], &mut rng);
        let k = random([2, 3, 3, 2], &mut rng);
        let dist = Distribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        for pad in [PaddingMode::Valid, PaddingMode::Same] {
            let g = ConvGeometry::new(i.dims(), k.dims(), pad).unwrap();
            let mut sum = 0.0;
            for_each_output(&g, |c| sum += conv_variance_element(&i, &k, &dist, 3, pad, c).unwrap());
            let total = conv_expected_error(&i, &k, &dist, 3, pad).unwrap();
            assert!((sum - total).abs() < 1e-9 * total.abs());
        }
    }

    #[test]
    fn zero_probability_on_contributing_channel() {
        let mut rng = Rng::new(6);
        let i = random([1, 3, 3, 2], &mut rng);
        let k = random([2, 2, 2, 1], &mut rng);
        let dist = Distribution::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            conv_expected_error(&i, &k, &dist, 1, PaddingMode::Valid),
            Err(Error::Domain(_))
        ));
        assert!(conv_variance_element(&i, &k, &Distribution::uniform(2), 1, PaddingMode::Valid, [0, 2, 0, 0]).is_err());
    }
}
