//! Nonlinear fits behind the perceptual model: the power-law transfer, the
//! per-level response distributions (Gaussian vs. two-component mixture,
//! selected by BIC), and the linear shape calibration.

use super::TransferFit;
use crate::error::{Error, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

/// Quantile of the standard normal at 0.75; the half-width of the central
/// 50% interval is this many standard deviations.
pub const Z_75: f64 = 0.674_489_750_196_081_7;

// ---------------------------------------------------------------------------
// power-law transfer fit

/// Fit `g(x) = a*x^b + c` to `(stimulus adu, perceived adu)` points with
/// damped Gauss-Newton from multiple starts (`b` in {0.5, 1, 2}).
pub fn fit_transfer(points: &[(f64, f64)]) -> Result<TransferFit> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if xs.len() < 5 {
        return Err(Error::validation(format!(
            "transfer fit needs 5 distinct stimulus levels, got {}",
            xs.len()
        )));
    }
    if points.iter().any(|p| p.0 <= 0.0) {
        return Err(Error::validation("stimulus values must be positive"));
    }

    let (x_min, x_max) = (xs[0], *xs.last().unwrap());
    let y_min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);

    let mut best: Option<([f64; 3], f64)> = None;
    for b0 in [0.5, 1.0, 2.0] {
        let denom = x_max.powf(b0) - x_min.powf(b0);
        let a0 = if denom.abs() > 1e-12 {
            (y_max - y_min) / denom
        } else {
            1.0
        };
        let a0 = if a0.abs() < 1e-9 { 1.0 } else { a0 };
        let c0 = points
            .iter()
            .map(|&(x, y)| y - a0 * x.powf(b0))
            .sum::<f64>()
            / points.len() as f64;
        if let Some((theta, sse)) = levenberg_power(points, [a0, b0, c0]) {
            if best.map(|(_, s)| sse < s).unwrap_or(true) {
                best = Some((theta, sse));
            }
        }
    }
    let ([a, b, c], sse) =
        best.ok_or_else(|| Error::numeric("transfer fit failed to converge from all starts"))?;
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::numeric(format!(
            "fitted transfer is not increasing (a={a:.4}, b={b:.4})"
        )));
    }
    Ok(TransferFit {
        a,
        b,
        c,
        domain: (x_min, x_max),
        residual: (sse / points.len() as f64).sqrt(),
    })
}

fn sse_power(points: &[(f64, f64)], t: [f64; 3]) -> f64 {
    points
        .iter()
        .map(|&(x, y)| (t[0] * x.powf(t[1]) + t[2] - y).powi(2))
        .sum()
}

fn levenberg_power(points: &[(f64, f64)], start: [f64; 3]) -> Option<([f64; 3], f64)> {
    let mut theta = start;
    let mut sse = sse_power(points, theta);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        // normal equations of the damped Gauss-Newton step
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(x, y) in points {
            let xb = x.powf(theta[1]);
            let r = theta[0] * xb + theta[2] - y;
            let j = [xb, theta[0] * xb * x.ln(), 1.0];
            for i in 0..3 {
                jtr[i] += j[i] * r;
                for k in 0..3 {
                    jtj[i][k] += j[i] * j[k];
                }
            }
        }
        let mut improved = false;
        for _ in 0..25 {
            let mut m = jtj;
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let Some(step) = solve3(m, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 4.0;
                continue;
            };
            let cand = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            if cand[1] <= 1e-3 || !cand.iter().all(|v| v.is_finite()) {
                lambda *= 4.0;
                continue;
            }
            let cand_sse = sse_power(points, cand);
            if cand_sse < sse {
                theta = cand;
                let delta = sse - cand_sse;
                sse = cand_sse;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if delta < 1e-14 * (1.0 + sse) {
                    return Some((theta, sse));
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    if theta.iter().all(|v| v.is_finite()) {
        Some((theta, sse))
    } else {
        None
    }
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = [[0.0f64; 4]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..4 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    Some([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

// ---------------------------------------------------------------------------
// per-level distribution and 50% confidence interval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiModel {
    Gaussian,
    Mixture2,
}

#[derive(Debug, Clone)]
pub struct LevelFit {
    pub model: CiModel,
    pub mean: f64,
    pub ci_half_width: f64,
    /// (weight, mean, sd) per component when a mixture was selected.
    pub components: Vec<(f64, f64, f64)>,
}

fn normal_cdf(x: f64, mu: f64, sd: f64) -> f64 {
    0.5 * (1.0 + erf((x - mu) / (sd * std::f64::consts::SQRT_2)))
}

/// Fit the response distribution at one stimulus level with a single
/// Gaussian and a two-component Gaussian mixture, select by BIC, and report
/// the central 50% interval (quartile spread for the mixture).
pub fn fit_level_distribution(responses: &[f64]) -> Result<LevelFit> {
    let n = responses.len();
    if n < 10 {
        return Err(Error::validation(format!(
            "level distribution needs at least 10 responses, got {n}"
        )));
    }
    let mean = responses.iter().sum::<f64>() / n as f64;
    let var = responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(LevelFit {
            model: CiModel::Gaussian,
            mean,
            ci_half_width: 0.0,
            components: Vec::new(),
        });
    }

    let loglik_g = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
    let bic_g = 2.0 * (n as f64).ln() - 2.0 * loglik_g;

    let mixture = fit_mixture2(responses, mean, sd);
    let use_mixture = match &mixture {
        Some(m) => {
            let bic_m = 5.0 * (n as f64).ln() - 2.0 * m.loglik;
            bic_m < bic_g
        }
        None => false,
    };

    if use_mixture {
        let m = mixture.unwrap();
        let q25 = mixture_quantile(&m, 0.25, responses);
        let q75 = mixture_quantile(&m, 0.75, responses);
        Ok(LevelFit {
            model: CiModel::Mixture2,
            mean: m.w * m.mu1 + (1.0 - m.w) * m.mu2,
            ci_half_width: (q75 - q25) / 2.0,
            components: vec![(m.w, m.mu1, m.sd1), (1.0 - m.w, m.mu2, m.sd2)],
        })
    } else {
        Ok(LevelFit {
            model: CiModel::Gaussian,
            mean,
            ci_half_width: Z_75 * sd,
            components: Vec::new(),
        })
    }
}

struct Mixture2 {
    w: f64,
    mu1: f64,
    sd1: f64,
    mu2: f64,
    sd2: f64,
    loglik: f64,
}

impl Mixture2 {
    fn cdf(&self, x: f64) -> f64 {
        self.w * normal_cdf(x, self.mu1, self.sd1) + (1.0 - self.w) * normal_cdf(x, self.mu2, self.sd2)
    }
}

fn mixture_quantile(m: &Mixture2, q: f64, data: &[f64]) -> f64 {
    let spread = m.sd1.max(m.sd2) * 8.0 + (m.mu1 - m.mu2).abs();
    let mut lo = data.iter().cloned().fold(f64::INFINITY, f64::min) - spread;
    let mut hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + spread;
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if m.cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

/// EM for a two-component 1-D Gaussian mixture; deterministic quantile-based
/// starts plus seeded random restarts, capped at 50 runs total. Returns the
/// best non-degenerate fit (component weight at least 5%).
fn fit_mixture2(data: &[f64], mean: f64, sd: f64) -> Option<Mixture2> {
    let n = data.len();
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| sorted[((n - 1) as f64 * p).round() as usize];
    let range = sorted[n - 1] - sorted[0];
    if range == 0.0 {
        return None;
    }
    let sd_floor = 1e-4 * range;

    let mut starts: Vec<(f64, f64)> = vec![
        (q(0.25), q(0.75)),
        (q(0.10), q(0.90)),
        (q(0.33), q(0.66)),
        (q(0.05), q(0.95)),
    ];
    let mut rng = StdRng::seed_from_u64(0x6d69_7874);
    while starts.len() < 50 {
        starts.push((
            mean + sd * rng.gen_range(-2.0..0.0),
            mean + sd * rng.gen_range(0.0..2.0),
        ));
    }

    let mut best: Option<Mixture2> = None;
    for (m1, m2) in starts {
        if (m1 - m2).abs() < sd_floor {
            continue;
        }
        let mut mix = Mixture2 {
            w: 0.5,
            mu1: m1,
            sd1: (sd / 2.0).max(sd_floor),
            mu2: m2,
            sd2: (sd / 2.0).max(sd_floor),
            loglik: f64::NEG_INFINITY,
        };
        let mut resp = vec![0.0f64; n];
        let mut prev_ll = f64::NEG_INFINITY;
        let mut ok = true;
        for _ in 0..200 {
            // E step
            let mut ll = 0.0;
            for (i, &x) in data.iter().enumerate() {
                let p1 = mix.w * normal_pdf(x, mix.mu1, mix.sd1);
                let p2 = (1.0 - mix.w) * normal_pdf(x, mix.mu2, mix.sd2);
                let tot = p1 + p2;
                if tot <= 0.0 || !tot.is_finite() {
                    ok = false;
                    break;
                }
                resp[i] = p1 / tot;
                ll += tot.ln();
            }
            if !ok {
                break;
            }
            mix.loglik = ll;
            if (ll - prev_ll).abs() < 1e-9 * (1.0 + ll.abs()) {
                break;
            }
            prev_ll = ll;
            // M step
            let w1: f64 = resp.iter().sum();
            let w2 = n as f64 - w1;
            if w1 < 1e-9 || w2 < 1e-9 {
                ok = false;
                break;
            }
            mix.w = w1 / n as f64;
            mix.mu1 = data.iter().zip(&resp).map(|(x, r)| x * r).sum::<f64>() / w1;
            mix.mu2 = data.iter().zip(&resp).map(|(x, r)| x * (1.0 - r)).sum::<f64>() / w2;
            mix.sd1 = (data
                .iter()
                .zip(&resp)
                .map(|(x, r)| r * (x - mix.mu1).powi(2))
                .sum::<f64>()
                / w1)
                .sqrt()
                .max(sd_floor);
            mix.sd2 = (data
                .iter()
                .zip(&resp)
                .map(|(x, r)| (1.0 - r) * (x - mix.mu2).powi(2))
                .sum::<f64>()
                / w2)
                .sqrt()
                .max(sd_floor);
        }
        if !ok || !mix.loglik.is_finite() {
            continue;
        }
        // degenerate mixtures fall back to the Gaussian model
        if mix.w < 0.05 || mix.w > 0.95 {
            continue;
        }
        if best.as_ref().map(|b| mix.loglik > b.loglik).unwrap_or(true) {
            best = Some(mix);
        }
    }
    best
}

fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

// ---------------------------------------------------------------------------
// shape calibration

/// Least-squares line `h(x) = k*x + l` through `(reference magnitude,
/// selected magnitude)` pairs.
pub fn fit_shape_calibration(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::validation(
            "shape calibration needs at least 3 selections",
        ));
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-9 {
        return Err(Error::numeric(
            "shape calibration is rank-deficient (single reference magnitude)",
        ));
    }
    let k = (n * sxy - sx * sy) / denom;
    let l = (sy - k * sx) / n;
    Ok((k, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identity_data_recovers_identity() {
        let pts: Vec<(f64, f64)> = (1..=12).map(|i| (i as f64, i as f64)).collect();
        let f = fit_transfer(&pts).unwrap();
        assert!((f.a - 1.0).abs() < 1e-4, "a={}", f.a);
        assert!((f.b - 1.0).abs() < 1e-4, "b={}", f.b);
        assert!(f.c.abs() < 1e-4, "c={}", f.c);
    }

    #[test]
    fn noiseless_power_law_recovered() {
        let (a, b, c) = (2.0, 0.7, 1.0);
        let pts: Vec<(f64, f64)> = (1..=12)
            .map(|i| {
                let x = i as f64;
                (x, a * x.powf(b) + c)
            })
            .collect();
        let f = fit_transfer(&pts).unwrap();
        assert!((f.a - a).abs() / a < 1e-3);
        assert!((f.b - b).abs() / b < 1e-3);
        assert!((f.c - c).abs() / c.abs().max(1.0) < 1e-3);
    }

    #[test]
    fn noisy_linear_keeps_exponent_near_one() {
        let mut rng = StdRng::seed_from_u64(123);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let x = 1.0 + (i % 10) as f64;
                (x, x + noise.sample(&mut rng))
            })
            .collect();
        let f = fit_transfer(&pts).unwrap();
        assert!((0.85..=1.15).contains(&f.b), "b={}", f.b);
    }

    #[test]
    fn too_few_levels_is_error() {
        let pts = vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)];
        assert!(fit_transfer(&pts).is_err());
    }

    #[test]
    fn gaussian_ci_half_width() {
        let mut rng = StdRng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<f64> = (0..4000).map(|_| normal.sample(&mut rng)).collect();
        let fit = fit_level_distribution(&data).unwrap();
        assert!((fit.ci_half_width - Z_75).abs() < 0.05, "{}", fit.ci_half_width);
    }

    #[test]
    fn constant_responses_have_zero_width() {
        let data = vec![4.0; 50];
        let fit = fit_level_distribution(&data).unwrap();
        assert_eq!(fit.ci_half_width, 0.0);
        assert_eq!(fit.mean, 4.0);
    }

    #[test]
    fn bimodal_data_selects_mixture() {
        let mut rng = StdRng::seed_from_u64(4);
        let n1 = Normal::new(-2.0, 0.5).unwrap();
        let n2 = Normal::new(2.0, 0.5).unwrap();
        let data: Vec<f64> = (0..2000)
            .map(|i| {
                if i % 2 == 0 {
                    n1.sample(&mut rng)
                } else {
                    n2.sample(&mut rng)
                }
            })
            .collect();
        let fit = fit_level_distribution(&data).unwrap();
        assert_eq!(fit.model, CiModel::Mixture2);
        // the true quartile spread: invert the known mixture CDF numerically
        let truth = Mixture2 {
            w: 0.5,
            mu1: -2.0,
            sd1: 0.5,
            mu2: 2.0,
            sd2: 0.5,
            loglik: 0.0,
        };
        let expected = (mixture_quantile(&truth, 0.75, &data)
            - mixture_quantile(&truth, 0.25, &data))
            / 2.0;
        assert!(
            (fit.ci_half_width - expected).abs() / expected < 0.05,
            "got {}, expected about {expected}",
            fit.ci_half_width
        );
    }

    #[test]
    fn calibration_identity_and_shift() {
        let pts: Vec<(f64, f64)> = (2..=10).map(|i| (i as f64, i as f64)).collect();
        let (k, l) = fit_shape_calibration(&pts).unwrap();
        assert!((k - 1.0).abs() < 1e-12 && l.abs() < 1e-12);

        let shifted: Vec<(f64, f64)> = (2..=10).map(|i| (i as f64, i as f64 + 1.0)).collect();
        let (k, l) = fit_shape_calibration(&shifted).unwrap();
        assert!((k - 1.0).abs() < 1e-12 && (l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_calibration_recovers_line() {
        let mut rng = StdRng::seed_from_u64(5);
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let x = 2.0 + (i % 9) as f64;
                (x, 0.9 * x + 0.3 + rng.gen_range(-0.2..0.2))
            })
            .collect();
        let (k, l) = fit_shape_calibration(&pts).unwrap();
        assert!((k - 0.9).abs() < 0.05, "k={k}");
        assert!((l - 0.3).abs() < 0.05, "l={l}");
    }

    #[test]
    fn single_reference_magnitude_is_rank_deficient() {
        let pts = vec![(3.0, 2.0), (3.0, 3.0), (3.0, 4.0)];
        assert!(fit_shape_calibration(&pts).is_err());
    }
}
