//! Forward noising and the masked-suffix training objective.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NoiseSchedule;
use crate::error::{Error, Result};

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, elementwise.
pub fn forward_noise(
    x0: &[[f64; 2]],
    t: usize,
    eps: &[[f64; 2]],
    sched: &NoiseSchedule,
) -> Result<Vec<[f64; 2]>> {
    sched.check_step(t)?;
    if eps.len() != x0.len() {
        return Err(Error::shape("forward_noise eps", x0.len(), eps.len()));
    }
    let ab = sched.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| [s * x[0] + n * e[0], s * x[1] + n * e[1]])
        .collect())
}

pub fn standard_normal_pairs<R: Rng>(rng: &mut R, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [StandardNormal.sample(rng), StandardNormal.sample(rng)])
        .collect()
}

/// Model input row: `(x, y, history_flag)`.
pub type InputRow = [f64; 3];

/// One supervised window: clean prefix, noised suffix, loss mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: Vec<InputRow>,
    /// 1 on supervised (suffix) positions, 0 on the history prefix.
    pub mask: Vec<f64>,
    pub target_eps: Vec<[f64; 2]>,
    pub t: usize,
    pub history_len: usize,
}

/// Build model input for a window whose first `k` positions are clean history.
pub fn assemble_input(history: &[[f64; 2]], suffix: &[[f64; 2]]) -> Vec<InputRow> {
    history
        .iter()
        .map(|p| [p[0], p[1], 1.0])
        .chain(suffix.iter().map(|p| [p[0], p[1], 0.0]))
        .collect()
}

/// Noise the suffix of `window` after a clean prefix of length `k`, using `eps`
/// for the suffix noise.
pub fn make_training_example_with_noise(
    window: &[[f64; 2]],
    k: usize,
    t: usize,
    eps: &[[f64; 2]],
    sched: &NoiseSchedule,
) -> Result<TrainingExample> {
    let n = window.len();
    if k >= n {
        return Err(Error::invalid(format!("history length {k} must be below window length {n}")));
    }
    let noised = forward_noise(&window[k..], t, eps, sched)?;
    let input = assemble_input(&window[..k], &noised);
    let mask = (0..n).map(|i| if i < k { 0.0 } else { 1.0 }).collect();
    let target_eps = std::iter::repeat_n([0.0, 0.0], k)
        .chain(eps.iter().copied())
        .collect();
    Ok(TrainingExample {
        input,
        mask,
        target_eps,
        t,
        history_len: k,
    })
}

/// As [`make_training_example_with_noise`], drawing the suffix noise from `seed`.
pub fn make_training_example(
    window: &[[f64; 2]],
    k: usize,
    t: usize,
    seed: u64,
    sched: &NoiseSchedule,
) -> Result<TrainingExample> {
    if k >= window.len() {
        return Err(Error::invalid(format!(
            "history length {k} must be below window length {}",
            window.len()
        )));
    }
    let mut rng = crate::seed::rng(seed);
    let eps = standard_normal_pairs(&mut rng, window.len() - k);
    make_training_example_with_noise(window, k, t, &eps, sched)
}

fn check_loss_shapes(pred: &[[f64; 2]], target: &[[f64; 2]], mask: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            "ddpm_loss",
            format!("{} rows", pred.len()),
            format!("target {} / mask {}", target.len(), mask.len()),
        ));
    }
    let count = 2.0 * mask.iter().sum::<f64>();
    if count == 0.0 {
        return Err(Error::invalid("loss mask selects no positions"));
    }
    Ok(count)
}

/// Mean squared error over masked elements (two per masked position).
pub fn ddpm_loss(pred: &[[f64; 2]], target: &[[f64; 2]], mask: &[f64]) -> Result<f64> {
    let count = check_loss_shapes(pred, target, mask)?;
    let mut sum = 0.0;
    for ((p, q), &m) in pred.iter().zip(target).zip(mask) {
        if m != 0.0 {
            sum += m * ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2));
        }
    }
    Ok(sum / count)
}

/// Loss and its gradient with respect to `pred`. Unmasked rows get exactly zero.
pub fn ddpm_loss_grad(
    pred: &[[f64; 2]],
    target: &[[f64; 2]],
    mask: &[f64],
) -> Result<(f64, Vec<[f64; 2]>)> {
    let loss = ddpm_loss(pred, target, mask)?;
    let count = check_loss_shapes(pred, target, mask)?;
    let grad = pred
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((p, q), &m)| {
            if m == 0.0 {
                [0.0, 0.0]
            } else {
                let s = 2.0 * m / count;
                [s * (p[0] - q[0]), s * (p[1] - q[1])]
            }
        })
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn window(n: usize) -> Vec<[f64; 2]> {
        (0..n).map(|i| [i as f64 / n as f64, 0.5]).collect()
    }

    #[test]
    fn zero_noise_scales_x0() {
        let s = NoiseSchedule::default();
        let x0 = window(5);
        let xt = forward_noise(&x0, 300, &[[0.0, 0.0]; 5], &s).unwrap();
        let k = s.alpha_bar(300).sqrt();
        for (a, b) in x0.iter().zip(&xt) {
            assert_eq!(b[0], k * a[0]);
        }
    }

    #[test]
    fn first_step_is_nearly_clean() {
        let s = NoiseSchedule::default();
        let x0 = window(8);
        let mut rng = crate::seed::rng(1);
        let eps = standard_normal_pairs(&mut rng, 8);
        let xt = forward_noise(&x0, 1, &eps, &s).unwrap();
        let eps_norm = eps.iter().map(|e| e[0] * e[0] + e[1] * e[1]).sum::<f64>().sqrt();
        let diff = x0
            .iter()
            .zip(&xt)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum::<f64>()
            .sqrt();
        // |x_t - x0| <= (1 - sqrt(abar)) |x0| + sqrt(beta_1) |eps|
        let x0_norm = x0.iter().map(|e| e[0] * e[0] + e[1] * e[1]).sum::<f64>().sqrt();
        let bound = (1.0 - s.alpha_bar(1).sqrt()) * x0_norm + s.beta(1).sqrt() * eps_norm;
        assert!(diff <= bound + 1e-15);
    }

    #[test]
    fn step_out_of_range() {
        let s = NoiseSchedule::default();
        assert!(forward_noise(&window(2), 0, &window(2), &s).is_err());
        assert!(forward_noise(&window(2), 1001, &window(2), &s).is_err());
        assert!(forward_noise(&window(2), 5, &window(3), &s).is_err());
    }

    #[test]
    fn example_layout() {
        let s = NoiseSchedule::default();
        let w = window(6);
        let ex = make_training_example(&w, 0, 10, 3, &s).unwrap();
        assert!(ex.mask.iter().all(|&m| m == 1.0));
        assert!(ex.input.iter().all(|r| r[2] == 0.0));

        let ex = make_training_example(&w, 5, 10, 3, &s).unwrap();
        assert_eq!(ex.mask.iter().filter(|&&m| m == 1.0).count(), 1);
        for i in 0..5 {
            assert_eq!(ex.input[i], [w[i][0], w[i][1], 1.0]);
            assert_eq!(ex.target_eps[i], [0.0, 0.0]);
        }
        assert_eq!(ex.input[5][2], 0.0);
        assert!(make_training_example(&w, 6, 10, 3, &s).is_err());
    }

    #[test]
    fn loss_semantics() {
        let s = NoiseSchedule::default();
        let ex = make_training_example(&window(6), 2, 100, 7, &s).unwrap();
        assert_eq!(ddpm_loss(&ex.target_eps, &ex.target_eps, &ex.mask).unwrap(), 0.0);

        let shifted: Vec<[f64; 2]> = ex
            .target_eps
            .iter()
            .zip(&ex.mask)
            .map(|(e, &m)| if m > 0.0 { [e[0] + 0.3, e[1] + 0.3] } else { *e })
            .collect();
        let l = ddpm_loss(&shifted, &ex.target_eps, &ex.mask).unwrap();
        assert!((l - 0.09).abs() < 1e-12);

        let mut perturbed = shifted.clone();
        perturbed[0] = [100.0, -50.0];
        perturbed[1] = [3.0, 3.0];
        assert_eq!(ddpm_loss(&perturbed, &ex.target_eps, &ex.mask).unwrap(), l);

        assert!(ddpm_loss(&shifted, &ex.target_eps, &[0.0; 6]).is_err());
        assert!(ddpm_loss(&shifted[..3], &ex.target_eps, &ex.mask).is_err());
    }

    #[test]
    fn loss_matches_double_loop_reference() {
        let mut rng = crate::seed::rng(21);
        for _ in 0..20 {
            let n = rng.gen_range(2..40);
            let pred = standard_normal_pairs(&mut rng, n);
            let target = standard_normal_pairs(&mut rng, n);
            let k = rng.gen_range(0..n);
            let mask: Vec<f64> = (0..n).map(|i| if i < k { 0.0 } else { 1.0 }).collect();
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in k..n {
                for c in 0..2 {
                    sum += (pred[i][c] - target[i][c]) * (pred[i][c] - target[i][c]);
                    count += 1;
                }
            }
            let reference = sum / count as f64;
            let got = ddpm_loss(&pred, &target, &mask).unwrap();
            assert!((got - reference).abs() <= 1e-10);
        }
    }

    #[test]
    fn gradient_vanishes_on_prefix() {
        let mut rng = crate::seed::rng(4);
        let pred = standard_normal_pairs(&mut rng, 10);
        let target = standard_normal_pairs(&mut rng, 10);
        let mask: Vec<f64> = (0..10).map(|i| if i < 4 { 0.0 } else { 1.0 }).collect();
        let (_, g) = ddpm_loss_grad(&pred, &target, &mask).unwrap();
        for row in &g[..4] {
            assert_eq!(*row, [0.0, 0.0]);
        }
        // Finite-difference spot check on a suffix element.
        let h = 1e-6;
        let mut p = pred.clone();
        p[6][1] += h;
        let up = ddpm_loss(&p, &target, &mask).unwrap();
        p[6][1] -= 2.0 * h;
        let dn = ddpm_loss(&p, &target, &mask).unwrap();
        assert!(((up - dn) / (2.0 * h) - g[6][1]).abs() < 1e-8);
    }
}
