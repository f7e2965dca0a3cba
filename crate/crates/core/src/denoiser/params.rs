use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Round to the nearest `f32`. Stored state always sits on the `f32` grid so
/// that checkpoints reproduce it exactly.
pub fn to_f32_grid(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// `U(-b, b)`.
    Uniform(f64),
}

/// Named denoiser tensors with gradient buffers and Adam moments.
///
/// Tensors keep registration order internally; serialization sorts by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<f64>>,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    pub step: u64,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub(crate) fn empty() -> Self {
        ParameterSet {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            adam_m: Vec::new(),
            adam_v: Vec::new(),
            step: 0,
            index: HashMap::new(),
        }
    }

    pub(crate) fn register<R: Rng>(&mut self, name: String, shape: Vec<usize>, init: Init, rng: &mut R) -> usize {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let len: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
            Init::Uniform(b) => (0..len).map(|_| to_f32_grid(rng.gen_range(-b..=b))).collect(),
        };
        let i = self.names.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        self.shapes.push(shape);
        self.values.push(values);
        self.grads.push(vec![0.0; len]);
        self.adam_m.push(vec![0.0; len]);
        self.adam_v.push(vec![0.0; len]);
        i
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Fresh zero buffers shaped like the parameters.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|v| vec![0.0; v.len()]).collect()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Tensor indices in lexicographic name order.
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        idx
    }

    pub(crate) fn check_like(&self, other: &[Vec<f64>], what: &str) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape(what, format!("{} tensors", self.len()), format!("{} tensors", other.len())));
        }
        for (i, t) in other.iter().enumerate() {
            if t.len() != self.values[i].len() {
                return Err(Error::shape(
                    format!("{what} tensor {}", self.names[i]),
                    self.values[i].len(),
                    t.len(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update using `grads`; increments the step counter.
pub fn adam_step(params: &mut ParameterSet, grads: &[Vec<f64>], cfg: &AdamConfig) -> Result<()> {
    params.check_like(grads, "adam gradients")?;
    params.step += 1;
    let t = params.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let (w, m, v) = (&mut params.values[i], &mut params.adam_m[i], &mut params.adam_v[i]);
        for j in 0..g.len() {
            let mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            let vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let upd = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            w[j] = to_f32_grid(w[j] - upd);
            m[j] = to_f32_grid(mj);
            v[j] = to_f32_grid(vj);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_scalars(a: f64, b: f64) -> ParameterSet {
        let mut rng = crate::seed::rng(0);
        let mut p = ParameterSet::empty();
        p.register("a".into(), vec![1], Init::Zeros, &mut rng);
        p.register("b".into(), vec![1], Init::Zeros, &mut rng);
        p.values[0][0] = a;
        p.values[1][0] = b;
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = two_scalars(0.25, -0.5);
        adam_step(&mut p, &[vec![0.0], vec![0.0]], &AdamConfig::default()).unwrap();
        assert_eq!(p.values, vec![vec![0.25], vec![-0.5]]);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn scalar_oracle_first_step() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.02, 1e-6] {
            let mut p = two_scalars(0.5, 0.5);
            adam_step(&mut p, &[vec![g], vec![g]], &cfg).unwrap();
            let expected = to_f32_grid(0.5 - cfg.lr * g / (g.abs() + cfg.eps));
            assert_eq!(p.values[0][0], expected);
            assert_eq!(p.values[0], p.values[1]);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = two_scalars(0.0, 0.0);
        assert!(adam_step(&mut p, &[vec![0.0]], &AdamConfig::default()).is_err());
        assert!(adam_step(&mut p, &[vec![0.0], vec![0.0, 1.0]], &AdamConfig::default()).is_err());
    }

    #[test]
    fn sorted_order() {
        let mut rng = crate::seed::rng(0);
        let mut p = ParameterSet::empty();
        for n in ["z", "a.b", "a"] {
            p.register(n.into(), vec![2], Init::Ones, &mut rng);
        }
        let names: Vec<&str> = p.sorted_indices().iter().map(|&i| p.name(i)).collect();
        assert_eq!(names, ["a", "a.b", "z"]);
    }
}
