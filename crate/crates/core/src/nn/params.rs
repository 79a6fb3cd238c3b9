use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Belongs to the variational circuit rather than a classical layer.
    pub quantum: bool,
}

/// Flat registry of every trainable tensor of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>, quantum: bool) -> usize {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "parameter shape and data disagree");
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name: name.into(), shape, value, grad, quantum });
        self.params.len() - 1
    }

    /// Classical weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform_fan_in<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, shape, value, false)
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn count_total(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_quantum(&self) -> usize {
        self.params.iter().filter(|p| p.quantum).map(|p| p.value.len()).sum()
    }

    pub fn count_classical(&self) -> usize {
        self.count_total() - self.count_quantum()
    }
}
