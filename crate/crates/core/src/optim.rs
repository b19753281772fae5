//! Adam with per-coordinate learning rates.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Keeps the moments of the coordinate blocks where `keep` is true;
    /// `block` is the number of coordinates per entry.
    pub fn retain_blocks(&mut self, block: usize, keep: &[bool]) {
        let filter = |buf: &mut Vec<f64>| {
            let mut out = Vec::with_capacity(buf.len());
            for (i, chunk) in buf.chunks_exact(block).enumerate() {
                if keep[i] {
                    out.extend_from_slice(chunk);
                }
            }
            *buf = out;
        };
        filter(&mut self.m);
        filter(&mut self.v);
    }

    /// Appends fresh zero moments.
    pub fn grow(&mut self, extra: usize) {
        self.m.resize(self.m.len() + extra, 0.0);
        self.v.resize(self.v.len() + extra, 0.0);
    }

    /// One bias-corrected update. `lr(i)` gives the step size of coordinate
    /// `i`; a zero rate leaves the coordinate and its moments untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: impl Fn(usize) -> f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let rate = lr(i);
            if rate == 0.0 {
                continue;
            }
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
