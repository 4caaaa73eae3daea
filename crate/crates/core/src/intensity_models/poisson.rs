use super::{IntensityModel, ModelCheckpoint, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::scalar::{softplus, softplus_grad, softplus_inv, Real};

/// Homogeneous Poisson process with one softplus-linked rate per type.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonModel<F> {
    raw: Vec<F>,
    rates: Vec<F>,
    dlink: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct PoissonState<F> {
    time: F,
}

impl<F: Real> PoissonModel<F> {
    pub fn from_raw(raw: Vec<F>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "Poisson model needs at least one finite raw rate".into(),
            ));
        }
        let mut m = Self {
            raw: Vec::new(),
            rates: Vec::new(),
            dlink: Vec::new(),
        };
        m.set_raw_params(&raw);
        Ok(m)
    }

    pub fn from_rates(rates: &[F]) -> Result<Self> {
        if rates.iter().any(|&r| !(r > F::zero())) {
            return Err(Error::InvalidArgument(
                "Poisson rates must be positive".into(),
            ));
        }
        Self::from_raw(rates.iter().map(|&r| softplus_inv(r)).collect())
    }

    pub fn rates(&self) -> &[F] {
        &self.rates
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        ck.check_header("poisson")?;
        if ck.mu.len() != ck.num_types {
            return Err(Error::Checkpoint("rate array length differs from K".into()));
        }
        Self::from_raw(ck.mu.iter().map(|&v| F::lit(v)).collect())
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl<F: Real> IntensityModel<F> for PoissonModel<F> {
    type State = PoissonState<F>;

    fn num_types(&self) -> usize {
        self.raw.len()
    }

    fn raw_params(&self) -> &[F] {
        &self.raw
    }

    fn set_raw_params(&mut self, raw: &[F]) {
        self.raw = raw.to_vec();
        self.rates = raw.iter().map(|&x| softplus(x)).collect();
        self.dlink = raw.iter().map(|&x| softplus_grad(x)).collect();
    }

    fn linked_params(&self) -> Vec<F> {
        self.rates.clone()
    }

    fn start(&self) -> PoissonState<F> {
        PoissonState { time: F::zero() }
    }

    fn state_time(&self, s: &PoissonState<F>) -> F {
        s.time
    }

    fn advance(&self, s: &mut PoissonState<F>, t: F) {
        s.time = t;
    }

    fn observe(&self, _s: &mut PoissonState<F>, _k: usize) {}

    fn rate(&self, _s: &PoissonState<F>, k: usize) -> F {
        self.rates[k]
    }

    fn total_rate(&self, _s: &PoissonState<F>) -> F {
        self.rates.iter().copied().sum()
    }

    fn add_rate_grad(&self, _s: &PoissonState<F>, k: usize, scale: F, out: &mut [F]) {
        out[k] += scale * self.dlink[k];
    }

    fn integral(&self, _s: &PoissonState<F>, k: usize, dt: F) -> F {
        self.rates[k] * dt
    }

    fn add_integral_grad(&self, _s: &PoissonState<F>, k: usize, dt: F, scale: F, out: &mut [F]) {
        out[k] += scale * dt * self.dlink[k];
    }

    fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format_version: CHECKPOINT_VERSION,
            family: "poisson".into(),
            num_types: self.raw.len(),
            link: "softplus".into(),
            decay: None,
            mu: self.raw.iter().map(|v| v.as_f64()).collect(),
            alpha: None,
            beta: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rate_and_integral() {
        let m = PoissonModel::from_rates(&[2.0f64, 0.5]).unwrap();
        let mut s = m.start();
        m.advance(&mut s, 3.0);
        m.observe(&mut s, 1);
        assert!((m.rate(&s, 0) - 2.0).abs() < 1e-12);
        assert!((m.total_rate(&s) - 2.5).abs() < 1e-12);
        assert!((m.integral(&s, 1, 4.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = PoissonModel::from_rates(&[1.25f64]).unwrap();
        let back = PoissonModel::<f64>::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
    }
}
