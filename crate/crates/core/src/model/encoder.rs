use rand::Rng;

use crate::error::{Error, Result};
use crate::model::attention::{init_linear, linear};
use crate::numerics::{ops::sinusoidal_positions, Graph, ParamStore, Tensor, Var};
use crate::types::Modality;

/// Linear projection of raw features to the model width plus a fixed sinusoidal table.
#[derive(Clone, Debug)]
pub struct FeatureEncoder {
    pub modality: Modality,
    pub raw_dim: usize,
    pub model_dim: usize,
    positions: Tensor,
}

impl FeatureEncoder {
    pub fn new(modality: Modality, raw_dim: usize, model_dim: usize, seq_len: usize) -> Self {
        Self {
            modality,
            raw_dim,
            model_dim,
            positions: sinusoidal_positions(seq_len, model_dim),
        }
    }

    pub fn prefix(&self) -> String {
        format!("enc/{}", self.modality)
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        init_linear(store, &self.prefix(), self.raw_dim, self.model_dim, rng);
    }

    /// `raw W + b + P` for an `L x D_raw` input.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, raw: Var) -> Result<Var> {
        let shape = g.shape(raw).to_vec();
        if shape.len() != 2 || shape[1] != self.raw_dim {
            return Err(Error::shape(
                "encode",
                &shape,
                &[self.positions.rows(), self.raw_dim],
            ));
        }
        if shape[0] != self.positions.rows() {
            return Err(Error::shape("encode", &shape, self.positions.shape()));
        }
        let proj = linear(g, store, &self.prefix(), raw)?;
        let pos = g.constant(self.positions.clone());
        g.add(proj, pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(raw: usize, d: usize, l: usize) -> (FeatureEncoder, ParamStore) {
        let enc = FeatureEncoder::new(Modality::Audio, raw, d, l);
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        (enc, store)
    }

    #[test]
    fn zero_input_gives_positions() {
        let (enc, store) = setup(3, 4, 5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[5, 3]));
        let y = enc.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), enc.positions());
    }

    #[test]
    fn identity_projection_adds_positions() {
        let (enc, mut store) = setup(4, 4, 3);
        store.get_mut("enc/audio/w").unwrap().value = Tensor::identity(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xin = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(xin.clone());
        let y = enc.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &xin.add(enc.positions()).unwrap());
    }

    #[test]
    fn matches_loop_oracle() {
        let (enc, mut store) = setup(3, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        store.get_mut("enc/audio/b").unwrap().value = Tensor::randn(&[6], 1.0, &mut rng);
        let xin = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(xin.clone());
        let y = enc.forward(&mut g, &store, x).unwrap();
        let w = store.value("enc/audio/w").unwrap();
        let b = store.value("enc/audio/b").unwrap();
        for t in 0..4 {
            for j in 0..6 {
                let mut s = b.data()[j] + enc.positions().get2(t, j);
                for i in 0..3 {
                    s += xin.get2(t, i) * w.get2(i, j);
                }
                assert!((g.value(y).get2(t, j) - s).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn raw_dim_mismatch_rejected() {
        let (enc, store) = setup(3, 4, 5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[5, 2]));
        assert!(matches!(enc.forward(&mut g, &store, x), Err(Error::Shape { .. })));
    }
}
