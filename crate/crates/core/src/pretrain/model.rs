use crate::error::Result;
use crate::nn::ParamStore;
use crate::pretrain::decoder::{DecoderConfig, ReconDecoder};
use crate::pretrain::loss::{masked_l1_grad, masked_l1_loss, LossReduction};
use crate::scalar::Scalar;
use crate::vit::{Capture, Encoder, EncoderConfig};

/// Encoder plus reconstruction decoder sharing one parameter store.
#[derive(Debug, Clone)]
pub struct PretrainModel<T> {
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub decoder: ReconDecoder,
}

impl<T: Scalar> PretrainModel<T> {
    pub fn new(encoder: &EncoderConfig, decoder: &DecoderConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, encoder, seed)?;
        let dec = ReconDecoder::new(&mut store, decoder, encoder, seed)?;
        Ok(PretrainModel {
            store,
            encoder: enc,
            decoder: dec,
        })
    }

    /// `batch x H x W` reconstructions of `images`.
    pub fn reconstruct(&self, images: &[T], batch: usize) -> Result<Vec<T>> {
        let out = self.encoder.forward(&self.store, images, batch, &Capture::default())?;
        Ok(self.decoder.forward(&self.store, &out.tokens)?.0)
    }

    /// Loss of reconstructing `clean` from `corrupted` on `mask`; gradients are
    /// accumulated into the store.
    pub fn loss_and_grad(
        &mut self,
        corrupted: &[T],
        clean: &[T],
        mask: &[T],
        batch: usize,
        reduction: LossReduction,
    ) -> Result<T> {
        let (out, enc_cache) = self
            .encoder
            .forward_train(&self.store, corrupted, batch, &Capture::default())?;
        let (recon, dec_cache) = self.decoder.forward(&self.store, &out.tokens)?;
        let loss = masked_l1_loss(clean, &recon, mask, reduction)?;
        let d_recon = masked_l1_grad(clean, &recon, mask, reduction)?;
        let d_tokens = self.decoder.backward(&mut self.store, &dec_cache, &d_recon)?;
        self.encoder.backward(&mut self.store, &enc_cache, Some(&d_tokens), &[]);
        Ok(loss)
    }
}
