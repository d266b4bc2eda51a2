//! Stage-2 micro-ultrasound student: tokenization, a small frozen-backbone
//! encoder with trainable adapters, bag pooling, the heatmap decoder and the
//! footprint-restricted segmentation loss.

mod decoder;
mod encoder;
mod model;
mod seg;
mod tokens;

pub use decoder::{decode, logits_to_heatmap, DecoderParams, Heatmap, Upsample, PROB_FLOOR};
pub use encoder::{embed_patches, encoder_backward, encoder_forward, Adapter, EncoderCache, EncoderParams, MixBlock};
pub use model::{
    encode, read_heatmap_raw, student_embed, write_heatmap, CoreTrace, StudentConfig, StudentModel, StudentParams,
};
pub use seg::{positive_count, seg_loss, seg_loss_logits, topk_targets};
pub use tokens::{select_bag, tokenize, BagIndex, TokenGrid, DEFAULT_PATCH};

#[cfg(test)]
mod tests;
