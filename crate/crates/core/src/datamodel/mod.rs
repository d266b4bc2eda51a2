//! Domain types, file formats, preprocessing, patient-level folds and the
//! synthetic data generator.

mod folds;
pub mod io;
mod preprocess;
mod synth;
mod types;

pub use folds::{stratified_patient_kfold, stratified_patient_kfold_labels, FoldSplit};
pub use preprocess::{
    min_max_normalize, preprocess_core, preprocess_image, preprocess_image_to, resize_mask, WORKING_SIZE,
};
pub use synth::{
    rescale_counts, synth_generate, SynthData, SynthSpec, MICRO_US_GRADE_COUNTS, PANDA_TRAIN_GRADE_COUNTS,
};
pub use types::{
    assign_bin, check_label_consistency, BinEdges, EmbeddingBag, ImagingCore, Involvement, InvolvementBin,
    IsupGrade, TeacherBank, TeacherBankEntry,
};
