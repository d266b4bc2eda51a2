use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

/// Read-only view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    pub trainable: bool,
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
    pub trainable: bool,
}

/// A fixed, ordered collection of named tensors. Gradient buffers use the
/// same type, so the optimizer can zip `tensors()` of a gradient with
/// `tensors_mut()` of the parameters.
pub trait ParamSet {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>>;

    fn zeros_like(&self) -> Self
    where
        Self: Sized + Clone,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// SHA-256 over names, shapes, flags and little-endian values.
    fn checksum(&self) -> String {
        checksum_tensors(&self.tensors())
    }

    /// Checksum restricted to frozen tensors.
    fn frozen_checksum(&self) -> String {
        let frozen: Vec<TensorRef<'_>> = self.tensors().into_iter().filter(|t| !t.trainable).collect();
        checksum_tensors(&frozen)
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

pub fn checksum_tensors(tensors: &[TensorRef<'_>]) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        h.update(t.name.as_bytes());
        h.update([0u8, t.trainable as u8]);
        for &d in &t.shape {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn tref2<'a>(name: &str, a: &'a Array2<f64>, trainable: bool) -> TensorRef<'a> {
    TensorRef {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
        trainable,
    }
}

pub(crate) fn tref1<'a>(name: &str, a: &'a Array1<f64>, trainable: bool) -> TensorRef<'a> {
    TensorRef {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
        trainable,
    }
}

pub(crate) fn tmut2<'a>(name: &str, a: &'a mut Array2<f64>, trainable: bool) -> TensorMut<'a> {
    TensorMut {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.as_slice_mut().expect("standard layout"),
        trainable,
    }
}

pub(crate) fn tmut1<'a>(name: &str, a: &'a mut Array1<f64>, trainable: bool) -> TensorMut<'a> {
    TensorMut {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.as_slice_mut().expect("standard layout"),
        trainable,
    }
}

/// Gaussian init with std `gain / sqrt(fan_in)`.
pub fn init_matrix(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Array2<f64> {
    let std = gain / (cols.max(1) as f64).sqrt();
    let n = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

pub fn init_vector(len: usize, std: f64, rng: &mut impl Rng) -> Array1<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array1::from_shape_fn(len, |_| n.sample(rng))
}
