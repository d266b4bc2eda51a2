use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const DEFAULT_PATCH: usize = 16;

/// Row-major grid of non-overlapping square patches.
///
/// Straight out of [`tokenize`], `tokens` holds each patch's pixels
/// (row-major inside the patch); after encoding it holds feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub tokens: Array2<f64>,
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.rows * self.patch, self.cols * self.patch)
    }

    pub fn cell(&self, token: usize) -> (usize, usize) {
        (token / self.cols, token % self.cols)
    }

    pub fn with_tokens(&self, tokens: Array2<f64>) -> TokenGrid {
        TokenGrid {
            tokens,
            rows: self.rows,
            cols: self.cols,
            patch: self.patch,
        }
    }
}

pub fn tokenize(image: ArrayView2<f64>, patch: usize) -> Result<TokenGrid> {
    let (h, w) = image.dim();
    if patch == 0 || h % patch != 0 || w % patch != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("image {h}x{w} is not divisible into {patch}-pixel patches")));
    }
    let (rows, cols) = (h / patch, w / patch);
    let mut tokens = Array2::zeros((rows * cols, patch * patch));
    for r in 0..rows {
        for c in 0..cols {
            let mut dst = tokens.row_mut(r * cols + c);
            let src = image.slice(ndarray::s![r * patch..(r + 1) * patch, c * patch..(c + 1) * patch]);
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d = *s;
            }
        }
    }
    Ok(TokenGrid {
        tokens,
        rows,
        cols,
        patch,
    })
}

/// Sorted token indices whose footprint touches the needle mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BagIndex {
    pub indices: Vec<usize>,
}

impl BagIndex {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// A token joins the bag when at least one pixel of its footprint is in the mask.
pub fn select_bag(grid: &TokenGrid, needle_mask: ArrayView2<bool>) -> Result<BagIndex> {
    if needle_mask.dim() != grid.image_shape() {
        return Err(Error::Shape(format!(
            "mask {:?} does not match token grid image {:?}",
            needle_mask.dim(),
            grid.image_shape()
        )));
    }
    let p = grid.patch;
    let mut hit = vec![false; grid.len()];
    for (y, row) in needle_mask.outer_iter().enumerate() {
        let base = (y / p) * grid.cols;
        for (x, &m) in row.iter().enumerate() {
            if m {
                hit[base + x / p] = true;
            }
        }
    }
    let indices: Vec<usize> = hit.iter().enumerate().filter(|(_, &h)| h).map(|(i, _)| i).collect();
    if indices.is_empty() {
        return Err(Error::Empty("token bag (needle mask has no pixels)".into()));
    }
    Ok(BagIndex { indices })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        let g = tokenize(Array2::zeros((1024, 1024)).view(), 16).unwrap();
        assert_eq!((g.len(), g.rows, g.cols), (4096, 64, 64));
        assert_eq!(tokenize(Array2::zeros((32, 32)).view(), 16).unwrap().len(), 4);
        assert_eq!(tokenize(Array2::zeros((1024, 1024)).view(), 32).unwrap().len(), 1024);
        assert!(tokenize(Array2::zeros((30, 32)).view(), 16).is_err());
    }

    #[test]
    fn patch_pixels_are_row_major() {
        let img = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f64);
        let g = tokenize(img.view(), 2).unwrap();
        assert_eq!(g.tokens.row(1).to_vec(), vec![2.0, 3.0, 6.0, 7.0]);
        assert_eq!(g.tokens.row(2).to_vec(), vec![8.0, 9.0, 12.0, 13.0]);
    }

    #[test]
    fn bag_rules() {
        let g = tokenize(Array2::zeros((64, 64)).view(), 16).unwrap();
        let mut m = Array2::from_elem((64, 64), false);
        m.slice_mut(ndarray::s![16..32, 32..48]).fill(true);
        assert_eq!(select_bag(&g, m.view()).unwrap().indices, vec![4 + 2]);
        let mut m = Array2::from_elem((64, 64), false);
        m[[17, 17]] = true;
        let b = select_bag(&g, m.view()).unwrap();
        assert_eq!(b.indices, vec![5]);
        assert_eq!(g.cell(5), (1, 1));
        assert!(select_bag(&g, Array2::from_elem((64, 64), false).view()).is_err());
        assert!(select_bag(&g, Array2::from_elem((32, 64), true).view()).is_err());
    }
}
