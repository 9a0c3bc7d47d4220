use crate::numerics::{Scalar, Tensor};

/// Fixed 2-D sine-cosine table for a `grid_h x grid_w` patch grid, one row
/// per raster position. The first half of each row encodes the row index,
/// the second half the column index.
pub fn sincos_2d<T: Scalar>(width: usize, grid_h: usize, grid_w: usize) -> Tensor<T> {
    assert!(width.is_multiple_of(4), "sine-cosine width must be divisible by 4");
    let quarter = width / 4;
    let omega: Vec<f64> = (0..quarter).map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64)).collect();
    let mut data = Vec::with_capacity(grid_h * grid_w * width);
    for r in 0..grid_h {
        for c in 0..grid_w {
            for pos in [r as f64, c as f64] {
                data.extend(omega.iter().map(|w| T::lit((pos * w).sin())));
                data.extend(omega.iter().map(|w| T::lit((pos * w).cos())));
            }
        }
    }
    Tensor::new(&[grid_h * grid_w, width], data).expect("table shape")
}

/// Table rows at the raster `indices`, repeated for `batch` sequences.
pub fn gather_positions<T: Scalar>(table: &Tensor<T>, indices: &[usize], batch: usize) -> Tensor<T> {
    let d = table.cols();
    let mut data = Vec::with_capacity(batch * indices.len() * d);
    for _ in 0..batch {
        for &i in indices {
            data.extend_from_slice(table.row(i));
        }
    }
    Tensor::new(&[batch * indices.len(), d], data).expect("gather shape")
}
