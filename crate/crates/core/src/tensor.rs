//! Dense row-major numeric arrays.
//!
//! Deliberately small: shape + flat storage + the handful of accessors the
//! layer code needs. Hot paths (matmul, convolutions) work on the raw slices.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct NdArray<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> NdArray<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        NdArray {
            shape: shape.to_vec(),
            data: vec![F::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        NdArray {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let len = shape.iter().product();
        NdArray {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> F) -> Self {
        let mut out = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for i in 0..out.data.len() {
            out.data[i] = f(&idx);
            // advance the multi-index, last axis fastest
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} -> {:?} changes element count",
            self.shape,
            shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn at2(&self, i: usize, j: usize) -> F {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> F {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn at4(&self, i: usize, j: usize, k: usize, l: usize) -> F {
        debug_assert_eq!(self.shape.len(), 4);
        self.data[((i * self.shape[1] + j) * self.shape[2] + k) * self.shape[3] + l]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: F) {
        debug_assert_eq!(self.shape.len(), 2);
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: F) {
        debug_assert_eq!(self.shape.len(), 3);
        let (s1, s2) = (self.shape[1], self.shape[2]);
        self.data[(i * s1 + j) * s2 + k] = v;
    }

    pub fn set4(&mut self, i: usize, j: usize, k: usize, l: usize, v: F) {
        debug_assert_eq!(self.shape.len(), 4);
        let (s1, s2, s3) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((i * s1 + j) * s2 + k) * s3 + l] = v;
    }

    /// Contiguous row `i` of a 2-d array.
    pub fn row(&self, i: usize) -> &[F] {
        debug_assert_eq!(self.shape.len(), 2);
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise precision cast through f64.
    pub fn cast<G: Scalar>(&self) -> NdArray<G> {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| G::from_f64(v.to_f64_lossy())).collect(),
        }
    }

    /// Transpose of a 2-d array.
    pub fn transpose2(&self) -> Self {
        assert_eq!(self.shape.len(), 2);
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }
}

// Micro-kernel tile: MR rows of A against an NR-wide column strip of B,
// accumulated in locals so the compiler keeps them in vector registers.
const MR: usize = 4;
const NR: usize = 16;

#[inline]
fn kernel_tile<F: Scalar>(
    a: &[F],
    b: &[F],
    c: &mut [F],
    k: usize,
    n: usize,
    i0: usize,
    j0: usize,
) {
    let mut acc = [[F::zero(); NR]; MR];
    for p in 0..k {
        let b_strip = &b[p * n + j0..p * n + j0 + NR];
        for (r, acc_row) in acc.iter_mut().enumerate() {
            let av = a[(i0 + r) * k + p];
            for (j, &bv) in b_strip.iter().enumerate() {
                // mul_add lowers to a fused multiply-add on FMA targets
                acc_row[j] = av.mul_add(bv, acc_row[j]);
            }
        }
    }
    for (r, acc_row) in acc.iter().enumerate() {
        let c_row = &mut c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR];
        for (cv, &av) in c_row.iter_mut().zip(acc_row) {
            *cv += av;
        }
    }
}

/// c += a @ b for row-major 2-d arrays: register-blocked MRxNR tiles swept
/// j-strip-major inside row chunks sized to keep the A chunk and one B
/// strip cache-resident, with a scalar edge path.
pub fn matmul_acc<F: Scalar>(a: &NdArray<F>, b: &NdArray<F>, c: &mut NdArray<F>) {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (kb, n) = (b.shape[0], b.shape[1]);
    assert_eq!(k, kb, "matmul inner dims {} vs {}", k, kb);
    assert_eq!(&c.shape, &[m, n]);

    let full_m = m - m % MR;
    let full_n = n - n % NR;
    // rows per chunk such that the chunk of A stays within ~96 KiB
    let chunk_rows = ((96 * 1024 / (k * std::mem::size_of::<F>()).max(1)) / MR * MR).max(MR);
    let mut i_chunk = 0;
    while i_chunk < full_m {
        let i_end = (i_chunk + chunk_rows).min(full_m);
        let mut j = 0;
        while j < full_n {
            let mut i = i_chunk;
            while i < i_end {
                kernel_tile(&a.data, &b.data, &mut c.data, k, n, i, j);
                i += MR;
            }
            j += NR;
        }
        i_chunk = i_end;
    }

    // remaining rows (all columns)
    for i in full_m..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let c_row = &mut c.data[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    // remaining columns of the tiled rows
    if full_n < n {
        for i in 0..full_m {
            let a_row = &a.data[i * k..(i + 1) * k];
            for (p, &av) in a_row.iter().enumerate() {
                let b_row = &b.data[p * n + full_n..p * n + n];
                let c_row = &mut c.data[i * n + full_n..i * n + n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += av * bv;
                }
            }
        }
    }
}

pub fn matmul<F: Scalar>(a: &NdArray<F>, b: &NdArray<F>) -> NdArray<F> {
    let mut c = NdArray::zeros(&[a.shape[0], b.shape[1]]);
    matmul_acc(a, b, &mut c);
    c
}
