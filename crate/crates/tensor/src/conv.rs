//! im2col / col2im kernels shared by convolution and transposed convolution.

use crate::float::Float;

/// Output extent of a strided convolution, or `None` if the kernel does not fit.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution, or `None` if it would be empty.
pub fn conv_transpose_out_size(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Option<usize> {
    let full = (input.checked_sub(1)?) * stride + kernel + output_pad;
    full.checked_sub(2 * pad).filter(|&n| n > 0)
}

/// Geometry of one image plane stack seen through a sliding kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < self.height.max(self.width)).then_some(pos as usize)
    }

    /// Unfold `image` (C x H x W) into `cols` ((C*k*k) x (out_h*out_w)).
    pub fn im2col<T: Float>(&self, image: &[T], cols: &mut [T]) {
        let (k, ow) = (self.kernel, self.out_w);
        let ncols = self.col_cols();
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oh in 0..self.out_h {
                        let ih = self.source(oh, ki).filter(|&v| v < self.height);
                        let line = &mut dst[oh * ow..(oh + 1) * ow];
                        match ih {
                            None => line.iter_mut().for_each(|v| *v = T::zero()),
                            Some(ih) => {
                                let src = &plane[ih * self.width..(ih + 1) * self.width];
                                for (owi, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(owi, kj).filter(|&x| x < self.width) {
                                        Some(iw) => src[iw],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Fold `cols` back into `image`, accumulating overlapping contributions.
    pub fn col2im<T: Float>(&self, cols: &[T], image: &mut [T]) {
        let (k, ow) = (self.kernel, self.out_w);
        let ncols = self.col_cols();
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oh in 0..self.out_h {
                        let Some(ih) = self.source(oh, ki).filter(|&v| v < self.height) else {
                            continue;
                        };
                        let dst = &mut plane[ih * self.width..(ih + 1) * self.width];
                        for owi in 0..ow {
                            if let Some(iw) = self.source(owi, kj).filter(|&x| x < self.width) {
                                dst[iw] += src[oh * ow + owi];
                            }
                        }
                    }
                }
            }
        }
    }
}
