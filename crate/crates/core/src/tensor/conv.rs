use super::Scalar;
use ndarray::Array2;

/// Shape bookkeeping for a 2-D convolution over a stack of equally sized
/// images laid out as `[channels, images * height * width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_positions(&self) -> usize {
        self.images * self.out_height() * self.out_width()
    }

    /// Unfolds `input` (`[in_channels, images*h*w]`) into
    /// `[in_channels*k*k, images*oh*ow]`.
    pub(crate) fn im2col<T: Scalar>(&self, input: &Array2<T>) -> Array2<T> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let (h, w, k) = (self.height, self.width, self.kernel);
        let npos = self.out_positions();
        let mut cols = Array2::<T>::zeros((self.patch_len(), npos));
        let src = input.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("fresh array");
        let img_stride = h * w;
        let chan_stride = self.images * img_stride;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let out_row = &mut dst[row * npos..(row + 1) * npos];
                    for n in 0..self.images {
                        let base = c * chan_stride + n * img_stride;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row_base = base + iy as usize * w;
                            let out_base = (n * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    out_row[out_base + ox] = src[row_base + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters column gradients back
    /// onto the input layout, accumulating overlapping windows.
    pub(crate) fn col2im<T: Scalar>(&self, cols: &Array2<T>) -> Array2<T> {
        let (oh, ow) = (self.out_height(), self.out_width());
        let (h, w, k) = (self.height, self.width, self.kernel);
        let npos = self.out_positions();
        let img_stride = h * w;
        let chan_stride = self.images * img_stride;
        let mut out = Array2::<T>::zeros((self.in_channels, chan_stride));
        let src = cols.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("fresh array");
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let in_row = &src[row * npos..(row + 1) * npos];
                    for n in 0..self.images {
                        let base = c * chan_stride + n * img_stride;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row_base = base + iy as usize * w;
                            let in_base = (n * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && ix < w as isize {
                                    let d = &mut dst[row_base + ix as usize];
                                    *d += in_row[in_base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
