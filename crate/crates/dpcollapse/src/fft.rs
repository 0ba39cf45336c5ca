//! 3-D complex FFT on x-fastest flat buffers, built from batched 1-D
//! transforms.  Lines are independent, so the rayon parallelism is bitwise
//! deterministic for any thread count.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = [
            planner.plan_fft_forward(dims[0]),
            planner.plan_fft_forward(dims[1]),
            planner.plan_fft_forward(dims[2]),
        ];
        let inverse = [
            planner.plan_fft_inverse(dims[0]),
            planner.plan_fft_inverse(dims[1]),
            planner.plan_fft_inverse(dims[2]),
        ];
        Fft3 { dims, forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn forward(&self, data: &mut Vec<Complex64>) {
        assert_eq!(data.len(), self.len());
        for axis in 0..3 {
            self.transform_axis(data, axis, &self.forward[axis]);
        }
    }

    /// Inverse transform, normalized by 1/N.
    pub fn inverse(&self, data: &mut Vec<Complex64>) {
        assert_eq!(data.len(), self.len());
        for axis in 0..3 {
            self.transform_axis(data, axis, &self.inverse[axis]);
        }
        let scale = 1.0 / self.len() as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }

    fn transform_axis(&self, data: &mut Vec<Complex64>, axis: usize, fft: &Arc<dyn Fft<f64>>) {
        let [nx, ny, nz] = self.dims;
        match axis {
            0 => {
                data.par_chunks_mut(nx).for_each_init(
                    || vec![Complex64::default(); fft.get_inplace_scratch_len()],
                    |scratch, line| fft.process_with_scratch(line, scratch),
                );
            }
            1 => {
                // y-lines live inside one z-slab each
                data.par_chunks_mut(nx * ny).for_each_init(
                    || {
                        (
                            vec![Complex64::default(); ny],
                            vec![Complex64::default(); fft.get_inplace_scratch_len()],
                        )
                    },
                    |(line, scratch), slab| {
                        for i in 0..nx {
                            for j in 0..ny {
                                line[j] = slab[i + nx * j];
                            }
                            fft.process_with_scratch(line, scratch);
                            for j in 0..ny {
                                slab[i + nx * j] = line[j];
                            }
                        }
                    },
                );
            }
            _ => {
                // z-lines cross slabs: transpose z to the fast axis, transform,
                // transpose back
                let plane = nx * ny;
                let mut buf = vec![Complex64::default(); data.len()];
                buf.par_chunks_mut(nz).enumerate().for_each(|(p, line)| {
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[p + plane * k];
                    }
                });
                buf.par_chunks_mut(nz).for_each_init(
                    || vec![Complex64::default(); fft.get_inplace_scratch_len()],
                    |scratch, line| fft.process_with_scratch(line, scratch),
                );
                data.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
                    for (p, v) in slab.iter_mut().enumerate() {
                        *v = buf[k + nz * p];
                    }
                });
            }
        }
    }
}

/// Next size with only 2/3/5 factors, for fast mixed-radix transforms.
pub fn good_fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for f in [2usize, 3, 5] {
            while k % f == 0 {
                k /= f;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn roundtrip_recovers_input() {
        let dims = [6, 5, 4];
        let fft = Fft3::new(dims);
        let mut data: Vec<Complex64> = (0..fft.len())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let orig = data.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-12);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft_on_small_grid() {
        let dims = [3, 2, 2];
        let fft = Fft3::new(dims);
        let mut data: Vec<Complex64> =
            (0..12).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let orig = data.clone();
        fft.forward(&mut data);
        // brute-force DFT of one arbitrary mode
        let (qx, qy, qz) = (1usize, 1usize, 0usize);
        let mut want = Complex64::default();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let phase = -2.0 * std::f64::consts::PI
                        * (qx as f64 * i as f64 / dims[0] as f64
                            + qy as f64 * j as f64 / dims[1] as f64
                            + qz as f64 * k as f64 / dims[2] as f64);
                    want += orig[i + dims[0] * (j + dims[1] * k)]
                        * Complex64::new(phase.cos(), phase.sin());
                }
            }
        }
        let got = data[qx + dims[0] * (qy + dims[1] * qz)];
        assert_relative_eq!(got.re, want.re, epsilon = 1e-10);
        assert_relative_eq!(got.im, want.im, epsilon = 1e-10);
    }

    #[test]
    fn good_sizes_are_smooth() {
        assert_eq!(good_fft_size(17), 18);
        assert_eq!(good_fft_size(64), 64);
        assert_eq!(good_fft_size(121), 125);
    }
}
