use std::cell::RefCell;

use rustfft::{FftDirection, FftPlanner};

use super::{ComplexImage, C64};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unitary 2-D DFT with the zero frequency at `(rows/2, cols/2)`.
pub fn fft2_centered(img: &ComplexImage) -> ComplexImage {
    transform(img, FftDirection::Forward)
}

/// Exact inverse of [`fft2_centered`].
pub fn ifft2_centered(ksp: &ComplexImage) -> ComplexImage {
    transform(ksp, FftDirection::Inverse)
}

fn transform(img: &ComplexImage, dir: FftDirection) -> ComplexImage {
    let (rows, cols) = img.shape();
    let rh = rows / 2;
    let ch = cols / 2;

    // ifftshift on the way in
    let src = img.data();
    let mut buf = vec![C64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        let sr = (r + rh) % rows;
        for c in 0..cols {
            buf[r * cols + c] = src[sr * cols + (c + ch) % cols];
        }
    }

    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let row_fft = planner.plan_fft(cols, dir);
        row_fft.process(&mut buf);

        let col_fft = planner.plan_fft(rows, dir);
        let mut t = vec![C64::new(0.0, 0.0); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = buf[r * cols + c];
            }
        }
        col_fft.process(&mut t);
        for c in 0..cols {
            for r in 0..rows {
                buf[r * cols + c] = t[c * rows + r];
            }
        }
    });

    // fftshift on the way out, with unitary scaling
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    let mut out = vec![C64::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        let dr = (r + rh) % rows;
        for c in 0..cols {
            out[dr * cols + (c + ch) % cols] = buf[r * cols + c] * scale;
        }
    }
    ComplexImage::from_vec(rows, cols, out).expect("shape preserved")
}
