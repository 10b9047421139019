//! Dense `axpy` and dot-product kernels with an AVX2/FMA path selected at
//! run time.

#[cfg(target_arch = "x86_64")]
fn has_fma() -> bool {
    use std::sync::OnceLock;
    static FMA: OnceLock<bool> = OnceLock::new();
    *FMA.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

#[inline(always)]
fn axpy_generic(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline(always)]
fn dot_generic(x: &[f64], y: &[f64]) -> f64 {
    // Independent lanes let the compiler vectorize the reduction.
    let mut lanes = [0.0; 8];
    let (cx, cy) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: f64 = cx.remainder().iter().zip(cy.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in cx.zip(cy) {
        for k in 0..8 {
            lanes[k] += a[k] * b[k];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn axpy_fma(a: f64, x: &[f64], y: &mut [f64]) {
    axpy_generic(a, x, y)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_fma(x: &[f64], y: &[f64]) -> f64 {
    dot_generic(x, y)
}

/// `y += a * x` over the common length.
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected above.
        return unsafe { axpy_fma(a, x, y) };
    }
    axpy_generic(a, x, y)
}

/// Dot product over the common length.
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the required CPU features were detected above.
        return unsafe { dot_fma(x, y) };
    }
    dot_generic(x, y)
}
