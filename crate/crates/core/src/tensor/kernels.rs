//! Scalar activation functions and the dense matrix-multiply kernel.

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x + (-x).exp().ln_1p()
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mish_scalar(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub(crate) fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid_scalar(x)
}

/// `c = beta * c + op(a) * op(b)` for row-major operands, where `op`
/// optionally transposes. `op(a)` is `m x k`, `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements (checked
    // above in debug builds, and by every caller's shape validation), and
    // the strides describe row-major or transposed-row-major layouts of
    // those buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
