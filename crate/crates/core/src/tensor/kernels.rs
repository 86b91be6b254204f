// Row-major matrix kernels. `a` is n×d, `b` is d×m unless noted.

/// out (n×m) += a (n×d) · b (d×m)
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, d: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * d..(i + 1) * d];
        let orow = &mut out[i * m..(i + 1) * m];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * m..(k + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

/// out (n×d) += g (n×m) · bᵀ where b is d×m
pub(crate) fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], n: usize, d: usize, m: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        let orow = &mut out[i * d..(i + 1) * d];
        for (k, o) in orow.iter_mut().enumerate() {
            let brow = &b[k * m..(k + 1) * m];
            *o += dot(grow, brow);
        }
    }
}

/// out (d×m) += aᵀ · g where a is n×d and g is n×m
pub(crate) fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], n: usize, d: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * d..(i + 1) * d];
        let grow = &g[i * m..(i + 1) * m];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[k * m..(k + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// (outer, axis, inner) decomposition of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
