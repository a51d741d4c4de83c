/// Row-major operand description: `trans` means the slice holds the
/// transpose of the logical matrix.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    pub data: &'a [f32],
    pub trans: bool,
}

impl<'a> Operand<'a> {
    pub fn plain(data: &'a [f32]) -> Self {
        Operand { data, trans: false }
    }

    pub fn transposed(data: &'a [f32]) -> Self {
        Operand { data, trans: true }
    }
}

/// `c[m,n] = a[m,k] · b[k,n] + beta · c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Operand, b: Operand, beta: f32, c: &mut [f32]) {
    assert!(a.data.len() >= m * k, "gemm: lhs too short");
    assert!(b.data.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    let (rsa, csa) = if a.trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b.trans { (1, k) } else { (n, 1) };
    // SAFETY: lengths checked above; strides describe dense row-major
    // storage of the logical (possibly transposed) matrices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
