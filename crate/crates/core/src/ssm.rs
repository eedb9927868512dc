//! Diagonal state-space machinery.
//!
//! A continuous system `h' = A h + B x, y = C h` with diagonal `A` is
//! discretized with a zero-order hold and evaluated three ways: the
//! sequential recurrence, a work-efficient prefix scan over affine maps, and
//! a causal convolution with the unrolled kernel. The selective variant makes
//! the step size and the input/output projections functions of the input.

use crate::error::{ensure, Error, Result};
use crate::linalg::{fast_exp, gemm, softplus};

/// Continuous-time diagonal SSM. Every entry of `a_diag` is strictly negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSsm {
    a_diag: Vec<f64>,
    b_vec: Vec<f64>,
    c_vec: Vec<f64>,
}

impl ContinuousSsm {
    pub fn new(a_diag: Vec<f64>, b_vec: Vec<f64>, c_vec: Vec<f64>) -> Result<Self> {
        ensure!(!a_diag.is_empty(), InvalidArgument, "state size must be at least 1");
        ensure!(
            a_diag.len() == b_vec.len() && a_diag.len() == c_vec.len(),
            Shape,
            "a/b/c lengths differ: {}/{}/{}",
            a_diag.len(),
            b_vec.len(),
            c_vec.len()
        );
        ensure!(
            a_diag.iter().all(|&a| a.is_finite() && a < 0.0),
            InvalidArgument,
            "a_diag entries must be finite and strictly negative"
        );
        Ok(Self {
            a_diag,
            b_vec,
            c_vec,
        })
    }

    /// The standard initialization `a_diag[n] = -(n + 1)`.
    pub fn default_a_diag(n_state: usize) -> Vec<f64> {
        (0..n_state).map(|n| -((n + 1) as f64)).collect()
    }

    pub fn n_state(&self) -> usize {
        self.a_diag.len()
    }

    pub fn a_diag(&self) -> &[f64] {
        &self.a_diag
    }

    pub fn b_vec(&self) -> &[f64] {
        &self.b_vec
    }

    pub fn c_vec(&self) -> &[f64] {
        &self.c_vec
    }
}

/// Discretized diagonal SSM.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub c_vec: Vec<f64>,
    pub delta: f64,
}

impl DiscreteSsm {
    /// Builds a discrete system directly from its coefficients.
    pub fn new(a_bar: Vec<f64>, b_bar: Vec<f64>, c_vec: Vec<f64>, delta: f64) -> Result<Self> {
        ensure!(!a_bar.is_empty(), InvalidArgument, "state size must be at least 1");
        ensure!(
            a_bar.len() == b_bar.len() && a_bar.len() == c_vec.len(),
            Shape,
            "a_bar/b_bar/c lengths differ: {}/{}/{}",
            a_bar.len(),
            b_bar.len(),
            c_vec.len()
        );
        ensure!(delta > 0.0, InvalidArgument, "delta must be positive, got {delta}");
        Ok(Self {
            a_bar,
            b_bar,
            c_vec,
            delta,
        })
    }

    pub fn n_state(&self) -> usize {
        self.a_bar.len()
    }

    /// One recurrence step `h <- a_bar ⊙ h + b_bar x`, returning `⟨c, h⟩`.
    pub fn step(&self, h: &mut [f64], x: f64) -> f64 {
        let mut y = 0.0;
        for (((h, &a), &b), &c) in h.iter_mut().zip(&self.a_bar).zip(&self.b_bar).zip(&self.c_vec) {
            *h = a * *h + b * x;
            y += c * *h;
        }
        y
    }
}

/// Zero-order-hold discretization of a diagonal system.
///
/// `a_bar = exp(Δa)`, `b_bar = (Δa)⁻¹ (exp(Δa) − 1) Δb`, elementwise.
pub fn discretize_zoh(ssm: &ContinuousSsm, delta: f64) -> Result<DiscreteSsm> {
    ensure!(
        delta > 0.0 && delta.is_finite(),
        InvalidArgument,
        "delta must be positive and finite, got {delta}"
    );
    if let Some(n) = ssm.a_diag.iter().position(|&a| a == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "a_diag[{n}] is zero; the ZOH input matrix is singular"
        )));
    }
    let a_bar = ssm.a_diag.iter().map(|&a| (delta * a).exp()).collect();
    // (Δa)⁻¹ (e^{Δa} − 1) Δ b = expm1(Δa) / a · b; expm1 keeps the small-Δ limit exact.
    let b_bar = ssm
        .a_diag
        .iter()
        .zip(&ssm.b_vec)
        .map(|(&a, &b)| (delta * a).exp_m1() / a * b)
        .collect();
    DiscreteSsm::new(a_bar, b_bar, ssm.c_vec.clone(), delta)
}

/// One affine step `h ↦ decay·h + load` of a scalar linear recurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanElement {
    pub decay: f64,
    pub load: f64,
}

impl ScanElement {
    pub const IDENTITY: ScanElement = ScanElement {
        decay: 1.0,
        load: 0.0,
    };

    pub fn new(decay: f64, load: f64) -> Self {
        Self { decay, load }
    }

    pub fn apply(self, h: f64) -> f64 {
        self.decay * h + self.load
    }
}

/// Composition "first `e1`, then `e2`": `(a1, b1) ∘ (a2, b2) = (a2·a1, a2·b1 + b2)`.
pub fn compose(e1: ScanElement, e2: ScanElement) -> ScanElement {
    ScanElement {
        decay: e2.decay * e1.decay,
        load: e2.decay * e1.load + e2.load,
    }
}

fn check_sequence(x: &[f64]) -> Result<()> {
    ensure!(!x.is_empty(), Shape, "input sequence must have length >= 1");
    Ok(())
}

/// Runs the recurrence from a zero state and returns `y_k = ⟨c, h_k⟩`.
pub fn scan_sequential(d: &DiscreteSsm, x: &[f64]) -> Result<Vec<f64>> {
    check_sequence(x)?;
    let mut h = vec![0.0; d.n_state()];
    Ok(x.iter().map(|&xk| d.step(&mut h, xk)).collect())
}

/// In-place inclusive prefix scan under [`compose`], Blelloch up-sweep /
/// down-sweep over a buffer padded to a power of two with identities.
///
/// The combination tree depends only on the length, so the result is
/// bit-reproducible.
pub fn inclusive_scan(elems: &mut [ScanElement]) {
    let len = elems.len();
    if len <= 1 {
        return;
    }
    let size = len.next_power_of_two();
    let mut tree = Vec::with_capacity(size);
    tree.extend_from_slice(elems);
    tree.resize(size, ScanElement::IDENTITY);

    // up-sweep: tree[i] becomes the composite of its subtree
    let mut stride = 1;
    while stride < size {
        let mut i = 2 * stride - 1;
        while i < size {
            tree[i] = compose(tree[i - stride], tree[i]);
            i += 2 * stride;
        }
        stride *= 2;
    }

    // down-sweep: exclusive prefixes
    tree[size - 1] = ScanElement::IDENTITY;
    let mut stride = size / 2;
    while stride >= 1 {
        let mut i = 2 * stride - 1;
        while i < size {
            let left = tree[i - stride];
            tree[i - stride] = tree[i];
            tree[i] = compose(tree[i], left);
            i += 2 * stride;
        }
        stride /= 2;
    }

    for (e, prefix) in elems.iter_mut().zip(&tree) {
        *e = compose(*prefix, *e);
    }
}

/// Same output as [`scan_sequential`], computed per state channel with
/// [`inclusive_scan`].
pub fn scan_parallel(d: &DiscreteSsm, x: &[f64]) -> Result<Vec<f64>> {
    check_sequence(x)?;
    let mut y = vec![0.0; x.len()];
    let mut elems = Vec::with_capacity(x.len());
    for n in 0..d.n_state() {
        elems.clear();
        elems.extend(x.iter().map(|&xk| ScanElement::new(d.a_bar[n], d.b_bar[n] * xk)));
        inclusive_scan(&mut elems);
        let c = d.c_vec[n];
        for (yk, e) in y.iter_mut().zip(&elems) {
            // h_{-1} = 0, so the prefix composite applied to zero is its load.
            *yk += c * e.load;
        }
    }
    Ok(y)
}

/// The unrolled kernel `K_j = ⟨c, a_bar^j ⊙ b_bar⟩`, `j = 0..len`.
pub fn ssm_kernel(d: &DiscreteSsm, len: usize) -> Result<Vec<f64>> {
    ensure!(len >= 1, InvalidArgument, "kernel length must be >= 1");
    let mut pow: Vec<f64> = d.b_bar.clone();
    let mut kernel = Vec::with_capacity(len);
    for _ in 0..len {
        kernel.push(pow.iter().zip(&d.c_vec).map(|(p, c)| p * c).sum());
        for (p, &a) in pow.iter_mut().zip(&d.a_bar) {
            *p *= a;
        }
    }
    Ok(kernel)
}

/// Direct causal convolution `y_k = Σ_{j ≤ k} K_j x_{k−j}`.
pub fn causal_convolve(x: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        kernel.len() >= x.len(),
        Shape,
        "kernel length {} shorter than input length {}",
        kernel.len(),
        x.len()
    );
    Ok((0..x.len())
        .map(|k| (0..=k).map(|j| kernel[j] * x[k - j]).sum())
        .collect())
}

/// Input-dependent projections of a selective scan over `d_inner` channels.
///
/// Matrices are row-major with the input feature as the row index:
/// `w_delta` is `d_inner × d_inner`, `w_b` and `w_c` are `d_inner × n_state`.
/// The state diagonal is stored as `a_log` with `a_diag = −exp(a_log)`, which
/// keeps it strictly negative under any update.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveParams {
    pub d_inner: usize,
    pub n_state: usize,
    pub w_delta: Vec<f64>,
    pub b_delta: Vec<f64>,
    pub w_b: Vec<f64>,
    pub w_c: Vec<f64>,
    pub a_log: Vec<f64>,
}

impl SelectiveParams {
    pub fn new(
        d_inner: usize,
        n_state: usize,
        w_delta: Vec<f64>,
        b_delta: Vec<f64>,
        w_b: Vec<f64>,
        w_c: Vec<f64>,
        a_diag: &[f64],
    ) -> Result<Self> {
        ensure!(d_inner >= 1 && n_state >= 1, InvalidArgument, "empty selective scan");
        ensure!(w_delta.len() == d_inner * d_inner, Shape, "w_delta has {} entries", w_delta.len());
        ensure!(b_delta.len() == d_inner, Shape, "b_delta has {} entries", b_delta.len());
        ensure!(w_b.len() == d_inner * n_state, Shape, "w_b has {} entries", w_b.len());
        ensure!(w_c.len() == d_inner * n_state, Shape, "w_c has {} entries", w_c.len());
        ensure!(a_diag.len() == n_state, Shape, "a_diag has {} entries", a_diag.len());
        ensure!(
            a_diag.iter().all(|&a| a < 0.0 && a.is_finite()),
            InvalidArgument,
            "a_diag entries must be strictly negative"
        );
        Ok(Self {
            d_inner,
            n_state,
            w_delta,
            b_delta,
            w_b,
            w_c,
            a_log: a_diag.iter().map(|a| (-a).ln()).collect(),
        })
    }

    pub fn a_diag(&self) -> Vec<f64> {
        self.a_log.iter().map(|l| -l.exp()).collect()
    }

    /// Per-step projections `(delta, B, C)` for a `len × d_inner` input.
    ///
    /// `delta_pre` receives the pre-softplus values.
    pub(crate) fn project(
        &self,
        u: &[f64],
        len: usize,
        delta_pre: &mut [f64],
        delta: &mut [f64],
        bm: &mut [f64],
        cm: &mut [f64],
    ) {
        let (di, n) = (self.d_inner, self.n_state);
        gemm(len, di, di, u, false, &self.w_delta, false, 0.0, delta_pre);
        crate::linalg::add_row_bias(delta_pre, &self.b_delta);
        for (d, &p) in delta.iter_mut().zip(delta_pre.iter()) {
            *d = softplus(p);
        }
        gemm(len, di, n, u, false, &self.w_b, false, 0.0, bm);
        gemm(len, di, n, u, false, &self.w_c, false, 0.0, cm);
    }
}

/// Selective scan over a `len × d_inner` row-major input.
///
/// For step `t` and channel `d`: `Δ = softplus(⟨u_t, w_delta[:, d]⟩ + b_delta[d])`,
/// `B_t = u_t w_b`, `C_t = u_t w_c`, `h ← exp(Δ a) ⊙ h + Δ B_t u_{t,d}`,
/// `y_{t,d} = ⟨C_t, h⟩`, starting from `h = 0`.
pub fn selective_scan(p: &SelectiveParams, u: &[f64], len: usize) -> Result<Vec<f64>> {
    ensure!(len >= 1, Shape, "sequence length must be >= 1");
    ensure!(
        u.len() == len * p.d_inner,
        Shape,
        "input has {} entries, expected {len}×{}",
        u.len(),
        p.d_inner
    );
    let (di, n) = (p.d_inner, p.n_state);
    let mut delta_pre = vec![0.0; len * di];
    let mut delta = vec![0.0; len * di];
    let mut bm = vec![0.0; len * n];
    let mut cm = vec![0.0; len * n];
    p.project(u, len, &mut delta_pre, &mut delta, &mut bm, &mut cm);
    let mut y = vec![0.0; len * di];
    let mut h = vec![0.0; di * n];
    let a = p.a_diag();
    scan_kernel(
        ScanInputs {
            u,
            delta: &delta,
            bm: &bm,
            cm: &cm,
            a_diag: &a,
            len,
            d_inner: di,
            n_state: n,
        },
        &mut h,
        &mut y,
        None,
    );
    Ok(y)
}

/// Borrowed per-sequence inputs of the selective-scan kernels.
#[derive(Clone, Copy)]
pub(crate) struct ScanInputs<'a> {
    pub u: &'a [f64],
    pub delta: &'a [f64],
    pub bm: &'a [f64],
    pub cm: &'a [f64],
    pub a_diag: &'a [f64],
    pub len: usize,
    pub d_inner: usize,
    pub n_state: usize,
}

/// Forward selective recurrence for one sequence.
///
/// `h` is an `n_state × d_inner` scratch state, zeroed here. When `trace` is
/// given it receives `(decays, states)`, each laid out `len × n_state ×
/// d_inner`. Inner loops run over channels so they vectorize.
pub(crate) fn scan_kernel(
    s: ScanInputs<'_>,
    h: &mut [f64],
    y: &mut [f64],
    mut trace: Option<(&mut [f64], &mut [f64])>,
) {
    let (di, n) = (s.d_inner, s.n_state);
    h.iter_mut().for_each(|v| *v = 0.0);
    for t in 0..s.len {
        let dt_t = &s.delta[t * di..(t + 1) * di];
        let u_t = &s.u[t * di..(t + 1) * di];
        let y_t = &mut y[t * di..(t + 1) * di];
        y_t.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let (a, b, c) = (s.a_diag[i], s.bm[t * n + i], s.cm[t * n + i]);
            let h_i = &mut h[i * di..(i + 1) * di];
            let lanes = h_i.iter_mut().zip(dt_t).zip(u_t).zip(y_t.iter_mut());
            match trace.as_mut() {
                Some((decays, states)) => {
                    let off = (t * n + i) * di;
                    let rec = decays[off..off + di].iter_mut().zip(&mut states[off..off + di]);
                    for ((((hv, &dt), &u), yv), (dec, st)) in lanes.zip(rec) {
                        let e = fast_exp(dt * a);
                        *hv = e * *hv + dt * u * b;
                        *dec = e;
                        *st = *hv;
                        *yv += c * *hv;
                    }
                }
                None => {
                    for (((hv, &dt), &u), yv) in lanes {
                        *hv = fast_exp(dt * a) * *hv + dt * u * b;
                        *yv += c * *hv;
                    }
                }
            }
        }
    }
}

/// Gradients of the selective recurrence for one sequence.
pub(crate) struct ScanGrads<'a> {
    pub du: &'a mut [f64],
    pub ddelta: &'a mut [f64],
    pub dbm: &'a mut [f64],
    pub dcm: &'a mut [f64],
    pub da: &'a mut [f64],
}

/// Reverse pass of [`scan_kernel`]. `decays`/`states` come from a traced
/// forward run; `gh` is an `n_state × d_inner` scratch buffer. Gradients are
/// accumulated (`+=`) into `g`.
pub(crate) fn scan_kernel_backward(
    s: ScanInputs<'_>,
    decays: &[f64],
    states: &[f64],
    dy: &[f64],
    gh: &mut [f64],
    g: ScanGrads<'_>,
) {
    const W: usize = 8;
    let (di, n) = (s.d_inner, s.n_state);
    gh.iter_mut().for_each(|v| *v = 0.0);
    let zeros = vec![0.0; di];
    for t in (0..s.len).rev() {
        let r = t * di..(t + 1) * di;
        let (dt_t, u_t, dy_t) = (&s.delta[r.clone()], &s.u[r.clone()], &dy[r.clone()]);
        let ddelta_t = &mut g.ddelta[r.clone()];
        let du_t = &mut g.du[r];
        for i in 0..n {
            let (a, b, c) = (s.a_diag[i], s.bm[t * n + i], s.cm[t * n + i]);
            let off = (t * n + i) * di;
            let st = &states[off..off + di];
            let dec = &decays[off..off + di];
            let h_prev = if t > 0 { &states[off - n * di..off - n * di + di] } else { &zeros[..] };
            let gv = &mut gh[i * di..(i + 1) * di];
            // one channel: returns its dC, dB and dA contributions
            macro_rules! channel {
                ($d:expr) => {{
                    let d = $d;
                    let v = gv[d] + dy_t[d] * c;
                    let w = v * h_prev[d] * dec[d];
                    ddelta_t[d] += w * a + v * u_t[d] * b;
                    du_t[d] += v * dt_t[d] * b;
                    gv[d] = v * dec[d];
                    [dy_t[d] * st[d], v * dt_t[d] * u_t[d], w * dt_t[d]]
                }};
            }
            let mut acc = [[0.0; W]; 3];
            let main = di - di % W;
            for d0 in (0..main).step_by(W) {
                for j in 0..W {
                    let [gc, gb, ga] = channel!(d0 + j);
                    acc[0][j] += gc;
                    acc[1][j] += gb;
                    acc[2][j] += ga;
                }
            }
            let mut tail = [0.0; 3];
            for d in main..di {
                let [gc, gb, ga] = channel!(d);
                tail[0] += gc;
                tail[1] += gb;
                tail[2] += ga;
            }
            let sum = |l: &[f64; W]| ((l[0] + l[4]) + (l[1] + l[5])) + ((l[2] + l[6]) + (l[3] + l[7]));
            g.dcm[t * n + i] += sum(&acc[0]) + tail[0];
            g.dbm[t * n + i] += sum(&acc[1]) + tail[1];
            g.da[i] += sum(&acc[2]) + tail[2];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
    }

    fn random_discrete(rng: &mut ChaCha8Rng, n: usize) -> DiscreteSsm {
        DiscreteSsm::new(
            (0..n).map(|_| rng.random_range(0.05..0.999)).collect(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn zoh_scalar_closed_form() {
        let c = ContinuousSsm::new(vec![-1.0], vec![1.0], vec![1.0]).unwrap();
        let d = discretize_zoh(&c, 0.1).unwrap();
        assert!((d.a_bar[0] - 0.904_837_418_035_959_6).abs() < 1e-15);
        // (-0.1)^-1 (e^-0.1 - 1) 0.1 = 1 - e^-0.1
        assert!((d.b_bar[0] - 0.095_162_581_964_040_4).abs() < 1e-15);
    }

    #[test]
    fn zoh_small_delta_limit() {
        let c = ContinuousSsm::new(vec![-1.0], vec![1.0], vec![1.0]).unwrap();
        let d = discretize_zoh(&c, 1e-8).unwrap();
        assert!((d.a_bar[0] - (1.0 - 1e-8)).abs() < 1e-15);
        assert!((d.b_bar[0] - 1e-8).abs() < 1e-15);
    }

    #[test]
    fn zoh_rejects_bad_inputs() {
        let c = ContinuousSsm::new(vec![-1.0], vec![1.0], vec![1.0]).unwrap();
        assert!(discretize_zoh(&c, 0.0).is_err());
        assert!(discretize_zoh(&c, -0.5).is_err());
        assert!(ContinuousSsm::new(vec![0.0], vec![1.0], vec![1.0]).is_err());
        assert!(ContinuousSsm::new(vec![-1.0, -2.0], vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn sequential_scan_hand_unrolled() {
        let d = DiscreteSsm::new(vec![0.5], vec![1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(scan_sequential(&d, &[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.5, 0.25]);
        assert_eq!(scan_sequential(&d, &[0.0; 5]).unwrap(), vec![0.0; 5]);
        assert!(scan_sequential(&d, &[]).is_err());
    }

    #[test]
    fn compose_examples() {
        let e1 = ScanElement::new(0.5, 1.0);
        assert_eq!(compose(e1, ScanElement::IDENTITY), e1);
        assert_eq!(compose(ScanElement::IDENTITY, e1), e1);
        assert_eq!(compose(e1, ScanElement::new(0.5, 0.0)), ScanElement::new(0.25, 0.5));
        let h = 3.0;
        let (e2, e3) = (ScanElement::new(0.3, -2.0), ScanElement::new(1.7, 0.4));
        assert!((compose(e2, e3).apply(h) - e3.apply(e2.apply(h))).abs() < 1e-15);
    }

    #[test]
    fn parallel_scan_small_lengths() {
        let d = DiscreteSsm::new(vec![0.5], vec![1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(scan_parallel(&d, &[2.0]).unwrap(), vec![2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for len in 1..=33 {
            let d = random_discrete(&mut rng, 3);
            let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let seq = scan_sequential(&d, &x).unwrap();
            let par = scan_parallel(&d, &x).unwrap();
            assert!(rel_close(&par, &seq, 1e-12), "len {len}");
        }
    }

    #[test]
    fn parallel_scan_long() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = random_discrete(&mut rng, 16);
        let x: Vec<f64> = (0..1024).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seq = scan_sequential(&d, &x).unwrap();
        let par = scan_parallel(&d, &x).unwrap();
        assert!(rel_close(&par, &seq, 1e-10));
    }

    #[test]
    fn kernel_examples() {
        let d = DiscreteSsm::new(vec![0.5], vec![1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(ssm_kernel(&d, 3).unwrap(), vec![1.0, 0.5, 0.25]);
        let d2 = DiscreteSsm::new(vec![0.5, 0.9], vec![2.0, -1.0], vec![0.3, 0.7], 1.0).unwrap();
        assert_eq!(ssm_kernel(&d2, 1).unwrap(), vec![0.3 * 2.0 - 0.7]);
        assert!(ssm_kernel(&d2, 0).is_err());
    }

    #[test]
    fn kernel_convolution_matches_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_discrete(&mut rng, 8);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = ssm_kernel(&d, 64).unwrap();
        let conv = causal_convolve(&x, &k).unwrap();
        assert!(rel_close(&conv, &scan_sequential(&d, &x).unwrap(), 1e-9));
    }

    #[test]
    fn zero_input_state_norm_never_grows() {
        let c = ContinuousSsm::new(ContinuousSsm::default_a_diag(6), vec![1.0; 6], vec![1.0; 6]).unwrap();
        let d = discretize_zoh(&c, 0.3).unwrap();
        let mut h = vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.25];
        let mut prev = h.iter().map(|v| v * v).sum::<f64>();
        for _ in 0..50 {
            d.step(&mut h, 0.0);
            let norm = h.iter().map(|v| v * v).sum::<f64>();
            assert!(norm <= prev);
            prev = norm;
        }
    }

    #[test]
    fn selective_zero_input_gives_zero_output() {
        let (di, n, len) = (3, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let p = SelectiveParams::new(di, n, r(di * di), vec![crate::linalg::softplus_inv(0.05); di], r(di * n), r(di * n), &[-1.0, -2.0])
            .unwrap();
        let y = selective_scan(&p, &vec![0.0; len * di], len).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(selective_scan(&p, &vec![0.0; 4], len).is_err());
    }

    #[test]
    fn zoh_two_states_against_taylor() {
        fn exp_taylor(x: f64) -> f64 {
            let (mut term, mut sum) = (1.0, 1.0);
            for k in 1..50 {
                term *= x / k as f64;
                sum += term;
            }
            sum
        }
        let c = ContinuousSsm::new(vec![-1.0, -2.0], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let d = discretize_zoh(&c, 0.5).unwrap();
        for (i, a) in [-1.0f64, -2.0].into_iter().enumerate() {
            let e = exp_taylor(0.5 * a);
            assert!((d.a_bar[i] - e).abs() < 1e-15);
            assert!((d.b_bar[i] - (e - 1.0) / (0.5 * a) * 0.5).abs() < 1e-15);
            assert!(d.a_bar[i] > 0.0 && d.a_bar[i] < 1.0);
        }
    }

    #[test]
    fn zoh_limit_at_tiny_delta() {
        let c = ContinuousSsm::new(vec![-0.5, -3.0], vec![2.0, -1.5], vec![1.0, 1.0]).unwrap();
        let d = discretize_zoh(&c, 1e-6).unwrap();
        for i in 0..2 {
            assert!((d.a_bar[i] - 1.0).abs() < 1e-5);
            assert!((d.b_bar[i] / 1e-6 - c.b_vec()[i]).abs() <= 1e-5 * c.b_vec()[i].abs());
        }
    }

    proptest! {
        #[test]
        fn compose_is_associative(
            a in proptest::array::uniform3(-2.0f64..2.0),
            b in proptest::array::uniform3(-2.0f64..2.0),
        ) {
            let e: Vec<ScanElement> = (0..3).map(|i| ScanElement::new(a[i], b[i])).collect();
            let left = compose(compose(e[0], e[1]), e[2]);
            let right = compose(e[0], compose(e[1], e[2]));
            let tol = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
            prop_assert!(tol(left.decay, right.decay) && tol(left.load, right.load));
        }
    }

    #[test]
    fn selective_kernel_with_constant_projections_is_lti() {
        let (di, n, len) = (3, 4, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = ContinuousSsm::default_a_diag(n);
        let dt: Vec<f64> = (0..di).map(|_| rng.random_range(0.01..0.3)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..len * di).map(|_| rng.random_range(-1.0..1.0)).collect();
        let delta: Vec<f64> = (0..len).flat_map(|_| dt.iter().copied()).collect();
        let bm: Vec<f64> = (0..len).flat_map(|_| b.iter().copied()).collect();
        let cm: Vec<f64> = (0..len).flat_map(|_| c.iter().copied()).collect();
        let s = ScanInputs { u: &u, delta: &delta, bm: &bm, cm: &cm, a_diag: &a, len, d_inner: di, n_state: n };
        let mut h = vec![0.0; di * n];
        let mut y = vec![0.0; len * di];
        scan_kernel(s, &mut h, &mut y, None);
        for d in 0..di {
            let lti = DiscreteSsm::new(
                a.iter().map(|ai| (dt[d] * ai).exp()).collect(),
                b.iter().map(|bi| dt[d] * bi).collect(),
                c.clone(),
                dt[d],
            )
            .unwrap();
            let x: Vec<f64> = (0..len).map(|t| u[t * di + d]).collect();
            let want = scan_sequential(&lti, &x).unwrap();
            let got: Vec<f64> = (0..len).map(|t| y[t * di + d]).collect();
            assert!(rel_close(&got, &want, 1e-9), "channel {d}");
        }
    }
}
