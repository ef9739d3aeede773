use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Trailing-dimension broadcast of two shapes (size-1 dims stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out`, with 0 on broadcast dimensions.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visit every output index with the matching flat offsets into `a` and `b`.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for j in 0..inner {
            f(o + j, oa + j * ia_step, ob + j * ib_step);
        }
        o += inner;
        // Advance the odometer over the outer dimensions.
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Element>(self, x: T, y: T) -> T {
        match self {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
        }
    }

    /// Partial derivatives (d/dx, d/dy) at (x, y).
    #[inline]
    fn partials<T: Element>(self, x: T, y: T) -> (T, T) {
        match self {
            BinOp::Add => (T::one(), T::one()),
            BinOp::Sub => (T::one(), -T::one()),
            BinOp::Mul => (y, x),
            BinOp::Div => (T::one() / y, -x / (y * y)),
        }
    }
}

fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, op: BinOp) -> Result<Tensor<T>> {
    let out_shape =
        broadcast_shape(a.shape(), b.shape()).ok_or_else(|| shape_err(op.name(), a.shape(), b.shape()))?;
    let n: usize = out_shape.iter().product();
    let same = a.shape() == b.shape();
    let data = {
        let (ad, bd) = (a.data(), b.data());
        if same {
            ad.iter().zip(bd.iter()).map(|(&x, &y)| op.apply(x, y)).collect()
        } else {
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            let mut out = vec![T::zero(); n];
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| out[o] = op.apply(ad[ia], bd[ib]));
            out
        }
    };
    let (pa, pb) = (a.clone(), b.clone());
    let shape = out_shape.clone();
    Ok(Tensor::from_op(
        data,
        out_shape,
        op.name(),
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let (ad, bd) = (pa.data(), pb.data());
            let mut ga = pa.requires_grad().then(|| vec![T::zero(); ad.len()]);
            let mut gb = pb.requires_grad().then(|| vec![T::zero(); bd.len()]);
            let mut visit = |o: usize, ia: usize, ib: usize| {
                let (dx, dy) = op.partials(ad[ia], bd[ib]);
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += g[o] * dx;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += g[o] * dy;
                }
            };
            if pa.shape() == pb.shape() {
                (0..g.len()).for_each(|i| visit(i, i, i));
            } else {
                let sa = broadcast_strides(pa.shape(), &shape);
                let sb = broadcast_strides(pb.shape(), &shape);
                for_each_broadcast(&shape, &sa, &sb, visit);
            }
            vec![ga, gb]
        }),
    ))
}

/// Elementwise map `y = f(x)` with derivative `df(x)`.
pub(crate) fn unary<T: Element>(
    x: &Tensor<T>,
    name: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    let px = x.clone();
    Tensor::from_op(
        data,
        x.shape().to_vec(),
        name,
        vec![x.clone()],
        Box::new(move |g| {
            let xd = px.data();
            vec![Some(g.iter().zip(xd.iter()).map(|(&g, &x)| g * df(x)).collect())]
        }),
    )
}

fn c<T: Element>(v: f64) -> T {
    T::from_f64c(v)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd<T: Element>(x: T) -> T {
    let u = c::<T>(GELU_K) * (x + c::<T>(GELU_A) * x * x * x);
    c::<T>(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Element>(x: T) -> T {
    let u = c::<T>(GELU_K) * (x + c::<T>(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = c::<T>(GELU_K) * (T::one() + c::<T>(3.0 * GELU_A) * x * x);
    c::<T>(0.5) * (T::one() + th) + c::<T>(0.5) * x * (T::one() - th * th) * du
}

fn sigmoid_fwd<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, BinOp::Div)
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64c(s);
        unary(self, "scale", move |x| x * s, move |_| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64c(s);
        unary(self, "add_scalar", move |x| x + s, |_| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, "neg", |x| -x, |_| -T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |x| x.exp(), |x| x.exp())
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(self, "sqrt", |x| x.sqrt(), |x| c::<T>(0.5) / x.sqrt())
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, "square", |x| x * x, |x| x + x)
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&self) -> Tensor<T> {
        unary(
            self,
            "abs",
            |x| x.abs(),
            |x| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, "sigmoid", sigmoid_fwd, |x| {
            let s = sigmoid_fwd(x);
            s * (T::one() - s)
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        unary(self, "gelu", gelu_fwd, gelu_grad)
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary(self, "tanh", |x| x.tanh(), |x| {
            let t = x.tanh();
            T::one() - t * t
        })
    }
}
