use crate::element::{gemm, Element};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// `[m,k] · [k,n] → [m,n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(shape_err("matmul", a, b));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data(), false, &other.data(), false, &mut out, false);
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = pa.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(m, n, k, g, false, &pb.data(), true, &mut ga, false);
                    ga
                });
                let gb = pb.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(k, m, n, &pa.data(), true, g, false, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Batched product `[b,m,k] · [b,k,n] → [b,m,n]`.
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 3 || b.len() != 3 || a[0] != b[0] || a[2] != b[1] {
            return Err(shape_err("bmm", a, b));
        }
        let (batch, m, k, n) = (a[0], a[1], a[2], b[2]);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (self.data(), other.data());
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..],
                    false,
                    &bd[i * k * n..],
                    false,
                    &mut out[i * m * n..],
                    false,
                );
            }
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            vec![batch, m, n],
            "bmm",
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ga = pa.requires_grad().then(|| {
                    let bd = pb.data();
                    let mut ga = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        gemm(m, n, k, &g[i * m * n..], false, &bd[i * k * n..], true, &mut ga[i * m * k..], false);
                    }
                    ga
                });
                let gb = pb.requires_grad().then(|| {
                    let ad = pa.data();
                    let mut gb = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        gemm(k, m, n, &ad[i * m * k..], true, &g[i * m * n..], false, &mut gb[i * k * n..], false);
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let a = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::<f32>::from_vec(vec![1.0, 1.0], &[2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn identity_left() {
        let eye = Tensor::<f32>::from_vec(vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], &[3, 3]).unwrap();
        let x = Tensor::<f32>::from_vec((0..9).map(|v| v as f32 * 0.5 - 2.0).collect(), &[3, 3]).unwrap();
        assert_eq!(eye.matmul(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let a = Tensor::<f64>::from_vec((0..12).map(|v| v as f64).collect(), &[2, 2, 3]).unwrap();
        let b = Tensor::<f64>::from_vec((0..12).map(|v| (v as f64).sin()).collect(), &[2, 3, 2]).unwrap();
        let c = a.bmm(&b).unwrap();
        for i in 0..2 {
            let ai = a.narrow(0, i, 1).unwrap().reshape(&[2, 3]).unwrap();
            let bi = b.narrow(0, i, 1).unwrap().reshape(&[3, 2]).unwrap();
            let ci = ai.matmul(&bi).unwrap().to_vec();
            assert_eq!(&c.to_vec()[i * 4..(i + 1) * 4], ci.as_slice());
        }
    }
}
