//! Tensor arithmetic, seeded randomness and the AMLT tensor file format.

mod io;
mod ops;
mod rng;
mod scalar;
mod tensor;

pub use io::{
    load_tensor, read_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor, TENSOR_MAGIC,
    TENSOR_VERSION,
};
pub use ops::{percentile, softmax};
pub(crate) use ops::softmax_slice;
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn identity_is_neutral() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn small_product_by_hand() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn zero_annihilates() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let z = Tensor::<f64>::zeros(&[3, 2]);
        assert_eq!(z.matmul(&a).unwrap(), Tensor::zeros(&[3, 2]));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(a.matmul(&a).is_err());
        assert!(a.t_matmul(&Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn constructor_checks_invariants() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![0], Vec::<f64>::new()).is_err());
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 4.0, -1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.5, 2.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), a.transpose().unwrap().matmul(&b).unwrap());
        let c = Tensor::from_rows(&[vec![1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(a.matmul_t(&c).unwrap(), a.matmul(&c.transpose().unwrap()).unwrap());
    }

    #[test]
    fn generic_over_f32() {
        let a: Tensor<f32> = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b: Tensor<f32> = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0f32, 7.0]);
    }

    fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6) {
            let mut rng = Rng::new(seed);
            let a = random_matrix(&mut rng, m, k);
            let b = random_matrix(&mut rng, k, n);
            let c = random_matrix(&mut rng, n, p);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn softmax_is_a_probability_vector(v in proptest::collection::vec(-1e6f64..1e6, 1..20), t in 1e-3f64..10.0) {
            let s = softmax(&Tensor::vector(v).unwrap(), t).unwrap();
            prop_assert!(s.data().iter().all(|&p| p >= 0.0));
            prop_assert!((s.sum() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tensor_bytes_round_trip(shape in proptest::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, (0..n).map(|_| rng.normal(0.0, 10.0).unwrap()).collect()).unwrap();
            prop_assert_eq!(tensor_from_bytes::<f64>(&tensor_to_bytes(&t)).unwrap(), t);
        }
    }
}
