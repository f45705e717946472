use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpnorm_core::tensor::{self, tensor_vjp, TensorOp};
use warpnorm_core::{ConvKernel, Error, Shape4, Tensor4};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t(shape: Shape4, data: &[f64]) -> Tensor4 {
    Tensor4::new(shape, data.to_vec()).unwrap()
}

fn constant_flow(h: usize, w: usize, dy: f64, dx: f64) -> Tensor4 {
    Tensor4::from_fn(
        Shape4::new(1, 2, h, w),
        |_, c, _, _| if c == 0 { dy } else { dx },
    )
}

#[test]
fn construction_rejects_bad_input() {
    assert!(Tensor4::new(Shape4::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    assert!(Tensor4::new(Shape4::new(1, 0, 2, 2), vec![]).is_err());
    let err = Tensor4::new(Shape4::new(1, 1, 1, 2), vec![1.0, f64::NAN]).unwrap_err();
    assert_eq!(err, Error::NonFinite { index: 1 });
}

#[test]
fn add_zeros_is_identity() {
    let x = Tensor4::randn(Shape4::new(2, 3, 4, 5), 1.0, &mut rng(1));
    assert_eq!(tensor::add(&Tensor4::zeros(x.shape()), &x).unwrap(), x);
}

#[test]
fn lerp_mask_extremes() {
    let s = Shape4::new(1, 2, 3, 3);
    let a = Tensor4::randn(s, 1.0, &mut rng(2));
    let b = Tensor4::randn(s, 1.0, &mut rng(3));
    let ones = Tensor4::full(s.with_c(1), 1.0);
    let zeros = Tensor4::zeros(s.with_c(1));
    assert_eq!(tensor::lerp(&a, &b, &ones).unwrap(), a);
    assert_eq!(tensor::lerp(&a, &b, &zeros).unwrap(), b);
}

#[test]
fn mul_scalar_oracle() {
    let s = Shape4::new(1, 1, 1, 2);
    let out = tensor::mul(&t(s, &[2.0, 3.0]), &t(s, &[4.0, 5.0])).unwrap();
    assert_eq!(out.data(), &[8.0, 15.0]);
}

#[test]
fn shape_mismatch_is_a_dimension_error() {
    let a = Tensor4::zeros(Shape4::new(1, 1, 2, 2));
    let b = Tensor4::zeros(Shape4::new(1, 1, 2, 3));
    assert!(matches!(tensor::add(&a, &b), Err(Error::Dimension { .. })));
}

#[test]
fn conv_identity_kernel() {
    let x = Tensor4::randn(Shape4::new(2, 3, 5, 4), 1.0, &mut rng(4));
    assert_eq!(tensor::conv2d(&x, &ConvKernel::identity(3)).unwrap(), x);
}

#[test]
fn conv_ones_kernel_interior_and_edge() {
    let c = 1.5;
    let bias = 0.25;
    let x = Tensor4::full(Shape4::new(1, 1, 5, 5), c);
    let k = ConvKernel::new(Tensor4::full(Shape4::new(1, 1, 3, 3), 1.0), vec![bias]).unwrap();
    let y = tensor::conv2d(&x, &k).unwrap();
    assert_abs_diff_eq!(y.at(0, 0, 2, 2), 9.0 * c + bias, epsilon = 1e-12);
    assert_abs_diff_eq!(y.at(0, 0, 0, 2), 6.0 * c + bias, epsilon = 1e-12);
    assert_abs_diff_eq!(y.at(0, 0, 0, 0), 4.0 * c + bias, epsilon = 1e-12);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let x = Tensor4::zeros(Shape4::new(1, 2, 4, 4));
    assert!(tensor::conv2d(&x, &ConvKernel::zeros(1, 3)).is_err());
}

#[test]
fn upsample_then_avgpool_round_trips() {
    let x = Tensor4::randn(Shape4::new(2, 2, 3, 4), 1.0, &mut rng(5));
    let back = tensor::avgpool2x(&tensor::upsample_nearest2x(&x)).unwrap();
    for (a, b) in back.data().iter().zip(x.data()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn avgpool_scalar_mean() {
    let x = t(Shape4::new(1, 1, 2, 2), &[1.0, 3.0, 5.0, 7.0]);
    assert_eq!(tensor::avgpool2x(&x).unwrap().data(), &[4.0]);
}

#[test]
fn avgpool_rejects_odd_dims() {
    assert!(tensor::avgpool2x(&Tensor4::zeros(Shape4::new(1, 1, 3, 4))).is_err());
}

#[test]
fn upsample_single_value() {
    let up = tensor::upsample_nearest2x(&t(Shape4::new(1, 1, 1, 1), &[2.5]));
    assert_eq!(up.shape(), Shape4::new(1, 1, 2, 2));
    assert_eq!(up.data(), &[2.5; 4]);
}

#[test]
fn bilinear_zero_flow_is_identity() {
    let src = Tensor4::randn(Shape4::new(1, 3, 5, 6), 1.0, &mut rng(6));
    assert_eq!(
        tensor::bilinear_sample(&src, &constant_flow(5, 6, 0.0, 0.0)).unwrap(),
        src
    );
}

#[test]
fn bilinear_integer_shift_duplicates_bottom_row() {
    let src = Tensor4::randn(Shape4::new(1, 2, 4, 5), 1.0, &mut rng(7));
    let out = tensor::bilinear_sample(&src, &constant_flow(4, 5, 1.0, 0.0)).unwrap();
    for c in 0..2 {
        for y in 0..4 {
            for x in 0..5 {
                let sy = (y + 1).min(3);
                assert_abs_diff_eq!(out.at(0, c, y, x), src.at(0, c, sy, x), epsilon = 1e-15);
            }
        }
    }
}

#[test]
fn bilinear_midpoint() {
    let src = t(Shape4::new(1, 1, 1, 2), &[0.0, 1.0]);
    let out = tensor::bilinear_sample(&src, &constant_flow(1, 2, 0.0, 0.5)).unwrap();
    assert_abs_diff_eq!(out.at(0, 0, 0, 0), 0.5, epsilon = 1e-15);
}

#[test]
fn vjp_of_add_and_mul() {
    let s = Shape4::new(1, 2, 3, 3);
    let a = Tensor4::randn(s, 1.0, &mut rng(8));
    let b = Tensor4::randn(s, 1.0, &mut rng(9));
    let g = Tensor4::randn(s, 1.0, &mut rng(10));
    let ga = tensor_vjp(TensorOp::Add, &[&a, &b], &g).unwrap();
    assert_eq!(ga, vec![g.clone(), g.clone()]);
    let gm = tensor_vjp(TensorOp::Mul, &[&a, &b], &g).unwrap();
    assert_eq!(gm[0], tensor::mul(&g, &b).unwrap());
    assert_eq!(gm[1], tensor::mul(&g, &a).unwrap());
}

fn small_tensor(c: usize) -> impl Strategy<Value = Tensor4> {
    prop::collection::vec(-3.0f64..3.0, c * 16)
        .prop_map(move |v| Tensor4::new(Shape4::new(1, c, 4, 4), v).unwrap())
}

fn small_flow() -> impl Strategy<Value = Tensor4> {
    prop::collection::vec(-6.0f64..6.0, 32)
        .prop_map(|v| Tensor4::new(Shape4::new(1, 2, 4, 4), v).unwrap())
}

proptest! {
    #[test]
    fn bilinear_preserves_constants(v in -10.0f64..10.0, flow in small_flow()) {
        let src = Tensor4::full(Shape4::new(1, 3, 4, 4), v);
        let out = tensor::bilinear_sample(&src, &flow).unwrap();
        for &o in out.data() {
            prop_assert!((o - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn bilinear_is_linear_in_src(a in small_tensor(2), b in small_tensor(2), alpha in -2.0f64..2.0, flow in small_flow()) {
        let mixed = tensor::add(&tensor::scale(&a, alpha), &b).unwrap();
        let lhs = tensor::bilinear_sample(&mixed, &flow).unwrap();
        let rhs = tensor::add(
            &tensor::scale(&tensor::bilinear_sample(&a, &flow).unwrap(), alpha),
            &tensor::bilinear_sample(&b, &flow).unwrap(),
        ).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_linear_in_input_and_weights(
        a in small_tensor(2),
        b in small_tensor(2),
        w1 in prop::collection::vec(-1.0f64..1.0, 18),
        w2 in prop::collection::vec(-1.0f64..1.0, 18),
        alpha in -2.0f64..2.0,
    ) {
        let ws = Shape4::new(1, 2, 3, 3);
        let k1 = ConvKernel::new(Tensor4::new(ws, w1.clone()).unwrap(), vec![0.0]).unwrap();
        let k2 = ConvKernel::new(Tensor4::new(ws, w2.clone()).unwrap(), vec![0.0]).unwrap();

        let mixed = tensor::add(&tensor::scale(&a, alpha), &b).unwrap();
        let lhs = tensor::conv2d(&mixed, &k1).unwrap();
        let rhs = tensor::add(
            &tensor::scale(&tensor::conv2d(&a, &k1).unwrap(), alpha),
            &tensor::conv2d(&b, &k1).unwrap(),
        ).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() < 1e-11);
        }

        let wsum: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| alpha * x + y).collect();
        let ksum = ConvKernel::new(Tensor4::new(ws, wsum).unwrap(), vec![0.0]).unwrap();
        let lhs = tensor::conv2d(&a, &ksum).unwrap();
        let rhs = tensor::add(
            &tensor::scale(&tensor::conv2d(&a, &k1).unwrap(), alpha),
            &tensor::conv2d(&a, &k2).unwrap(),
        ).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() < 1e-11);
        }
    }
}
