use proptest::prelude::*;
use vistk_core::loss::*;
use vistk_core::mask::{BinaryMask, PixelBox};

const H: f64 = 1e-4;
const TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Case {
    probs: Vec<f64>,
    target: Vec<bool>,
    bbox: (u32, u32, u32, u32),
    colors: Vec<[f64; 3]>,
}

fn arb_case() -> impl Strategy<Value = Case> {
    (
        prop::collection::vec(0.05f64..0.95, 64),
        prop::collection::vec(any::<bool>(), 64),
        (0u32..8, 0u32..8),
        (1u32..=8, 1u32..=8),
        prop::collection::vec([0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0], 64),
    )
        .prop_map(|(probs, target, (x, y), (w, h), colors)| Case {
            probs,
            target,
            bbox: (x, y, w.min(8 - x), h.min(8 - y)),
            colors,
        })
}

impl Case {
    fn pred(&self, probs: &[f64]) -> ProbGrid {
        ProbGrid::new(8, 8, probs.to_vec()).unwrap()
    }
    fn target(&self) -> BinaryMask {
        BinaryMask::from_fn(8, 8, |r, c| self.target[(r * 8 + c) as usize])
    }
    fn bbox(&self) -> PixelBox {
        PixelBox::new(self.bbox.0, self.bbox.1, self.bbox.2, self.bbox.3)
    }
    fn image(&self) -> ColorImage {
        ColorImage::new(8, 8, self.colors.clone()).unwrap()
    }
}

/// Compares an analytic gradient with central differences entry by entry.
fn check(case: &Case, f: impl Fn(&ProbGrid) -> LossOutput, skip: impl Fn(usize) -> bool) -> Result<(), TestCaseError> {
    let grad = f(&case.pred(&case.probs)).grad;
    for i in 0..64 {
        if skip(i) {
            continue;
        }
        let mut up = case.probs.clone();
        up[i] += H;
        let mut down = case.probs.clone();
        down[i] -= H;
        let numeric = (f(&case.pred(&up)).value - f(&case.pred(&down)).value) / (2.0 * H);
        let scale = grad[i].abs().max(numeric.abs()).max(1e-6);
        prop_assert!(
            (grad[i] - numeric).abs() / scale <= TOL,
            "entry {}: analytic {} numeric {}",
            i,
            grad[i],
            numeric
        );
    }
    Ok(())
}

/// The max projections have kinks where two candidates are within 2h.
fn projection_kink(probs: &[f64], i: usize) -> bool {
    let (r, c) = (i / 8, i % 8);
    (0..8).any(|k| k != r && (probs[k * 8 + c] - probs[i]).abs() < 2.0 * H)
        || (0..8).any(|k| k != c && (probs[r * 8 + k] - probs[i]).abs() < 2.0 * H)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dice_gradient(case in arb_case()) {
        let t = case.target();
        check(&case, |p| dice_loss(p, &t, 1.0).unwrap(), |_| false)?;
    }

    #[test]
    fn focal_gradient(case in arb_case()) {
        let t = case.target();
        check(&case, |p| focal_loss(p, &t, 0.25, 2.0, 1e-6).unwrap(), |_| false)?;
    }

    #[test]
    fn projection_gradient(case in arb_case()) {
        let b = case.bbox();
        check(&case, |p| boxinst_projection_loss(p, &b, 1e-5).unwrap(), |i| projection_kink(&case.probs, i))?;
    }

    #[test]
    fn pairwise_gradient(case in arb_case()) {
        let (b, img) = (case.bbox(), case.image());
        let params = LossConfig::default().pairwise();
        check(&case, |p| boxinst_pairwise_loss(p, &img, &b, &params).unwrap(), |_| false)?;
    }

    #[test]
    fn losses_are_non_negative_and_bounded(case in arb_case()) {
        let p = case.pred(&case.probs);
        let d = dice_loss(&p, &case.target(), 1.0).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(focal_loss(&p, &case.target(), 0.25, 2.0, 1e-6).unwrap().value >= 0.0);
        let proj = boxinst_projection_loss(&p, &case.bbox(), 1e-5).unwrap().value;
        prop_assert!((0.0..=2.0).contains(&proj));
        prop_assert!(boxinst_pairwise_loss(&p, &case.image(), &case.bbox(), &LossConfig::default().pairwise()).unwrap().value >= 0.0);
    }
}

#[test]
fn dice_hand_value() {
    // p = [0.5, 0.5, 0, 0], t = [1, 0, 0, 0]: 1 - (2*0.5 + 1) / (1 + 1 + 1)
    let p = ProbGrid::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    let t = BinaryMask::from_fn(2, 2, |r, c| r == 0 && c == 0);
    let out = dice_loss(&p, &t, 1.0).unwrap();
    assert!((out.value - (1.0 - 2.0 / 3.0)).abs() < 1e-15);
}

#[test]
fn focal_hand_value() {
    // one positive at p = 0.5: -0.25 * 0.25 * ln 0.5
    let p = ProbGrid::new(1, 1, vec![0.5]).unwrap();
    let t = BinaryMask::from_fn(1, 1, |_, _| true);
    let out = focal_loss(&p, &t, 0.25, 2.0, 1e-6).unwrap();
    assert!((out.value - 0.0625 * 2f64.ln()).abs() < 1e-15);
    // clamp keeps p = 0 finite and stops the gradient
    let z = ProbGrid::new(1, 1, vec![0.0]).unwrap();
    let out = focal_loss(&z, &t, 0.25, 2.0, 1e-6).unwrap();
    assert!(out.value.is_finite());
    assert_eq!(out.grad, vec![0.0]);
}

#[test]
fn projection_hand_value() {
    // 1x2 grid, box covers column 0; x-projection [0.5, 0], y-projection [0.5]
    let p = ProbGrid::new(1, 2, vec![0.5, 0.0]).unwrap();
    let b = PixelBox::new(0, 0, 1, 1);
    let out = boxinst_projection_loss(&p, &b, 0.0).unwrap();
    // each axis: 1 - 2*0.5 / (0.25 + 1)
    assert!((out.value - 2.0 * (1.0 - 1.0 / 1.25)).abs() < 1e-12);
}

#[test]
fn pairwise_hand_value() {
    // 1x2 grid, one horizontal edge at dilation 1: -ln(0.3*0.6 + 0.7*0.4)
    let p = ProbGrid::new(1, 2, vec![0.3, 0.6]).unwrap();
    let img = ColorImage::uniform(1, 2, [0.2; 3]);
    let params = PairwiseParams { dilation: 1, ..LossConfig::default().pairwise() };
    let out = boxinst_pairwise_loss(&p, &img, &PixelBox::new(0, 0, 2, 1), &params).unwrap();
    assert!((out.value + (0.18f64 + 0.28).ln()).abs() < 1e-15);
}
