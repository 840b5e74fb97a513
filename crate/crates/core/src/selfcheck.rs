//! Built-in consistency checks: analytic loss gradients against central
//! differences on random 8x8 instances, and the RLE codec against reference
//! counts strings.
//!
//! Instances draw probabilities from `[0.05, 0.95]`, away from the focal and
//! pairwise clamps. For the projection loss an entry is skipped when it is
//! within `2h` of another candidate for its row or column maximum, since the
//! max is not differentiable there.

use serde::{Deserialize, Serialize};

use crate::loss::{
    boxinst_pairwise_loss, boxinst_projection_loss, dice_loss, focal_loss, ColorImage, LossConfig, LossOutput,
    ProbGrid,
};
use crate::mask::{rle_decode, rle_encode, BinaryMask, PixelBox, RleMask};
use crate::synth::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    Dice,
    Focal,
    Projection,
    Pairwise,
}

impl Kernel {
    pub const ALL: [Kernel; 4] = [Kernel::Dice, Kernel::Focal, Kernel::Projection, Kernel::Pairwise];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Dice => "dice",
            Kernel::Focal => "focal",
            Kernel::Projection => "boxinst-projection",
            Kernel::Pairwise => "boxinst-pairwise",
        }
    }
}

pub struct Instance {
    pub pred: ProbGrid,
    pub target: BinaryMask,
    pub bbox: PixelBox,
    pub image: ColorImage,
}

pub fn random_instance(rng: &mut Rng, size: u32) -> Instance {
    let n = (size * size) as usize;
    let pred = ProbGrid::new(size, size, (0..n).map(|_| rng.uniform(0.05, 0.95)).collect()).expect("in range");
    let density = rng.unit();
    let target = BinaryMask::from_fn(size, size, |_, _| rng.chance(density));
    let x = rng.range(0, size as u64 - 1) as u32;
    let y = rng.range(0, size as u64 - 1) as u32;
    let w = rng.range(1, (size - x) as u64) as u32;
    let h = rng.range(1, (size - y) as u64) as u32;
    // spread wide enough that some neighbour pairs fail the similarity test
    let pixels = (0..n)
        .map(|_| [rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0)])
        .collect();
    Instance {
        pred,
        target,
        bbox: PixelBox::new(x, y, w, h),
        image: ColorImage::new(size, size, pixels).expect("finite"),
    }
}

pub fn evaluate_kernel(kernel: Kernel, inst: &Instance, pred: &ProbGrid, cfg: &LossConfig) -> LossOutput {
    match kernel {
        Kernel::Dice => dice_loss(pred, &inst.target, cfg.dice_smooth),
        Kernel::Focal => focal_loss(pred, &inst.target, cfg.focal_alpha, cfg.focal_gamma, cfg.prob_clamp),
        Kernel::Projection => boxinst_projection_loss(pred, &inst.bbox, cfg.projection_eps),
        Kernel::Pairwise => boxinst_pairwise_loss(pred, &inst.image, &inst.bbox, &cfg.pairwise()),
    }
    .expect("instance is well formed")
}

/// Entries where the projection loss has a kink within `margin`.
fn near_argmax_tie(pred: &ProbGrid, index: usize, margin: f64) -> bool {
    let (h, w) = pred.dims();
    let (r, c) = ((index / w as usize) as u32, (index % w as usize) as u32);
    let v = pred.get(r, c);
    let col_max = (0..h).filter(|&rr| rr != r).map(|rr| pred.get(rr, c)).fold(f64::MIN, f64::max);
    let row_max = (0..w).filter(|&cc| cc != c).map(|cc| pred.get(r, cc)).fold(f64::MIN, f64::max);
    (v - col_max).abs() < margin || (v - row_max).abs() < margin
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub kernel: Kernel,
    pub instances: usize,
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn check_kernel(
    kernel: Kernel,
    instances: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
    cfg: &LossConfig,
) -> GradientReport {
    let mut rng = Rng::derive(seed, kernel as u64);
    let mut report = GradientReport {
        kernel,
        instances,
        checked: 0,
        skipped: 0,
        failures: 0,
        max_rel_error: 0.0,
        tolerance,
    };
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 8);
        let analytic = evaluate_kernel(kernel, &inst, &inst.pred, cfg).grad;
        for (i, &a) in analytic.iter().enumerate() {
            if kernel == Kernel::Projection && near_argmax_tie(&inst.pred, i, 2.0 * step) {
                report.skipped += 1;
                continue;
            }
            let p = inst.pred.values()[i];
            let up = evaluate_kernel(kernel, &inst, &inst.pred.with_value(i, p + step), cfg).value;
            let down = evaluate_kernel(kernel, &inst, &inst.pred.with_value(i, p - step), cfg).value;
            let err = relative_error(a, (up - down) / (2.0 * step));
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
            if err > tolerance {
                report.failures += 1;
            }
        }
    }
    report
}

/// One reference encoding: a row-major pixel string of `0`/`1` and the
/// expected counts string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleGoldenCase {
    pub name: String,
    pub height: u32,
    pub width: u32,
    pub pixels: String,
    pub counts: String,
}

/// Reference counts strings produced with pycocotools.
pub const BUILTIN_RLE_GOLDEN: &str = include_str!("../tests/fixtures/rle_golden.json");

pub fn parse_rle_golden(text: &str) -> Result<Vec<RleGoldenCase>, String> {
    serde_json::from_str(text).map_err(|e| format!("golden file: {e}"))
}

/// Checks encode and decode against every case; the error names the first
/// failing case.
pub fn check_rle_golden(cases: &[RleGoldenCase]) -> Result<usize, String> {
    for c in cases {
        let bits: Vec<u8> = c.pixels.bytes().map(|b| (b == b'1') as u8).collect();
        let mask = BinaryMask::from_row_major(c.height, c.width, &bits).map_err(|e| format!("{}: {e}", c.name))?;
        let encoded = rle_encode(&mask);
        if encoded.counts != c.counts {
            return Err(format!("{}: encoded {:?}, expected {:?}", c.name, encoded.counts, c.counts));
        }
        let decoded = rle_decode(&RleMask {
            size: (c.height, c.width),
            counts: c.counts.clone(),
        })
        .map_err(|e| format!("{}: {e}", c.name))?;
        if decoded != mask {
            return Err(format!("{}: decoded mask differs", c.name));
        }
    }
    Ok(cases.len())
}

/// Roundtrips all 512 3x3 masks.
pub fn check_rle_exhaustive() -> Result<usize, String> {
    for bits in 0u32..512 {
        let m = BinaryMask::from_fn(3, 3, |r, c| bits >> (r * 3 + c) & 1 == 1);
        let back = rle_decode(&rle_encode(&m)).map_err(|e| format!("{bits:09b}: {e}"))?;
        if back != m {
            return Err(format!("3x3 mask {bits:09b} does not roundtrip"));
        }
    }
    Ok(512)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let cfg = LossConfig::default();
        for k in Kernel::ALL {
            let r = check_kernel(k, 5, 1, 1e-4, 1e-5, &cfg);
            assert!(r.passed(), "{r:?}");
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn golden_mismatch_is_named() {
        let bad = RleGoldenCase {
            name: "broken".into(),
            height: 1,
            width: 1,
            pixels: "1".into(),
            counts: "1".into(),
        };
        let err = check_rle_golden(&[bad]).unwrap_err();
        assert!(err.starts_with("broken"), "{err}");
        assert_eq!(check_rle_exhaustive(), Ok(512));
        let cases = parse_rle_golden(BUILTIN_RLE_GOLDEN).unwrap();
        assert_eq!(check_rle_golden(&cases), Ok(cases.len()));
    }
}
