//! Built-in acceptance checks over synthetic data.
//!
//! Each check exercises one property of the full method (SVD accuracy,
//! batch color correspondence, invariances, degenerate inputs, format
//! round-trips) against the reference computations in [`oracle`]. The
//! `prism selftest` command and the `acceptance` test target both run them.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::inference::{toy_model, ActivationStack, Conv2d, LayerSpec, Model, RecordingSession};
use crate::io::npy::{read_npy, write_npy};
use crate::io::ppm::{encode_ppm, read_image_ppm};
use crate::overlay::{RgbMapBatch, SharpenMode};
use crate::pca::{principal_scores, svd};
use crate::pipeline::{prism_maps, PrismOptions};
use crate::tensor::{center_columns, reshape_to_observations, ObservationMatrix, Shape4, Tensor4};

pub mod oracle;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelftestOptions {
    pub sharpen: SharpenMode,
    /// Perturbs the duplicate-image check so that it must fail.
    pub inject_fault: bool,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<37} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

type CheckFn = fn(&SelftestOptions) -> Result<(bool, String)>;

pub const CHECKS: &[(u8, &str, CheckFn)] = &[
    (1, "svd matches gram eigenvalues", check_svd_oracle),
    (2, "scores equal projection A''V", check_score_projection),
    (
        3,
        "duplicate images share maps",
        check_duplicate_consistency,
    ),
    (4, "batch permutation equivariance", check_permutation),
    (
        5,
        "global activation scale invariance",
        check_scale_invariance,
    ),
    (6, "per-step rescale neutrality", check_rescale_neutrality),
    (7, "rgb range and shape contract", check_range_contract),
    (
        8,
        "disjoint features get distinct colors",
        check_feature_separation,
    ),
    (9, "forward pass matches oracle", check_forward_oracle),
    (10, "format round-trips and determinism", check_formats),
    (11, "degenerate inputs render neutral", check_degenerate),
];

pub fn run_check(id: u8, options: &SelftestOptions) -> CheckReport {
    let &(id, name, check) = CHECKS
        .iter()
        .find(|(i, ..)| *i == id)
        .unwrap_or_else(|| panic!("no check with id {id}"));
    let (passed, detail) = match check(options) {
        Ok(outcome) => outcome,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckReport {
        id,
        name,
        passed,
        detail,
    }
}

pub fn run_all(options: &SelftestOptions) -> Vec<CheckReport> {
    CHECKS
        .iter()
        .map(|(id, ..)| run_check(*id, options))
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Shape4, lo: f32, hi: f32) -> Tensor4 {
    let data = (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor4::new(shape, data).expect("finite random data")
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> ObservationMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    ObservationMatrix::from_rows(rows, cols, data).expect("finite random data")
}

/// A random conv/relu/maxpool stack of at most `max_layers` layers that fits
/// an `h × w` input with `in_c` channels. The first layer is always a conv.
pub fn random_model(
    rng: &mut impl Rng,
    in_c: usize,
    h: usize,
    w: usize,
    max_layers: usize,
) -> Model {
    let (mut c, mut h, mut w) = (in_c, h, w);
    let mut specs = Vec::new();
    while specs.len() < max_layers {
        let choice = if specs.is_empty() {
            0
        } else {
            rng.gen_range(0..3)
        };
        match choice {
            0 => {
                let k = rng.gen_range(1..=3usize).min(h).min(w);
                let pad = rng.gen_range(0..=1usize);
                let stride = rng.gen_range(1..=2usize);
                let out_c = rng.gen_range(1..=6usize);
                let weights = random_tensor(rng, Shape4::new(out_c, c, k, k), -0.5, 0.5);
                let bias = (0..out_c).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
                specs.push(LayerSpec::Conv(
                    Conv2d::new(weights, bias, stride, pad).expect("consistent conv"),
                ));
                c = out_c;
                h = (h + 2 * pad - k) / stride + 1;
                w = (w + 2 * pad - k) / stride + 1;
            }
            1 => specs.push(LayerSpec::Relu),
            _ => {
                if h >= 2 && w >= 2 {
                    specs.push(LayerSpec::MaxPool {
                        window: 2,
                        stride: 2,
                    });
                    h = (h - 2) / 2 + 1;
                    w = (w - 2) / 2 + 1;
                }
            }
        }
    }
    Model::from_specs(specs)
}

fn record(model: &Model, input: &Tensor4) -> Result<ActivationStack> {
    let mut session = RecordingSession::new(model.clone());
    session.register();
    session.forward(input)?;
    Ok(session.stack().clone())
}

fn max_abs_diff(a: &Tensor4, b: &Tensor4) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

fn toy_batch(seed: u64) -> Tensor4 {
    random_tensor(&mut rng(seed), Shape4::new(4, 3, 16, 16), 0.0, 1.0)
}

fn options(opts: &SelftestOptions) -> PrismOptions {
    PrismOptions::default().with_sharpen(opts.sharpen)
}

fn check_svd_oracle(_: &SelftestOptions) -> Result<(bool, String)> {
    const REL_TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = rng(1);
    let (mut worst_eig, mut worst_rec, mut worst_orth) = (0.0f64, 0.0f64, 0.0f64);
    let mut ordered = true;
    for _ in 0..100 {
        let rows = rng.gen_range(1..=12usize);
        let cols = rng.gen_range(1..=8usize);
        let m = random_matrix(&mut rng, rows, cols);
        let d = svd(&m)?;
        let eig = oracle::symmetric_eigenvalues(&oracle::gram(m.data(), rows, cols), cols);
        let s = d.singular_values();
        ordered &= s.windows(2).all(|p| p[0] >= p[1]) && s.iter().all(|&v| v >= 0.0);
        for (k, &sigma) in s.iter().enumerate() {
            let err = (sigma * sigma - eig[k]).abs()
                / (eig[k].abs() + 1e-12 * eig[0]).max(f64::MIN_POSITIVE);
            worst_eig = worst_eig.max(err);
        }
        let norm = m.data().iter().fold(0.0f64, |a, &v| a.max(v.abs() as f64));
        let rec = d
            .reconstruct()
            .iter()
            .zip(m.data())
            .map(|(a, &b)| (a - b as f64).abs())
            .fold(0.0, f64::max);
        worst_rec = worst_rec.max(rec / norm.max(1.0));
        for a in 0..d.rank() {
            for b in 0..d.rank() {
                let delta = if a == b { 1.0 } else { 0.0 };
                let uu: f64 = (0..rows).map(|i| d.u(i, a) * d.u(i, b)).sum();
                let vv: f64 = (0..cols).map(|i| d.v(i, a) * d.v(i, b)).sum();
                worst_orth = worst_orth.max((uu - delta).abs()).max((vv - delta).abs());
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed =
        worst_eig <= REL_TOL && worst_rec <= 1e-4 && worst_orth <= 1e-4 && ordered && elapsed < 5.0;
    Ok((
        passed,
        format!(
            "eig rel err {worst_eig:.1e}, reconstruction {worst_rec:.1e}, orthonormality {worst_orth:.1e}, {elapsed:.2}s"
        ),
    ))
}

fn check_score_projection(_: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let rows = rng.gen_range(3..=40usize);
        let cols = rng.gen_range(1..=10usize);
        let (centered, _) = center_columns(&random_matrix(&mut rng, rows, cols));
        let maps = principal_scores(&centered, 3)?;
        let scores = reshape_to_observations(&maps.scores);
        let d = svd(&centered)?;
        for i in 0..rows {
            for j in 0..3 {
                let projected: f64 = if j < d.rank() {
                    (0..cols)
                        .map(|k| centered.get(i, k) as f64 * d.v(k, j))
                        .sum()
                } else {
                    0.0
                };
                worst = worst.max((scores.get(i, j) as f64 - projected).abs());
            }
        }
    }
    Ok((
        worst <= 1e-4,
        format!("max |US - A''V| = {worst:.1e} (tol 1e-4)"),
    ))
}

fn check_duplicate_consistency(opts: &SelftestOptions) -> Result<(bool, String)> {
    let batch = toy_batch(3);
    let mut images = (0..4)
        .map(|b| batch.select_batch(&[b]))
        .collect::<Result<Vec<_>>>()?;
    images[3] = images[1].clone();
    if opts.inject_fault {
        let mut data = images[3].clone().into_data();
        data[0] += 1e-3;
        images[3] = Tensor4::new(images[3].shape(), data)?;
    }
    let batch = Tensor4::concat_batch(&images)?;
    let maps = prism_maps(&record(&toy_model(3), &batch)?, 32, 32, &options(opts))?;
    let identical = maps.maps().image(1) == maps.maps().image(3);
    let differs_elsewhere = maps.maps().image(0) != maps.maps().image(1);
    Ok((
        identical && differs_elsewhere,
        format!(
            "maps 1 and 3 {}",
            if identical { "bit-identical" } else { "differ" }
        ),
    ))
}

fn check_permutation(opts: &SelftestOptions) -> Result<(bool, String)> {
    let batch = toy_batch(4);
    let model = toy_model(4);
    let order = [2, 0, 3, 1];
    let base = prism_maps(&record(&model, &batch)?, 24, 24, &options(opts))?;
    let permuted = prism_maps(
        &record(&model, &batch.select_batch(&order)?)?,
        24,
        24,
        &options(opts),
    )?;
    let expected = base.maps().select_batch(&order)?;
    let err = max_abs_diff(permuted.maps(), &expected);
    Ok((err <= 1e-4, format!("max deviation {err:.1e} (tol 1e-4)")))
}

fn check_scale_invariance(opts: &SelftestOptions) -> Result<(bool, String)> {
    let stack = record(&toy_model(5), &toy_batch(5))?;
    let base = prism_maps(&stack, 16, 16, &options(opts))?;
    let mut worst = 0.0f32;
    for lambda in [0.01f32, 3.7, 250.0] {
        let scaled = stack.map_tensors(|t| t.scale(lambda))?;
        let maps = prism_maps(&scaled, 16, 16, &options(opts))?;
        worst = worst.max(max_abs_diff(maps.maps(), base.maps()));
    }
    Ok((
        worst <= 1e-4,
        format!("max deviation {worst:.1e} over λ ∈ {{0.01, 3.7, 250}}"),
    ))
}

fn check_rescale_neutrality(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f32;
    let mut rng = rng(6);
    let deep = random_model(&mut rng, 3, 16, 16, 4);
    for (model, batch) in [(toy_model(6), toy_batch(6)), (deep, toy_batch(60))] {
        let stack = record(&model, &batch)?;
        let with = prism_maps(&stack, 20, 20, &options(opts))?;
        let without = prism_maps(
            &stack,
            20,
            20,
            &PrismOptions {
                rescale_each_step: false,
                ..options(opts)
            },
        )?;
        worst = worst.max(max_abs_diff(with.maps(), without.maps()));
    }
    Ok((
        worst <= 1e-4,
        format!("max deviation {worst:.1e} (tol 1e-4)"),
    ))
}

fn in_contract(maps: &RgbMapBatch, n: usize, h: usize, w: usize) -> bool {
    maps.maps().shape() == Shape4::new(n, 3, h, w)
        && maps.maps().data().iter().all(|v| (0.0..=1.0).contains(v))
}

fn check_range_contract(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(7);
    let mut failures = 0;
    for _ in 0..20 {
        let n = rng.gen_range(1..=4usize);
        let size = rng.gen_range(6..=20usize);
        let depth = rng.gen_range(1..=4);
        let model = random_model(&mut rng, 3, size, size, depth);
        let batch = random_tensor(&mut rng, Shape4::new(n, 3, size, size), -1.0, 1.0);
        let (h, w) = (rng.gen_range(1..=40usize), rng.gen_range(1..=40usize));
        let stack = record(&model, &batch)?;
        let maps = prism_maps(&stack, h, w, &options(opts))?;
        if !in_contract(&maps, n, h, w) {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        format!("{failures}/20 configurations out of contract"),
    ))
}

/// Two 4×4 blobs in an 8×8 map: the top-left one lights channels 0 and 1,
/// the bottom-right one channels 2 and 3, everything else is zero.
pub fn two_blob_activations() -> Tensor4 {
    Tensor4::from_fn(Shape4::new(1, 4, 8, 8), |_, ch, y, x| {
        let blob_a = y < 4 && x < 4;
        let blob_b = y >= 4 && x >= 4;
        if (blob_a && ch < 2) || (blob_b && ch >= 2) {
            1.0
        } else {
            0.0
        }
    })
    .expect("finite")
}

fn region_mean(
    maps: &RgbMapBatch,
    ys: std::ops::Range<usize>,
    xs: std::ops::Range<usize>,
) -> [f64; 3] {
    let count = (ys.len() * xs.len()) as f64;
    let mut out = [0.0; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        for y in ys.clone() {
            for x in xs.clone() {
                *o += maps.maps().get(0, ch, y, x) as f64;
            }
        }
        *o /= count;
    }
    out
}

fn check_feature_separation(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut stack = ActivationStack::new();
    stack.push("blobs", two_blob_activations())?;
    let maps = prism_maps(&stack, 32, 32, &options(opts))?;
    let a = region_mean(&maps, 0..16, 0..16);
    let b = region_mean(&maps, 16..32, 16..32);
    let dist = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok((
        dist >= 0.3,
        format!(
            "blob colors ({:.2}, {:.2}, {:.2}) vs ({:.2}, {:.2}, {:.2}), L∞ {dist:.2} (min 0.3)",
            a[0], a[1], a[2], b[0], b[1], b[2]
        ),
    ))
}

fn check_forward_oracle(_: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(9);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let n = rng.gen_range(1..=2usize);
        let c = rng.gen_range(1..=3usize);
        let (h, w) = (rng.gen_range(4..=16usize), rng.gen_range(4..=16usize));
        let depth = rng.gen_range(1..=4);
        let model = random_model(&mut rng, c, h, w, depth);
        let input = random_tensor(&mut rng, Shape4::new(n, c, h, w), -1.0, 1.0);
        let (out, recorded) = model.forward_recorded(&input)?;
        let (ref_out, ref_recorded) = oracle::forward(&model, &input);
        worst = worst.max(ref_out.max_abs_diff(&out));
        for ((_, got), want) in recorded.iter().zip(&ref_recorded) {
            worst = worst.max(want.max_abs_diff(got));
        }
        if recorded.len() != ref_recorded.len() {
            return Ok((false, "recorded layer count differs from oracle".into()));
        }
    }
    Ok((
        worst <= 1e-4,
        format!("max deviation {worst:.1e} over 25 models (tol 1e-4)"),
    ))
}

fn check_formats(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut rng = rng(10);
    let mut npy_exact = true;
    for _ in 0..10 {
        let shape = Shape4::new(
            rng.gen_range(1..4),
            rng.gen_range(1..5),
            rng.gen_range(1..9),
            rng.gen_range(1..9),
        );
        let t = random_tensor(&mut rng, shape, -1e3, 1e3);
        let bytes = write_npy(&t);
        let back = read_npy(&bytes)?.into_tensor();
        npy_exact &= back.as_ref() == Some(&t) && write_npy(&t) == bytes;
    }

    let rgb = random_tensor(&mut rng, Shape4::new(1, 3, 7, 5), 0.0, 1.0);
    let decoded = read_image_ppm(&encode_ppm(&rgb, 0)?)?;
    let ppm_err = max_abs_diff(&decoded, &rgb);

    let batch = toy_batch(10);
    let render = || -> Result<Vec<u8>> {
        let maps = prism_maps(&record(&toy_model(10), &batch)?, 16, 16, &options(opts))?;
        let mut bytes = write_npy(maps.maps());
        for i in 0..maps.len() {
            bytes.extend(encode_ppm(maps.maps(), i)?);
        }
        Ok(bytes)
    };
    let deterministic = render()? == render()?;

    let passed = npy_exact && ppm_err <= 0.5 / 255.0 + 1e-7 && deterministic;
    Ok((
        passed,
        format!(
            "npy exact: {npy_exact}, ppm max err {:.3}/255, deterministic: {deterministic}",
            ppm_err * 255.0
        ),
    ))
}

fn check_degenerate(opts: &SelftestOptions) -> Result<(bool, String)> {
    let mut constant = ActivationStack::new();
    constant.push("shallow", Tensor4::filled(Shape4::new(3, 4, 8, 8), 0.3))?;
    constant.push("deep", Tensor4::filled(Shape4::new(3, 6, 4, 4), 1.7))?;
    let gray = prism_maps(&constant, 8, 8, &options(opts))?;
    let all_gray = gray.maps().data().iter().all(|&v| v == 0.5);

    let mut rng = rng(11);
    let mut two_channel = ActivationStack::new();
    two_channel.push(
        "deep",
        random_tensor(&mut rng, Shape4::new(2, 2, 5, 5), 0.0, 1.0),
    )?;
    let maps = prism_maps(&two_channel, 10, 10, &options(opts))?;
    let blue_gray = (0..2).all(|b| maps.maps().plane(b, 2).iter().all(|&v| v == 0.5));
    let red_varies = maps.maps().plane(0, 0).iter().any(|&v| v != 0.5);

    Ok((
        all_gray && blue_gray && red_varies,
        format!("constant batch uniform gray: {all_gray}, c=2 blue channel gray: {blue_gray}"),
    ))
}
