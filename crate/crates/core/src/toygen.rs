//! Synthetic toy data: blurred spheres with nested raters (aleatoric
//! ambiguity) and shape, intensity and position shifts (epistemic
//! uncertainty), organized into the four benchmark scenarios.
//!
//! Generation is rank-generic: `rank = 3` gives volumes, `rank = 2` disks
//! in images. "Size" is volume (area in 2D), so rater radii scale with the
//! `1/rank` power of their size fraction.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng;
use crate::types::{string_enum, CaseRecord, RaterSet, Role, Shape, Split};

/// Size of raters 1, 2 and 3 relative to rater 3.
pub const RATER_SIZE_FRACTIONS: [f64; 3] = [0.10, 0.55, 1.0];

/// Generation defaults. Intensity ranges for training and intensity-shifted
/// cases do not overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyParams {
    pub rank: usize,
    pub volume_edge: usize,
    pub radius_range: (f64, f64),
    pub blur_range: (f64, f64),
    pub background_noise_sd: f64,
    pub train_intensity: (f64, f64),
    pub shifted_intensity: (f64, f64),
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            rank: 3,
            volume_edge: 48,
            radius_range: (6.0, 12.0),
            blur_range: (1.5, 3.0),
            background_noise_sd: 0.05,
            train_intensity: (0.5, 0.9),
            shifted_intensity: (0.1, 0.3),
        }
    }
}

impl ToyParams {
    pub fn shape(&self) -> Result<Shape> {
        Shape::cube(self.volume_edge, self.rank)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        let (lo, hi) = self.radius_range;
        if !(lo >= 3.0 && hi >= lo) {
            return Err(Error::ConfigInvalid(format!("radius range {lo}..{hi} must start at >= 3")));
        }
        if 2.0 * hi + 3.0 > self.volume_edge as f64 {
            return Err(Error::ConfigInvalid(format!(
                "volume edge {} too small for radius {hi}",
                self.volume_edge
            )));
        }
        Ok(())
    }
}

string_enum!(
    ToyObject {
        Sphere => "SPHERE",
        Cube => "CUBE",
    }
);

string_enum!(
    Shift {
        ShapeShift => "SHAPE",
        Intensity => "INTENSITY",
        Position => "POSITION",
    }
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCaseSpec {
    pub object: ToyObject,
    /// Radius of the largest rater's sphere, in voxels.
    pub radius: f64,
    pub center: Vec<f64>,
    pub intensity: f64,
    pub blur_sigma: f64,
    pub background_noise_sd: f64,
    pub ood: bool,
}

/// Generated image plus its reference masks (label 1 = object).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCase {
    pub shape: Shape,
    pub image: Vec<f64>,
    pub raters: RaterSet,
}

fn ball_volume_factor(rank: usize) -> f64 {
    match rank {
        2 => std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI / 3.0,
    }
}

/// Edge of the cube with the same volume (area in 2D) as a ball of `radius`.
pub fn equal_volume_cube_edge(radius: f64, rank: usize) -> f64 {
    (ball_volume_factor(rank) * radius.powi(rank as i32)).powf(1.0 / rank as f64)
}

/// Radii of the three nested raters for an outer radius.
pub fn rater_radii(radius: f64, rank: usize) -> [f64; 3] {
    RATER_SIZE_FRACTIONS.map(|f| radius * f.powf(1.0 / rank as f64))
}

fn coords(shape: &Shape, flat: usize) -> [f64; 3] {
    shape.unravel(flat).map(|i| i as f64)
}

fn ball_mask(shape: &Shape, center: &[f64], radius: f64) -> Vec<u8> {
    let r2 = radius * radius;
    (0..shape.len())
        .map(|v| {
            let x = coords(shape, v);
            let d2: f64 = center.iter().enumerate().map(|(k, c)| (x[k] - c).powi(2)).sum();
            u8::from(d2 <= r2)
        })
        .collect()
}

fn cube_mask(shape: &Shape, center: &[f64], edge: f64) -> Vec<u8> {
    let half = edge / 2.0;
    (0..shape.len())
        .map(|v| {
            let x = coords(shape, v);
            u8::from(center.iter().enumerate().all(|(k, c)| (x[k] - c).abs() <= half))
        })
        .collect()
}

/// Separable Gaussian blur with zero padding, kernel truncated at 3 sigma.
pub fn gaussian_blur(shape: &Shape, data: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let half = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-half..=half).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= norm);

    let dims = shape.dims();
    let mut buf = data.to_vec();
    for axis in 0..dims.len() {
        let n = dims[axis] as isize;
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let mut out = vec![0.0; buf.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: isize| (o * n as usize + k as usize) * inner + i;
                for k in 0..n {
                    let mut acc = 0.0;
                    for (t, w) in kernel.iter().enumerate() {
                        let src = k + t as isize - half;
                        if (0..n).contains(&src) {
                            acc += w * buf[at(src)];
                        }
                    }
                    out[at(k)] = acc;
                }
            }
        }
        buf = out;
    }
    buf
}

fn check_spec(spec: &ToyCaseSpec, shape: &Shape, allow_truncation: bool) -> Result<()> {
    if spec.center.len() != shape.rank() {
        return Err(Error::ShapeMismatch(format!(
            "center has {} coordinates for a rank-{} volume",
            spec.center.len(),
            shape.rank()
        )));
    }
    if spec.radius < 3.0 {
        return Err(Error::ConfigInvalid(format!("radius {} below 3 voxels", spec.radius)));
    }
    if spec.blur_sigma < 0.0 {
        return Err(Error::ConfigInvalid("negative blur sigma".into()));
    }
    if allow_truncation {
        return Ok(());
    }
    let extent = match spec.object {
        ToyObject::Sphere => spec.radius,
        ToyObject::Cube => equal_volume_cube_edge(spec.radius, shape.rank()) / 2.0,
    };
    for (k, (&c, &n)) in spec.center.iter().zip(shape.dims()).enumerate() {
        if c - extent < 0.0 || c + extent > (n - 1) as f64 {
            return Err(Error::ObjectOutOfBounds(format!(
                "axis {k}: center {c:.2} with extent {extent:.2} leaves [0, {}]",
                n - 1
            )));
        }
    }
    Ok(())
}

fn add_noise(image: &mut [f64], sd: f64, seed: u64) {
    if sd <= 0.0 {
        return;
    }
    let mut r = rng::stream(seed, "background-noise", 0);
    let normal = Normal::new(0.0, sd).expect("finite sd");
    for v in image.iter_mut() {
        *v = (*v + normal.sample(&mut r)).clamp(0.0, 1.0);
    }
}

/// Sphere case with three nested raters.
///
/// With `blur_sigma > 0` the sphere border is blurred outward and the raters
/// segment 10 %, 55 % and 100 % of the outer sphere's size. With
/// `blur_sigma == 0` the image is crisp and all raters agree.
pub fn generate_toy_case(spec: &ToyCaseSpec, volume_edge: usize, seed: u64) -> Result<ToyCase> {
    let rank = spec.center.len();
    let shape = Shape::cube(volume_edge, rank)?;
    if spec.object != ToyObject::Sphere {
        return Err(Error::ConfigInvalid("toy cases with raters are spheres".into()));
    }
    check_spec(spec, &shape, false)?;
    let (mut image, raters): (Vec<f64>, _) = if spec.blur_sigma > 0.0 {
        let radii = rater_radii(spec.radius, rank);
        let masks: Vec<Vec<u8>> = radii.iter().map(|&r| ball_mask(&shape, &spec.center, r)).collect();
        let mid: Vec<f64> = masks[1].iter().map(|&m| f64::from(m) * spec.intensity).collect();
        let blurred = gaussian_blur(&shape, &mid, spec.blur_sigma);
        let image = blurred
            .iter()
            .zip(&masks[0])
            .map(|(&b, &core)| if core == 1 { spec.intensity } else { b })
            .collect();
        (image, masks)
    } else {
        let mask = ball_mask(&shape, &spec.center, spec.radius);
        let image = mask.iter().map(|&m| f64::from(m) * spec.intensity).collect();
        (image, vec![mask; 3])
    };
    add_noise(&mut image, spec.background_noise_sd, seed);
    Ok(ToyCase { raters: RaterSet::new(shape.clone(), raters)?, shape, image })
}

/// Shifted case with a single crisp reference. `shift = None` reproduces the
/// crisp i.i.d. case.
pub fn generate_shift_case(
    base: &ToyCaseSpec,
    shift: Option<Shift>,
    params: &ToyParams,
    seed: u64,
) -> Result<ToyCase> {
    let shape = params.shape()?;
    let mut spec = base.clone();
    spec.blur_sigma = 0.0;
    let mut r = rng::stream(seed, "shift", 0);
    match shift {
        None => {}
        Some(Shift::ShapeShift) => spec.object = ToyObject::Cube,
        Some(Shift::Intensity) => {
            let (lo, hi) = params.shifted_intensity;
            spec.intensity = r.random_range(lo..=hi);
        }
        Some(Shift::Position) => {
            // center within 0.4 r of the low face of axis 0, so part of the
            // sphere always leaves the frame
            spec.center[0] = r.random_range(-0.4 * spec.radius..=0.4 * spec.radius);
        }
    }
    spec.ood = shift.is_some();
    check_spec(&spec, &shape, shift == Some(Shift::Position))?;
    let mask = match spec.object {
        ToyObject::Sphere => ball_mask(&shape, &spec.center, spec.radius),
        ToyObject::Cube => cube_mask(&shape, &spec.center, equal_volume_cube_edge(spec.radius, shape.rank())),
    };
    let mut image: Vec<f64> = mask.iter().map(|&m| f64::from(m) * spec.intensity).collect();
    add_noise(&mut image, spec.background_noise_sd, seed);
    Ok(ToyCase { raters: RaterSet::new(shape.clone(), vec![mask])?, shape, image })
}

string_enum!(
    ScenarioId {
        S1 => "S1",
        S2 => "S2",
        S3a => "S3A",
        S3b => "S3B",
    }
);

/// Case counts of a scenario; blurred counts are subsets of their totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyScenario {
    pub id: ScenarioId,
    pub n_train: usize,
    pub n_train_blur: usize,
    pub n_test_iid: usize,
    pub n_test_iid_blur: usize,
    pub n_test_ood: usize,
}

impl ToyScenario {
    pub fn new(id: ScenarioId) -> Self {
        let (n_train, n_train_blur, n_test_iid, n_test_iid_blur, n_test_ood) = match id {
            ScenarioId::S1 => (200, 200, 20, 20, 0),
            ScenarioId::S2 => (200, 0, 21, 0, 21),
            ScenarioId::S3a => (200, 100, 21, 0, 21),
            ScenarioId::S3b => (200, 100, 42, 21, 21),
        };
        ToyScenario { id, n_train, n_train_blur, n_test_iid, n_test_iid_blur, n_test_ood }
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_test_iid + self.n_test_ood
    }
}

/// A manifest entry that can be turned into an image and raters on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCaseStub {
    pub case_id: String,
    pub split: Split,
    pub role: Role,
    pub spec: ToyCaseSpec,
    pub shift: Option<Shift>,
    pub seed: u64,
    pub scenario_tags: Vec<String>,
}

impl ToyCaseStub {
    pub fn materialize(&self, params: &ToyParams) -> Result<ToyCase> {
        if self.shift.is_some() || self.spec.object == ToyObject::Cube {
            generate_shift_case(&self.spec, self.shift, params, self.seed)
        } else {
            generate_toy_case(&self.spec, params.volume_edge, self.seed)
        }
    }

    /// Case record without a prediction stack.
    pub fn to_case_record(&self, params: &ToyParams) -> Result<CaseRecord> {
        let case = self.materialize(params)?;
        Ok(CaseRecord {
            case_id: self.case_id.clone(),
            split: self.split,
            role: self.role,
            stack: None,
            raters: case.raters,
            scenario_tags: self.scenario_tags.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub scenario: ToyScenario,
    pub master_seed: u64,
    pub params: ToyParams,
    pub cases: Vec<ToyCaseStub>,
}

impl ScenarioManifest {
    pub fn count(&self, role: Role, split: Split) -> usize {
        self.cases.iter().filter(|c| c.role == role && c.split == split).count()
    }

    /// Case records (raters, no stacks) for the cases selected by `keep`,
    /// in manifest order.
    pub fn records(&self, keep: impl Fn(&ToyCaseStub) -> bool) -> Result<Vec<CaseRecord>> {
        let picked: Vec<&ToyCaseStub> = self.cases.iter().filter(|c| keep(c)).collect();
        parallel::try_map(&picked, |c| c.to_case_record(&self.params))
    }

    /// Every non-training case plus the first `train_cases` training cases.
    pub fn study_records(&self, train_cases: usize) -> Result<Vec<CaseRecord>> {
        let first_train: Vec<&str> =
            self.cases.iter().filter(|c| c.role == Role::Train).take(train_cases).map(|c| c.case_id.as_str()).collect();
        self.records(|c| c.role != Role::Train || first_train.contains(&c.case_id.as_str()))
    }

    pub fn count_blurred(&self, role: Role, split: Split) -> usize {
        self.cases
            .iter()
            .filter(|c| c.role == role && c.split == split && c.spec.blur_sigma > 0.0)
            .count()
    }
}

const SHIFT_CYCLE: [Shift; 3] = [Shift::ShapeShift, Shift::Intensity, Shift::Position];

fn sample_spec(params: &ToyParams, blurred: bool, master_seed: u64, index: u64) -> ToyCaseSpec {
    let mut r = rng::stream(master_seed, "toy-spec", index);
    let radius = r.random_range(params.radius_range.0..=params.radius_range.1);
    let hi = (params.volume_edge - 1) as f64 - radius - 1.0;
    let lo = radius + 1.0;
    let center = (0..params.rank).map(|_| r.random_range(lo..=hi.max(lo))).collect();
    let intensity = r.random_range(params.train_intensity.0..=params.train_intensity.1);
    let blur_sigma = if blurred { r.random_range(params.blur_range.0..=params.blur_range.1) } else { 0.0 };
    ToyCaseSpec {
        object: ToyObject::Sphere,
        radius,
        center,
        intensity,
        blur_sigma,
        background_noise_sd: params.background_noise_sd,
        ood: false,
    }
}

/// Deterministic case list for a scenario. Training cases come first,
/// then i.i.d. test cases, then shifted test cases cycling through shape,
/// intensity and position shifts.
pub fn build_scenario(scenario: ToyScenario, master_seed: u64, params: &ToyParams) -> Result<ScenarioManifest> {
    params.validate()?;
    let tag = scenario.id.as_str().to_ascii_lowercase();
    let mut cases = Vec::with_capacity(scenario.total());
    let mut index = 0u64;
    let mut push = |cases: &mut Vec<ToyCaseStub>, role: Role, split: Split, k: usize, blurred: bool, shift: Option<Shift>| {
        let spec = sample_spec(params, blurred, master_seed, index);
        let role_tag = role.as_str().to_ascii_lowercase();
        let split_tag = split.as_str().to_ascii_lowercase();
        let mut tags = vec![scenario.id.as_str().to_string(), if blurred { "blur" } else { "crisp" }.to_string()];
        if let Some(s) = shift {
            tags.push(format!("shift:{s}"));
        }
        cases.push(ToyCaseStub {
            case_id: format!("{tag}-{role_tag}-{split_tag}-{k:03}"),
            split,
            role,
            spec,
            shift,
            seed: rng::derive_seed(master_seed, "toy-case", index),
            scenario_tags: tags,
        });
        index += 1;
    };
    for k in 0..scenario.n_train {
        push(&mut cases, Role::Train, Split::Iid, k, k < scenario.n_train_blur, None);
    }
    for k in 0..scenario.n_test_iid {
        push(&mut cases, Role::Test, Split::Iid, k, k < scenario.n_test_iid_blur, None);
    }
    for k in 0..scenario.n_test_ood {
        push(&mut cases, Role::Test, Split::Ood, k, false, Some(SHIFT_CYCLE[k % 3]));
    }
    Ok(ScenarioManifest { scenario, master_seed, params: params.clone(), cases })
}

/// Appends validation cases (training distribution) and an unlabeled pool
/// (half i.i.d., half shifted) for threshold fitting, Platt scaling and
/// active-learning queries. Blur in validation and i.i.d. pool cases follows
/// the scenario's training blur fraction.
pub fn attach_eval_splits(manifest: &mut ScenarioManifest, n_val: usize, n_pool: usize) {
    let sc = manifest.scenario;
    let blur_every = |k: usize| -> bool {
        match (sc.n_train_blur, sc.n_train) {
            (0, _) => false,
            (b, t) if b == t => true,
            _ => k.is_multiple_of(2),
        }
    };
    let seed = manifest.master_seed;
    let params = manifest.params.clone();
    let tag = sc.id.as_str().to_ascii_lowercase();
    let mut index = 1_000_000u64;
    for k in 0..n_val {
        let blurred = blur_every(k);
        manifest.cases.push(ToyCaseStub {
            case_id: format!("{tag}-val-iid-{k:03}"),
            split: Split::Iid,
            role: Role::Val,
            spec: sample_spec(&params, blurred, seed, index),
            shift: None,
            seed: rng::derive_seed(seed, "toy-case", index),
            scenario_tags: vec![sc.id.as_str().into(), if blurred { "blur" } else { "crisp" }.into()],
        });
        index += 1;
    }
    for k in 0..n_pool {
        let ood = k % 2 == 1;
        let blurred = !ood && blur_every(k / 2);
        let shift = ood.then(|| SHIFT_CYCLE[(k / 2) % 3]);
        let mut tags = vec![sc.id.as_str().to_string(), if blurred { "blur" } else { "crisp" }.to_string()];
        if let Some(s) = shift {
            tags.push(format!("shift:{s}"));
        }
        manifest.cases.push(ToyCaseStub {
            case_id: format!("{tag}-pool-{}-{k:03}", if ood { "ood" } else { "iid" }),
            split: if ood { Split::Ood } else { Split::Iid },
            role: Role::Pool,
            spec: sample_spec(&params, blurred, seed, index),
            shift,
            seed: rng::derive_seed(seed, "toy-case", index),
            scenario_tags: tags,
        });
        index += 1;
    }
}

/// Flips whole structures: for each `(class, class2)` pair whose `class`
/// occurs in the map, with probability `p` every pixel of `class` becomes
/// `class2`. Membership is decided on the input map, so flips do not chain.
pub fn induce_label_ambiguity(
    label_map: &[u8],
    flip_pairs: &[(u8, u8)],
    p: f64,
    classes: usize,
    seed: u64,
) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ConfigInvalid(format!("flip probability {p} outside [0, 1]")));
    }
    for &(a, b) in flip_pairs {
        for c in [a, b] {
            if c as usize >= classes {
                return Err(Error::UnknownClass { class: c as usize, classes });
            }
        }
    }
    let mut r = rng::stream(seed, "label-flip", 0);
    let mut out = label_map.to_vec();
    for &(from, to) in flip_pairs {
        let present = label_map.contains(&from);
        let flip = r.random_bool(p);
        if present && flip {
            for (o, &l) in out.iter_mut().zip(label_map) {
                if l == from {
                    *o = to;
                }
            }
        }
    }
    Ok(out)
}
