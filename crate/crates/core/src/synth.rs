//! Procedural "person-like" scenes: axis-aligned textured parts over a
//! background, moved by an analytic motion, with ground-truth backward flow,
//! geometric occlusion, part masks and boundary-skeleton pose rasters.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Shape4, Tensor4};

/// Number of semantic parts, background included.
pub const NUM_PARTS: usize = 4;
/// Number of pyramid scales.
pub const NUM_SCALES: usize = 3;
pub const MAX_ROTATION_DEG: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Background,
    Top,
    Pants,
    Hair,
}

impl Part {
    pub const ALL: [Part; NUM_PARTS] = [Part::Background, Part::Top, Part::Pants, Part::Hair];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Background => "background",
            Part::Top => "top",
            Part::Pants => "pants",
            Part::Hair => "hair",
        }
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Part::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown part `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TextureKind {
    Solid,
    Stripes,
    Checker,
}

impl TextureKind {
    pub fn name(self) -> &'static str {
        match self {
            TextureKind::Solid => "solid",
            TextureKind::Stripes => "stripes",
            TextureKind::Checker => "checker",
        }
    }
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solid" => Ok(TextureKind::Solid),
            "stripes" => Ok(TextureKind::Stripes),
            "checker" => Ok(TextureKind::Checker),
            _ => Err(Error::Config(alloc::format!("unknown texture `{s}`"))),
        }
    }
}

/// Analytic motion. Flows are backward: each target pixel `p` reads the
/// source at `A (p − c) + c + t`, `c` the frame center, coordinates `(y, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Identity,
    Translate {
        dy: f64,
        dx: f64,
    },
    /// Rotation about the frame center, in degrees.
    Rotate {
        degrees: f64,
    },
    Affine {
        a: [[f64; 2]; 2],
        t: [f64; 2],
    },
}

impl Motion {
    pub fn kind(&self) -> &'static str {
        match self {
            Motion::Identity => "identity",
            Motion::Translate { .. } => "translate",
            Motion::Rotate { .. } => "rotate",
            Motion::Affine { .. } => "affine",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Motion::Rotate { degrees } if !(degrees.abs() <= MAX_ROTATION_DEG) => {
                Err(Error::Config(alloc::format!(
                    "rotation {degrees}° exceeds ±{MAX_ROTATION_DEG}°"
                )))
            }
            Motion::Affine { a, .. } => {
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                if det.abs() < 1e-9 || !det.is_finite() {
                    Err(Error::Config(alloc::format!(
                        "singular affine matrix (det {det})"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Matrix and translation form.
    pub fn affine_parts(&self) -> ([[f64; 2]; 2], [f64; 2]) {
        match *self {
            Motion::Identity => ([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
            Motion::Translate { dy, dx } => ([[1.0, 0.0], [0.0, 1.0]], [dy, dx]),
            Motion::Rotate { degrees } => (rotation(degrees), [0.0, 0.0]),
            Motion::Affine { a, t } => (a, t),
        }
    }

    /// The motion mapping source pixels back to target locations.
    pub fn inverse(&self) -> Result<Motion> {
        self.validate()?;
        Ok(match *self {
            Motion::Identity => Motion::Identity,
            Motion::Translate { dy, dx } => Motion::Translate { dy: -dy, dx: -dx },
            Motion::Rotate { degrees } => Motion::Rotate { degrees: -degrees },
            Motion::Affine { a, t } => {
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                let inv = [
                    [a[1][1] / det, -a[0][1] / det],
                    [-a[1][0] / det, a[0][0] / det],
                ];
                let ti = [
                    -(inv[0][0] * t[0] + inv[0][1] * t[1]),
                    -(inv[1][0] * t[0] + inv[1][1] * t[1]),
                ];
                Motion::Affine { a: inv, t: ti }
            }
        })
    }

    /// Rotation of up to `max_deg` composed with a shift of up to
    /// `max_shift` pixels per axis.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_shift: f64, max_deg: f64) -> Motion {
        let deg = if max_deg > 0.0 {
            rng.random_range(-max_deg..max_deg)
        } else {
            0.0
        };
        let (dy, dx) = if max_shift > 0.0 {
            (
                rng.random_range(-max_shift..max_shift),
                rng.random_range(-max_shift..max_shift),
            )
        } else {
            (0.0, 0.0)
        };
        Motion::Affine {
            a: rotation(deg),
            t: [dy, dx],
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Motion::Identity => write!(f, "identity"),
            Motion::Translate { dy, dx } => write!(f, "translate({dy},{dx})"),
            Motion::Rotate { degrees } => write!(f, "rotate({degrees})"),
            Motion::Affine { a, t } => write!(
                f,
                "affine({},{},{},{},{},{})",
                a[0][0], a[0][1], a[1][0], a[1][1], t[0], t[1]
            ),
        }
    }
}

impl FromStr for Motion {
    type Err = Error;

    /// Parses the [`fmt::Display`] form, e.g. `translate(3,-2)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "identity" {
            return Ok(Motion::Identity);
        }
        let bad = || Error::Config(alloc::format!("cannot parse motion `{s}`"));
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<f64> = inner
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let m = match (&s[..open], args.as_slice()) {
            ("translate", [dy, dx]) => Motion::Translate { dy: *dy, dx: *dx },
            ("rotate", [d]) => Motion::Rotate { degrees: *d },
            ("affine", [a, b, c, d, ty, tx]) => Motion::Affine {
                a: [[*a, *b], [*c, *d]],
                t: [*ty, *tx],
            },
            _ => return Err(bad()),
        };
        m.validate()?;
        Ok(m)
    }
}

fn rotation(degrees: f64) -> [[f64; 2]; 2] {
    let r = degrees * core::f64::consts::PI / 180.0;
    let (s, c) = (libm::sin(r), libm::cos(r));
    [[c, -s], [s, c]]
}

/// Backward displacement field `(1, 2, H, W)`: source location minus the
/// target pixel's own coordinates, channels (dy, dx).
pub fn gen_flow(motion: &Motion, h: usize, w: usize) -> Result<Tensor4> {
    motion.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::Config("empty flow grid".into()));
    }
    let (a, t) = motion.affine_parts();
    let cy = (h - 1) as f64 / 2.0;
    let cx = (w - 1) as f64 / 2.0;
    let mut flow = Tensor4::zeros(Shape4::new(1, 2, h, w));
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 - cy, x as f64 - cx);
            let sy = a[0][0] * py + a[0][1] * px + cy + t[0];
            let sx = a[1][0] * py + a[1][1] * px + cx + t[1];
            flow.set(0, 0, y, x, sy - y as f64);
            flow.set(0, 1, y, x, sx - x as f64);
        }
    }
    // Exact zeros for pure translations regardless of rounding above.
    if let Motion::Identity | Motion::Translate { .. } = motion {
        let (dy, dx) = (t[0], t[1]);
        for v in flow.plane_mut(0, 0) {
            *v = dy;
        }
        for v in flow.plane_mut(0, 1) {
            *v = dx;
        }
    }
    Ok(flow)
}

/// 1 where the flow reads inside the frame, ramping linearly to 0 over a
/// one-pixel band outside it.
pub fn derive_occlusion(flow: &Tensor4) -> Result<Tensor4> {
    let s = flow.shape();
    if s.c != 2 {
        return Err(Error::shape(
            "derive_occlusion",
            alloc::format!("flow must have 2 channels, got {s}"),
        ));
    }
    let (hmax, wmax) = ((s.h - 1) as f64, (s.w - 1) as f64);
    let mut m = Tensor4::zeros(s.with_c(1));
    for b in 0..s.b {
        for y in 0..s.h {
            for x in 0..s.w {
                let sy = y as f64 + flow.at(b, 0, y, x);
                let sx = x as f64 + flow.at(b, 1, y, x);
                let out_y = (-sy).max(sy - hmax).max(0.0);
                let out_x = (-sx).max(sx - wmax).max(0.0);
                m.set(b, 0, y, x, (1.0 - out_y.max(out_x)).clamp(0.0, 1.0));
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLevel {
    pub flow: Tensor4,
    pub occ: Tensor4,
}

/// Level 0 is full resolution; each further level halves both the grid and
/// the displacement magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPyramid {
    pub levels: Vec<FlowLevel>,
}

impl FlowPyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn check_divisible(op: &'static str, s: Shape4, scales: usize) -> Result<()> {
    let d = 1usize << (scales.max(1) - 1);
    if scales == 0 || !s.h.is_multiple_of(d) || !s.w.is_multiple_of(d) {
        return Err(Error::shape(
            op,
            alloc::format!("{s} not divisible by 2^{}", scales.saturating_sub(1)),
        ));
    }
    Ok(())
}

pub fn flow_pyramid(flow: &Tensor4, occ: &Tensor4, scales: usize) -> Result<FlowPyramid> {
    check_divisible("flow_pyramid", flow.shape(), scales)?;
    tensor::ensure_same("flow_pyramid", flow.shape().with_c(1), occ.shape())?;
    let mut levels = vec![FlowLevel {
        flow: flow.clone(),
        occ: occ.clone(),
    }];
    for k in 1..scales {
        let prev = &levels[k - 1];
        let flow = tensor::scale(&tensor::avgpool2x(&prev.flow)?, 0.5);
        let occ = tensor::avgpool2x(&prev.occ)?;
        levels.push(FlowLevel { flow, occ });
    }
    Ok(FlowPyramid { levels })
}

/// Binary masks at every scale: 2×2 mean pooling thresholded at one half.
pub fn mask_pyramid(mask: &Tensor4, scales: usize) -> Result<Vec<Tensor4>> {
    check_divisible("mask_pyramid", mask.shape(), scales)?;
    let mut out = vec![mask.clone()];
    let mut cur = mask.clone();
    for _ in 1..scales {
        cur = tensor::avgpool2x(&cur)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        out.push(cur.clone());
    }
    Ok(out)
}

/// One binary `(1, 1, H, W)` mask per part, indexed by [`Part::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub masks: Vec<Tensor4>,
    pub labels: Vec<Part>,
}

impl RegionMasks {
    fn from_labels(labels: &[u8], h: usize, w: usize) -> Self {
        let masks = Part::ALL
            .iter()
            .map(|p| {
                let data = labels
                    .iter()
                    .map(|&l| if l as usize == p.index() { 1.0 } else { 0.0 })
                    .collect();
                Tensor4::from_raw(Shape4::new(1, 1, h, w), data)
            })
            .collect();
        RegionMasks {
            masks,
            labels: Part::ALL.to_vec(),
        }
    }

    pub fn mask(&self, part: Part) -> &Tensor4 {
        &self.masks[part.index()]
    }

    /// Masks are binary and sum to exactly one at every pixel.
    pub fn is_partition(&self) -> bool {
        let Some(first) = self.masks.first() else {
            return false;
        };
        let n = first.data().len();
        (0..n).all(|i| {
            let mut sum = 0.0;
            for m in &self.masks {
                let v = m.data()[i];
                if v != 0.0 && v != 1.0 {
                    return false;
                }
                sum += v;
            }
            sum == 1.0
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Texture per part, indexed by [`Part::index`].
    pub textures: [TextureKind; NUM_PARTS],
    pub motion: Motion,
    pub scales: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            textures: [
                TextureKind::Solid,
                TextureKind::Checker,
                TextureKind::Stripes,
                TextureKind::Solid,
            ],
            motion: Motion::Identity,
            scales: NUM_SCALES,
        }
    }
}

impl SceneSpec {
    pub fn with_motion(&self, motion: Motion) -> Self {
        SceneSpec {
            motion,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::Config(alloc::format!(
                "scene must be at least 32x32, got {}x{}",
                self.height,
                self.width
            )));
        }
        let d = 1usize << (self.scales.max(1) - 1);
        if self.scales == 0 || !self.height.is_multiple_of(d) || !self.width.is_multiple_of(d) {
            return Err(Error::Config(alloc::format!(
                "{}x{} not divisible by 2^{}",
                self.height,
                self.width,
                self.scales.saturating_sub(1)
            )));
        }
        self.motion.validate()
    }

    /// Comma-separated texture names in part order.
    pub fn textures_string(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.textures.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(t.name());
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Texture {
    kind: TextureKind,
    c0: [f64; 3],
    c1: [f64; 3],
    period: usize,
    /// 0 horizontal, 1 vertical, 2 diagonal (stripes only).
    orient: u8,
}

impl Texture {
    fn sample<R: Rng>(kind: TextureKind, rng: &mut R) -> Self {
        let mut color = || {
            [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ]
        };
        let c0 = color();
        let mut c1 = color();
        // Keep the two tones clearly apart.
        if (0..3)
            .map(|i: usize| libm::fabs(c0[i] - c1[i]))
            .sum::<f64>()
            < 0.6
        {
            c1 = [1.0 - c0[0], 1.0 - c0[1], 1.0 - c0[2]];
        }
        let period = rng.random_range(4..9);
        let orient = rng.random_range(0..3u8);
        Texture {
            kind,
            c0,
            c1,
            period,
            orient,
        }
    }

    fn color(&self, y: usize, x: usize) -> [f64; 3] {
        let alt = match self.kind {
            TextureKind::Solid => false,
            TextureKind::Stripes => {
                let u = match self.orient {
                    0 => y,
                    1 => x,
                    _ => x + y,
                };
                (u / (self.period / 2).max(1)) % 2 == 1
            }
            TextureKind::Checker => {
                let cell = (self.period / 2).max(2);
                (y / cell + x / cell) % 2 == 1
            }
        };
        if alt {
            self.c1
        } else {
            self.c0
        }
    }
}

/// Layout and textures of one synthetic person, independent of motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    textures: [Texture; NUM_PARTS],
}

impl Appearance {
    pub fn sample(seed: u64, spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (spec.height as i64, spec.width as i64);
        let f = |num: i64, den: i64, n: i64| n * num / den;
        let oy = rng.random_range(-3..=3i64);
        let ox = rng.random_range(-3..=3i64);
        let mut jit = |v: i64| v + rng.random_range(-2..=2i64);
        let hair = (
            jit(f(12, 100, h)) + oy,
            f(25, 100, h) + oy,
            jit(f(38, 100, w)) + ox,
            jit(f(62, 100, w)) + ox,
        );
        let top = (
            f(25, 100, h) + oy,
            f(56, 100, h) + oy,
            jit(f(26, 100, w)) + ox,
            jit(f(74, 100, w)) + ox,
        );
        let pants = (
            f(56, 100, h) + oy,
            jit(f(86, 100, h)) + oy,
            jit(f(33, 100, w)) + ox,
            jit(f(67, 100, w)) + ox,
        );
        let mut labels = vec![Part::Background.index() as u8; (h * w) as usize];
        for (part, (y0, y1, x0, x1)) in [(Part::Top, top), (Part::Pants, pants), (Part::Hair, hair)]
        {
            for y in y0.max(0)..y1.min(h) {
                for x in x0.max(0)..x1.min(w) {
                    labels[(y * w + x) as usize] = part.index() as u8;
                }
            }
        }
        let textures = [
            Texture::sample(spec.textures[0], &mut rng),
            Texture::sample(spec.textures[1], &mut rng),
            Texture::sample(spec.textures[2], &mut rng),
            Texture::sample(spec.textures[3], &mut rng),
        ];
        Ok(Appearance {
            height: spec.height,
            width: spec.width,
            labels,
            textures,
        })
    }

    /// Same layout, with `part` textured as in `other`.
    pub fn with_part_texture_from(&self, part: Part, other: &Appearance) -> Self {
        let mut a = self.clone();
        a.textures[part.index()] = other.textures[part.index()];
        a
    }

    fn image(&self) -> Tensor4 {
        let w = self.width;
        Tensor4::from_fn(Shape4::new(1, 3, self.height, w), |_, c, y, x| {
            let part = self.labels[y * w + x] as usize;
            self.textures[part].color(y, x)[c]
        })
    }

    fn background(&self) -> Tensor4 {
        let bg = &self.textures[Part::Background.index()];
        Tensor4::from_fn(Shape4::new(1, 3, self.height, self.width), |_, c, y, x| {
            bg.color(y, x)[c]
        })
    }
}

/// 1 on pixels whose 4-neighbourhood contains another label.
fn boundary_skeleton(labels: &[u8], h: usize, w: usize) -> Tensor4 {
    Tensor4::from_fn(Shape4::new(1, 1, h, w), |_, _, y, x| {
        let l = labels[y * w + x];
        let differs = (y > 0 && labels[(y - 1) * w + x] != l)
            || (y + 1 < h && labels[(y + 1) * w + x] != l)
            || (x > 0 && labels[y * w + x - 1] != l)
            || (x + 1 < w && labels[y * w + x + 1] != l);
        if differs {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub seed: u64,
    pub spec: SceneSpec,
    pub x_s: Tensor4,
    pub x_t: Tensor4,
    pub p_s: Tensor4,
    pub p_t: Tensor4,
    pub region_masks_s: RegionMasks,
    pub region_masks_t: RegionMasks,
    /// Backward flow: target pixel → source location.
    pub flow_gt: Tensor4,
    /// Geometric visibility of each target pixel in the source.
    pub occlusion: Tensor4,
}

impl SynthScene {
    /// Render `appearance` moved by `spec.motion`.
    pub fn render(seed: u64, spec: &SceneSpec, appearance: &Appearance) -> Result<Self> {
        spec.validate()?;
        let (h, w) = (spec.height, spec.width);
        if appearance.height != h || appearance.width != w {
            return Err(Error::Config("appearance size does not match spec".into()));
        }
        let x_s = appearance.image();
        let flow_gt = gen_flow(&spec.motion, h, w)?;
        let occlusion = derive_occlusion(&flow_gt)?;
        let warped = tensor::bilinear_sample(&x_s, &flow_gt)?;
        let x_t = tensor::lerp(&warped, &appearance.background(), &occlusion)?;

        let mut labels_t = vec![Part::Background.index() as u8; h * w];
        for y in 0..h {
            for x in 0..w {
                if occlusion.at(0, 0, y, x) >= 0.5 {
                    let sy =
                        libm::round((y as f64 + flow_gt.at(0, 0, y, x)).clamp(0.0, (h - 1) as f64))
                            as usize;
                    let sx =
                        libm::round((x as f64 + flow_gt.at(0, 1, y, x)).clamp(0.0, (w - 1) as f64))
                            as usize;
                    labels_t[y * w + x] = appearance.labels[sy * w + sx];
                }
            }
        }
        Ok(SynthScene {
            seed,
            spec: spec.clone(),
            p_s: boundary_skeleton(&appearance.labels, h, w),
            p_t: boundary_skeleton(&labels_t, h, w),
            region_masks_s: RegionMasks::from_labels(&appearance.labels, h, w),
            region_masks_t: RegionMasks::from_labels(&labels_t, h, w),
            x_s,
            x_t,
            flow_gt,
            occlusion,
        })
    }

    pub fn pyramid(&self) -> Result<FlowPyramid> {
        flow_pyramid(&self.flow_gt, &self.occlusion, self.spec.scales)
    }
}

/// Deterministic scene for `seed` and `spec`.
pub fn gen_scene(seed: u64, spec: &SceneSpec) -> Result<SynthScene> {
    let appearance = Appearance::sample(seed, spec)?;
    SynthScene::render(seed, spec, &appearance)
}
