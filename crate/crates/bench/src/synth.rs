//! Synthetic pedestrian images in two rendering domains.
//!
//! Each identity is a fixed attribute vector (clothing colours, height,
//! torso texture, accessory) derived from a shared pool seed and its global
//! id. A domain style controls only how identities are rendered: background
//! palette and clutter, a global colour shift and contrast, part-colour
//! jitter, pose distortion and sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainStyle {
    pub background: Vec<[f64; 3]>,
    /// Distractor rectangles drawn behind the person.
    pub clutter: usize,
    pub color_shift: [f64; 3],
    pub contrast: f64,
    /// Per-image jitter added to every body-part colour.
    pub color_jitter: f64,
    /// Relative pose jitter (horizontal shift and height scale).
    pub distortion: f64,
    pub noise: f64,
}

impl DomainStyle {
    pub fn source() -> Self {
        Self {
            background: vec![[0.45, 0.50, 0.45], [0.60, 0.62, 0.58], [0.35, 0.42, 0.33]],
            clutter: 3,
            color_shift: [0.0, 0.0, 0.0],
            contrast: 1.0,
            color_jitter: 0.06,
            distortion: 0.5,
            noise: 0.02,
        }
    }

    pub fn target() -> Self {
        Self {
            background: vec![[0.55, 0.45, 0.35], [0.30, 0.35, 0.50], [0.70, 0.62, 0.50]],
            clutter: 5,
            color_shift: [0.08, 0.0, -0.08],
            contrast: 0.8,
            color_jitter: 0.06,
            distortion: 0.7,
            noise: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "query" => Some(Split::Query),
            "gallery" => Some(Split::Gallery),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub domain: String,
    pub num_identities: usize,
    /// The last `test_identities` identities form the query/gallery split.
    pub test_identities: usize,
    /// Global id of this domain's first identity; domains drawing from the same
    /// pool with different offsets have disjoint identities.
    pub identity_offset: usize,
    pub images_per_identity: usize,
    pub cameras_per_domain: usize,
    /// (height, width)
    pub image_hw: (usize, usize),
    pub style: DomainStyle,
    /// Seeds identity attributes; shared across domains.
    pub pool_seed: u64,
    /// Seeds rendering.
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    /// Default source domain: 32 training and 16 test identities.
    pub fn source() -> Self {
        Self {
            domain: "source".into(),
            num_identities: 48,
            test_identities: 16,
            identity_offset: 0,
            images_per_identity: 12,
            cameras_per_domain: 3,
            image_hw: (96, 32),
            style: DomainStyle::source(),
            pool_seed: 2024,
            seed: 1,
        }
    }

    /// Default target domain: 16 unseen test identities.
    pub fn target() -> Self {
        Self {
            domain: "target".into(),
            num_identities: 16,
            test_identities: 16,
            identity_offset: 48,
            style: DomainStyle::target(),
            seed: 2,
            ..Self::source()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.num_identities == 0 || self.images_per_identity == 0 {
            return Err("num_identities and images_per_identity must be positive".into());
        }
        if self.test_identities > self.num_identities {
            return Err("test_identities exceeds num_identities".into());
        }
        if self.cameras_per_domain < 2 {
            return Err("at least two cameras are needed for cross-camera evaluation".into());
        }
        if self.images_per_identity < self.cameras_per_domain {
            return Err("every identity needs an image under each camera".into());
        }
        if self.test_identities > 0 && self.images_per_identity == self.cameras_per_domain {
            return Err("test identities need more images than cameras: one query per camera, the rest gallery".into());
        }
        let (h, w) = self.image_hw;
        if h < 16 || w < 8 {
            return Err("image_hw must be at least 16x8".into());
        }
        if self.style.background.is_empty() {
            return Err("background palette is empty".into());
        }
        Ok(())
    }
}

/// An 8-bit RGB image stored row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub identity: usize,
    pub camera: usize,
    pub split: Split,
    /// Index among the identity's images.
    pub index: usize,
    pub image: RgbImage,
}

impl SyntheticSample {
    /// Manifest-relative file path.
    pub fn path(&self, domain: &str) -> String {
        format!("{domain}/{}/{:04}_c{}_{:02}.png", self.split.as_str(), self.identity, self.camera, self.index)
    }
}

#[derive(Clone, Copy, Debug)]
struct Identity {
    torso: [f64; 3],
    legs: [f64; 3],
    hair: [f64; 3],
    height: f64,
    /// Horizontal stripe period in pixels; 0 for plain cloth.
    stripe: usize,
    stripe_color: [f64; 3],
    /// -1 left, 0 none, 1 right.
    bag_side: i32,
    bag_color: [f64; 3],
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
}

fn identity(pool_seed: u64, id: usize) -> Identity {
    let mut rng = ChaCha8Rng::seed_from_u64(pool_seed);
    rng.set_stream(id as u64);
    Identity {
        torso: color(&mut rng),
        legs: color(&mut rng),
        hair: color(&mut rng),
        height: rng.random_range(0.78..0.95),
        stripe: [0, 0, 4, 6][rng.random_range(0..4)],
        stripe_color: color(&mut rng),
        bag_side: rng.random_range(-1..=1),
        bag_color: color(&mut rng),
    }
}

struct Canvas {
    h: usize,
    w: usize,
    data: Vec<[f64; 3]>,
}

impl Canvas {
    fn rect(&mut self, y0: f64, y1: f64, x0: f64, x1: f64, mut paint: impl FnMut(usize, usize) -> [f64; 3]) {
        let clampy = |v: f64| v.round().clamp(0.0, self.h as f64) as usize;
        let clampx = |v: f64| v.round().clamp(0.0, self.w as f64) as usize;
        for y in clampy(y0)..clampy(y1) {
            for x in clampx(x0)..clampx(x1) {
                self.data[y * self.w + x] = paint(y, x);
            }
        }
    }

    fn ellipse(&mut self, cy: f64, cx: f64, ry: f64, rx: f64, c: [f64; 3]) {
        for y in 0..self.h {
            for x in 0..self.w {
                let (dy, dx) = ((y as f64 + 0.5 - cy) / ry, (x as f64 + 0.5 - cx) / rx);
                if dy * dy + dx * dx <= 1.0 {
                    self.data[y * self.w + x] = c;
                }
            }
        }
    }
}

fn jittered(c: [f64; 3], amount: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    c.map(|v| v + rng.random_range(-amount..=amount))
}

/// Approximately normal noise from a sum of uniforms.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * (3.0f64 / 4.0).sqrt()
}

fn camera_response(camera: usize, cameras: usize) -> (f64, [f64; 3]) {
    let t = camera as f64 / (cameras - 1).max(1) as f64;
    let gain = 0.88 + 0.24 * t;
    let tint = [0.03 * (t - 0.5), 0.0, -0.03 * (t - 0.5)];
    (gain, tint)
}

fn render(spec: &SyntheticDatasetSpec, who: &Identity, camera: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let (h, w) = spec.image_hw;
    let (hf, wf) = (h as f64, w as f64);
    let style = &spec.style;
    let base = style.background[rng.random_range(0..style.background.len())];
    let base = jittered(base, 0.08, rng);
    let slope = rng.random_range(-0.15..0.15);
    let mut canvas = Canvas { h, w, data: vec![[0.0; 3]; h * w] };
    for y in 0..h {
        let g = slope * (y as f64 / hf - 0.5);
        for x in 0..w {
            canvas.data[y * w + x] = base.map(|v| v + g);
        }
    }
    for _ in 0..style.clutter {
        let (bh, bw) = (rng.random_range(0.08..0.35) * hf, rng.random_range(0.15..0.6) * wf);
        let (y0, x0) = (rng.random_range(0.0..hf - bh), rng.random_range(-bw / 2.0..wf - bw / 2.0));
        let c = color(rng);
        canvas.rect(y0, y0 + bh, x0, x0 + bw, |_, _| c);
    }

    let d = style.distortion;
    let height = who.height * hf * (1.0 + rng.random_range(-0.06..0.06) * d);
    let top = (hf - height) / 2.0 + rng.random_range(-0.04..0.04) * hf * d;
    let cx = wf / 2.0 + rng.random_range(-0.12..0.12) * wf * d;
    let body_w = 0.5 * wf * (1.0 + rng.random_range(-0.08..0.08) * d);
    let head_r = 0.075 * height;
    let j = style.color_jitter;
    let (torso, legs, hair, stripe) = (
        jittered(who.torso, j, rng),
        jittered(who.legs, j, rng),
        jittered(who.hair, j, rng),
        jittered(who.stripe_color, j, rng),
    );
    let skin = jittered([0.85, 0.68, 0.55], j, rng);
    let neck = top + 2.0 * head_r;
    let waist = top + 0.52 * height;
    let bottom = top + height;

    canvas.ellipse(top + head_r, cx, head_r, head_r * 0.85, skin);
    canvas.rect(top, top + 0.6 * head_r, cx - 0.8 * head_r, cx + 0.8 * head_r, |_, _| hair);
    let period = who.stripe;
    canvas.rect(neck, waist, cx - body_w / 2.0, cx + body_w / 2.0, |y, _| {
        if period > 0 && ((y as f64 - neck) as usize / period) % 2 == 1 {
            stripe
        } else {
            torso
        }
    });
    let leg_w = body_w * 0.42;
    canvas.rect(waist, bottom, cx - body_w / 2.0, cx - body_w / 2.0 + leg_w, |_, _| legs);
    canvas.rect(waist, bottom, cx + body_w / 2.0 - leg_w, cx + body_w / 2.0, |_, _| legs);
    if who.bag_side != 0 {
        let bx = cx + who.bag_side as f64 * (body_w / 2.0 + 0.08 * wf);
        let bag = jittered(who.bag_color, j, rng);
        canvas.rect(waist - 0.12 * height, waist + 0.06 * height, bx - 0.1 * wf, bx + 0.1 * wf, |_, _| bag);
    }

    let (gain, tint) = camera_response(camera, spec.cameras_per_domain);
    let mut pixels = Vec::with_capacity(h * w * 3);
    for px in &canvas.data {
        for ch in 0..3 {
            let v = px[ch] * gain + tint[ch];
            let v = style.contrast * (v - 0.5) + 0.5 + style.color_shift[ch] + style.noise * gauss(rng);
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    RgbImage { height: h, width: w, pixels }
}

/// Renders every image of a domain. Output depends only on the spec.
pub fn generate(spec: &SyntheticDatasetSpec) -> Result<Vec<SyntheticSample>, String> {
    spec.validate()?;
    let first_test = spec.num_identities - spec.test_identities;
    let mut out = Vec::with_capacity(spec.num_identities * spec.images_per_identity);
    for local in 0..spec.num_identities {
        let id = spec.identity_offset + local;
        let who = identity(spec.pool_seed, id);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(id as u64);
        for index in 0..spec.images_per_identity {
            let camera = index % spec.cameras_per_domain;
            let split = if local < first_test {
                Split::Train
            } else if index < spec.cameras_per_domain {
                Split::Query
            } else {
                Split::Gallery
            };
            let image = render(spec, &who, camera, &mut rng);
            out.push(SyntheticSample { identity: id, camera, split, index, image });
        }
    }
    Ok(out)
}
