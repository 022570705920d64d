//! Synthetic multi-coil phantoms: ellipse-based objects, smooth coil
//! profiles, and fully sampled k-space synthesis through the forward model.

use crate::error::{Error, Result};
use crate::numerics::{fft2c, ComplexImage, CoilStack, C64};
use crate::rng;
use crate::sense::SenseMaps;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One additive ellipse in normalized FOV coordinates (`[-1, 1]` per axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        let ry = dy * c - dx * s;
        let rx = dy * s + dx * c;
        (ry / self.ry).powi(2) + (rx / self.rx).powi(2) <= 1.0
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.5).contains(&self.intensity) {
            return Err(Error::InvalidInput(format!(
                "ellipse intensity {} outside [0, 1.5]",
                self.intensity
            )));
        }
        if self.ry <= 0.0 || self.rx <= 0.0 {
            return Err(Error::InvalidInput("ellipse axes must be positive".into()));
        }
        if self.cy.abs() + self.ry > 1.0 || self.cx.abs() + self.rx > 1.0 {
            return Err(Error::InvalidInput("ellipse extends outside the FOV".into()));
        }
        Ok(())
    }
}

/// Everything needed to synthesize one phantom deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub ellipses: Vec<Ellipse>,
    pub lesions: Vec<Ellipse>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::InvalidInput("phantom dims too small".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidInput("noise sigma must be >= 0".into()));
        }
        if self.ellipses.is_empty() {
            return Err(Error::InvalidInput("phantom needs at least one ellipse".into()));
        }
        for e in self.ellipses.iter().chain(&self.lesions) {
            e.validate()?;
        }
        Ok(())
    }

    /// Render the additive ellipse stack as a real non-negative image.
    pub fn render(&self) -> Result<ComplexImage> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        Ok(ComplexImage::from_fn(h, w, |i, j| {
            let y = -1.0 + 2.0 * (i as f64 + 0.5) / h as f64;
            let x = -1.0 + 2.0 * (j as f64 + 0.5) / w as f64;
            let mut v = 0.0;
            for e in self.ellipses.iter().chain(&self.lesions) {
                if e.contains(y, x) {
                    v += e.intensity;
                }
            }
            C64::new(v, 0.0)
        }))
    }
}

/// Smooth complex coil profiles: Gaussian magnitude lobes centered at equal
/// angles around the FOV with gentle per-coil phase ramps, normalized
/// pixelwise to unit sum of squares (foreground covers the whole grid).
pub fn coil_profiles(coils: usize, height: usize, width: usize) -> Result<SenseMaps> {
    if coils == 0 {
        return Err(Error::InvalidInput("need at least one coil".into()));
    }
    let mut planes = Vec::with_capacity(coils);
    for j in 0..coils {
        let angle = std::f64::consts::TAU * j as f64 / coils as f64;
        let cy = 0.95 * angle.sin();
        let cx = 0.95 * angle.cos();
        // deterministic, coil-dependent phase ramp
        let (py, px) = (0.4 * (angle + 0.7).sin(), 0.4 * (angle + 0.7).cos());
        planes.push(ComplexImage::from_fn(height, width, |i, jx| {
            let y = -1.0 + 2.0 * (i as f64 + 0.5) / height as f64;
            let x = -1.0 + 2.0 * (jx as f64 + 0.5) / width as f64;
            let d2 = (y - cy).powi(2) + (x - cx).powi(2);
            let mag = (-d2 / 1.4).exp() + 0.03;
            C64::from_polar(mag, py * y + px * x)
        }));
    }
    SenseMaps::from_profiles(&CoilStack::from_planes(&planes)?, 0.0)
}

/// Synthesize one sample: phantom truth, true maps, and the fully sampled
/// multi-coil k-space `fft2c(S_j .* truth) + noise`.
pub fn synth_sample(
    spec: &PhantomSpec,
    coils: usize,
) -> Result<(ComplexImage, SenseMaps, CoilStack)> {
    let truth = spec.render()?;
    let maps = coil_profiles(coils, spec.height, spec.width)?;
    let coil_imgs = maps.expand(&truth)?;
    let mut planes = Vec::with_capacity(coils);
    for j in 0..coils {
        planes.push(fft2c(&coil_imgs.coil_image(j))?);
    }
    let mut kspace = CoilStack::from_planes(&planes)?;
    if spec.noise_sigma > 0.0 {
        let gauss = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidInput(format!("noise sigma: {e}")))?;
        let mut rng = rng::stream(spec.seed, "kspace-noise", 0);
        for v in kspace.data_mut() {
            *v += C64::new(gauss.sample(&mut rng), gauss.sample(&mut rng));
        }
    }
    Ok((truth, maps, kspace))
}

/// Which samples carry lesions when generating a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LesionPolicy {
    None,
    TestOnly,
    All,
}

impl std::str::FromStr for LesionPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LesionPolicy::None),
            "test-only" => Ok(LesionPolicy::TestOnly),
            "all" => Ok(LesionPolicy::All),
            other => Err(Error::Config(format!("unknown lesion policy '{other}'"))),
        }
    }
}

/// Deterministic per-sample phantom spec: a jittered head-like ellipse stack,
/// optionally with one or two lesion ellipses.
pub fn sample_spec(
    height: usize,
    width: usize,
    cohort_seed: u64,
    sample_index: u64,
    noise_sigma: f64,
    with_lesions: bool,
) -> PhantomSpec {
    let mut rng = rng::stream(cohort_seed, "phantom", sample_index);
    fn jitter(rng: &mut impl Rng, scale: f64) -> f64 {
        (rng.gen::<f64>() - 0.5) * 2.0 * scale
    }
    let outer = Ellipse {
        cy: jitter(&mut rng, 0.04),
        cx: jitter(&mut rng, 0.04),
        ry: 0.78 + jitter(&mut rng, 0.06),
        rx: 0.62 + jitter(&mut rng, 0.06),
        angle: jitter(&mut rng, 0.18),
        intensity: 0.5 + jitter(&mut rng, 0.08),
    };
    let mut ellipses = vec![outer];
    // interior structures, kept inside the outer ellipse
    for _ in 0..3 {
        let ry = 0.10 + rng.gen::<f64>() * 0.16;
        let rx = 0.08 + rng.gen::<f64>() * 0.14;
        ellipses.push(Ellipse {
            cy: jitter(&mut rng, 0.32),
            cx: jitter(&mut rng, 0.26),
            ry,
            rx,
            angle: jitter(&mut rng, std::f64::consts::FRAC_PI_2),
            intensity: 0.15 + rng.gen::<f64>() * 0.25,
        });
    }
    let mut lesions = Vec::new();
    if with_lesions {
        for _ in 0..2 {
            lesions.push(Ellipse {
                cy: jitter(&mut rng, 0.35),
                cx: jitter(&mut rng, 0.3),
                ry: 0.03 + rng.gen::<f64>() * 0.05,
                rx: 0.03 + rng.gen::<f64>() * 0.05,
                angle: 0.0,
                intensity: if rng.gen::<bool>() { 0.45 } else { 0.08 },
            });
        }
    }
    PhantomSpec { height, width, ellipses, lesions, noise_sigma, seed: cohort_seed ^ sample_index }
}

/// One dataset entry: truth image, true maps and the fully sampled k-space.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: u32,
    pub truth: ComplexImage,
    pub maps: SenseMaps,
    pub kspace: CoilStack,
}

/// Build `count` samples starting at `first_index` in the cohort stream.
pub fn build_samples(
    height: usize,
    width: usize,
    coils: usize,
    cohort_seed: u64,
    first_index: u64,
    count: usize,
    noise_sigma: f64,
    with_lesions: bool,
) -> Result<Vec<Sample>> {
    (0..count)
        .map(|k| {
            let index = first_index + k as u64;
            let spec = sample_spec(height, width, cohort_seed, index, noise_sigma, with_lesions);
            let (truth, maps, kspace) = synth_sample(&spec, coils)?;
            Ok(Sample { id: index as u32, truth, maps, kspace })
        })
        .collect()
}
