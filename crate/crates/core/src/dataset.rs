//! Surface-defect image data: a seeded procedural stand-in for the six-class
//! hot-rolled steel defect set, plus ingestion of user-supplied PGM folders.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::{derive, rng_from};
use crate::{Error, Result};

/// Class names in dataset order.
pub const CLASS_NAMES: [&str; 6] = [
    "rolled-in_scale",
    "patches",
    "crazing",
    "pitted_surface",
    "inclusion",
    "scratches",
];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// Grayscale image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension("image sides must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "pixel intensity {p} outside [0, 1]"
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from 8-bit intensities, normalizing by 255.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// 8-bit quantization, round to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub class_names: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Image side lengths shared by every example.
    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.train
            .first()
            .or(self.test.first())
            .map(|e| (e.image.width(), e.image.height()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub per_class: usize,
    pub size: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            per_class: 300,
            size: 32,
            test_fraction: 0.2,
            seed: 1,
        }
    }
}

/// A float canvas the texture generators paint on before clamping.
struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(w: usize, h: usize, base: f64) -> Self {
        Canvas {
            w,
            h,
            px: vec![base; w * h],
        }
    }

    fn add(&mut self, x: isize, y: isize, v: f64) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] += v;
        }
    }

    /// Soft disc with a linear fall-off over one pixel at the rim.
    fn disc(&mut self, cx: f64, cy: f64, r: f64, v: f64) {
        let (x0, x1) = ((cx - r - 1.0).floor() as isize, (cx + r + 1.0).ceil() as isize);
        let (y0, y1) = ((cy - r - 1.0).floor() as isize, (cy + r + 1.0).ceil() as isize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let a = (r + 0.5 - d).clamp(0.0, 1.0);
                if a > 0.0 {
                    self.add(x, y, v * a);
                }
            }
        }
    }

    /// Line of the given thickness, drawn as overlapping discs.
    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, thickness: f64, v: f64) {
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let steps = (len * 2.0).ceil().max(1.0) as usize;
        // Accumulate into a mask first so overlapping discs do not stack.
        let mut mask = vec![0.0f64; self.w * self.h];
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (cx, cy) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let r = thickness / 2.0;
            let (xa, xb) = ((cx - r - 1.0).floor() as isize, (cx + r + 1.0).ceil() as isize);
            let (ya, yb) = ((cy - r - 1.0).floor() as isize, (cy + r + 1.0).ceil() as isize);
            for y in ya..=yb {
                for x in xa..=xb {
                    if x < 0 || y < 0 || x as usize >= self.w || y as usize >= self.h {
                        continue;
                    }
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let a = (r + 0.5 - d).clamp(0.0, 1.0);
                    let m = &mut mask[y as usize * self.w + x as usize];
                    *m = m.max(a);
                }
            }
        }
        for (p, m) in self.px.iter_mut().zip(mask) {
            *p += v * m;
        }
    }

    fn into_image(self) -> Image {
        let px = self.px.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Image::new(self.w, self.h, px).expect("canvas dimensions are valid")
    }
}

/// Procedural texture for one defect class. Deterministic in all arguments.
///
/// Every class shares a grainy mid-gray background; the defect layer differs:
/// low-frequency mottling, dark blobs, a crackle network, pits, vertical
/// streaks, and thin bright scratches.
pub fn generate_texture(class_id: usize, width: usize, height: usize, seed: u64) -> Result<Image> {
    if class_id >= NUM_CLASSES {
        return Err(Error::InvalidClass {
            class_id,
            classes: NUM_CLASSES,
        });
    }
    if width < 8 || height < 8 {
        return Err(Error::Dimension(format!(
            "texture needs at least 8x8 pixels, got {width}x{height}"
        )));
    }
    let mut rng = rng_from(derive(&[seed, class_id as u64, width as u64, height as u64]));
    let (wf, hf) = (width as f64, height as f64);
    let scale = wf.min(hf) / 32.0;
    let base = 0.5 + rng.random_range(-0.06..0.06);
    let mut c = Canvas::new(width, height, base);

    match class_id {
        // rolled-in scale: smooth mottling from a few wide bumps of either sign
        0 => {
            let bumps = rng.random_range(6..10);
            let mut field = vec![0.0; width * height];
            for _ in 0..bumps {
                let (bx, by) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
                let sigma = rng.random_range(3.0..6.0) * scale;
                let amp = rng.random_range(0.18..0.28) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for y in 0..height {
                    for x in 0..width {
                        let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                        field[y * width + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
            for (p, f) in c.px.iter_mut().zip(field) {
                *p += f;
            }
        }
        // patches: a few dark blobs
        1 => {
            for _ in 0..rng.random_range(4..7) {
                let (bx, by) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
                let r = rng.random_range(3.0..5.0) * scale;
                c.disc(bx, by, r, -rng.random_range(0.25..0.35));
            }
        }
        // crazing: random-walk cracks
        2 => {
            for _ in 0..rng.random_range(4..6) {
                let (mut x, mut y) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
                let mut angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                for _ in 0..rng.random_range(6..10) {
                    angle += rng.random_range(-1.2..1.2);
                    let step = rng.random_range(3.0..6.0) * scale;
                    let (nx, ny) = (x + step * angle.cos(), y + step * angle.sin());
                    c.line(x, y, nx, ny, 1.0, -0.25);
                    x = nx;
                    y = ny;
                }
            }
        }
        // pitted surface: many small pits
        3 => {
            for _ in 0..rng.random_range(16..26) {
                let (bx, by) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
                c.disc(bx, by, rng.random_range(0.9..1.5) * scale, -0.32);
            }
        }
        // inclusion: dark elongated streaks along the rolling (vertical) direction
        4 => {
            for _ in 0..rng.random_range(3..6) {
                let bx = rng.random_range(0.0..wf);
                let len = rng.random_range(0.4..0.9) * hf;
                let y0 = rng.random_range(-0.1 * hf..hf - 0.5 * len);
                let tilt = rng.random_range(-0.2..0.2) * len;
                c.line(bx, y0, bx + tilt, y0 + len, 2.0 * scale, -0.28);
            }
        }
        // scratches: thin bright lines in any direction
        5 => {
            for _ in 0..rng.random_range(3..6) {
                let (bx, by) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
                let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let half = rng.random_range(0.2..0.45) * wf;
                c.line(
                    bx - half * angle.cos(),
                    by - half * angle.sin(),
                    bx + half * angle.cos(),
                    by + half * angle.sin(),
                    1.0,
                    0.35,
                );
            }
        }
        _ => unreachable!(),
    }

    let grain = Normal::new(0.0, 0.05).expect("valid sigma");
    for p in c.px.iter_mut() {
        *p += grain.sample(&mut rng);
    }
    Ok(c.into_image())
}

fn test_count(n: usize, test_fraction: f64) -> usize {
    ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1)
}

/// Generates `per_class` textures per class and splits each class into
/// train/test by `test_fraction`.
pub fn build_dataset(config: &DatasetConfig) -> Result<DatasetSplit> {
    if config.per_class < 10 {
        return Err(Error::InvalidArgument(format!(
            "per_class must be at least 10, got {}",
            config.per_class
        )));
    }
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {}",
            config.test_fraction
        )));
    }
    let n_test = test_count(config.per_class, config.test_fraction);
    let mut split = DatasetSplit {
        train: Vec::with_capacity(NUM_CLASSES * (config.per_class - n_test)),
        test: Vec::with_capacity(NUM_CLASSES * n_test),
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        seed: config.seed,
    };
    for label in 0..NUM_CLASSES {
        for i in 0..config.per_class {
            let seed = derive(&[config.seed, label as u64, i as u64]);
            let image = generate_texture(label, config.size, config.size, seed)?;
            let example = LabeledExample { image, label };
            if i < n_test {
                split.test.push(example);
            } else {
                split.train.push(example);
            }
        }
    }
    Ok(split)
}

/// Parses a binary PGM (P5, maxval 255). `file` is used in error messages.
pub fn parse_pgm(bytes: &[u8], file: &Path) -> Result<Image> {
    let err = |msg: &str| Error::Parse {
        file: file.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut pos = 0usize;
    let next_token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if next_token(&mut pos).as_deref() != Some("P5") {
        return Err(err("missing P5 magic"));
    }
    let mut number = |name: &str| -> Result<u32> {
        next_token(&mut pos)
            .and_then(|t| t.parse::<u32>().ok())
            .ok_or_else(|| err(&format!("malformed header field {name}")))
    };
    let width = number("width")? as usize;
    let height = number("height")? as usize;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(err("zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval {
            file: file.to_path_buf(),
            maxval,
        });
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing raster"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() < width * height {
        return Err(err(&format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            width * height
        )));
    }
    Image::from_u8(width, height, &raster[..width * height])
}

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_u8());
    out
}

/// Loads `path/<class_name>/*.pgm`, one subdirectory per class, files in
/// lexicographic order. Each class is split into train/test with a seeded
/// shuffle.
pub fn load_pgm_dir(
    path: &Path,
    class_names: &[String],
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if class_names.is_empty() {
        return Err(Error::Ingest("no class names given".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        class_names: class_names.to_vec(),
        seed,
    };
    let mut size: Option<(usize, usize)> = None;
    for (label, name) in class_names.iter().enumerate() {
        let dir = path.join(name);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::Ingest(format!("{}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("pgm")))
            .collect();
        files.sort();
        if files.len() < 2 {
            return Err(Error::Ingest(format!(
                "class directory {} holds {} PGM files, need at least 2",
                dir.display(),
                files.len()
            )));
        }
        let mut examples = Vec::with_capacity(files.len());
        for file in &files {
            let image = parse_pgm(&fs::read(file)?, file)?;
            let dims = (image.width(), image.height());
            match size {
                None => size = Some(dims),
                Some(s) if s != dims => {
                    return Err(Error::Ingest(format!(
                        "{} is {}x{}, expected {}x{}",
                        file.display(),
                        dims.0,
                        dims.1,
                        s.0,
                        s.1
                    )))
                }
                _ => {}
            }
            examples.push(LabeledExample { image, label });
        }
        let n_test = test_count(examples.len(), test_fraction);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng_from(derive(&[seed, label as u64])));
        let mut slots: Vec<Option<LabeledExample>> = examples.into_iter().map(Some).collect();
        for (rank, &i) in order.iter().enumerate() {
            let ex = slots[i].take().expect("permutation visits each index once");
            if rank < n_test {
                split.test.push(ex);
            } else {
                split.train.push(ex);
            }
        }
    }
    Ok(split)
}

/// Writes a split as `dir/<class>/<index>.pgm` (train first, then test).
pub fn write_pgm_dir(split: &DatasetSplit, dir: &Path) -> Result<usize> {
    let mut counters = vec![0usize; split.num_classes()];
    for ex in split.train.iter().chain(&split.test) {
        let class_dir = dir.join(&split.class_names[ex.label]);
        fs::create_dir_all(&class_dir)?;
        let idx = &mut counters[ex.label];
        fs::write(class_dir.join(format!("{:05}.pgm", *idx)), encode_pgm(&ex.image))?;
        *idx += 1;
    }
    Ok(counters.iter().sum())
}
