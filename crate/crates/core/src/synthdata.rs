//! Procedural corpus of box-assembly shapes whose backs cannot be seen from
//! the front.
//!
//! Every shape lives inside `[-0.5, 0.5]³` and is built so that, seen from the
//! canonical camera on `+z`, one front slab covers everything behind it. The
//! family's hidden parameters (car length, seat depth and arms, stem depth)
//! then change the shape without changing the canonical render.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{sample_view_ring, Camera, Point3, PointCloud, ViewRing};
use crate::io::{read_camera, read_ply, write_camera, write_ply, PlyEncoding};
use crate::model::Image;
use crate::render::{read_pgm, view_based_sample, write_pgm, DepthMap, DepthSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    Chairlike,
    Boxcar,
    Tee,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Chairlike, Family::Boxcar, Family::Tee];

    pub fn name(self) -> &'static str {
        match self {
            Family::Chairlike => "chairlike",
            Family::Boxcar => "boxcar",
            Family::Tee => "tee",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chairlike" => Ok(Family::Chairlike),
            "boxcar" => Ok(Family::Boxcar),
            "tee" => Ok(Family::Tee),
            other => Err(Error::BadSpec(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arms {
    None,
    Both,
    /// Only the `+x` arm; breaks mirror symmetry.
    Right,
}

/// Family parameters. Lengths are in object units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeParams {
    /// Seen from behind: a backrest slab reaching the floor, with seat, legs
    /// and optional arms hidden behind it.
    Chairlike {
        /// `[0.5, 0.9]`, visible.
        width: f64,
        /// Top of the backrest, `[0.25, 0.5]`, visible.
        back_height: f64,
        /// Seat top, `[-0.15, 0.0]`, hidden.
        seat_height: f64,
        /// `[0.35, 0.8]`, hidden.
        seat_depth: f64,
        /// Hidden.
        arms: Arms,
    },
    /// Seen head-on: body and cabin, both extending backwards.
    Boxcar {
        /// `[0.5, 0.9]`, visible.
        width: f64,
        /// Top of the body, `[0.05, 0.2]`, visible.
        body_height: f64,
        /// `[0.45, 1.0]`, hidden.
        body_length: f64,
        /// `[0.15, body_length − 0.2]`, hidden.
        cabin_length: f64,
    },
    /// A crossbar on a stem.
    Tee {
        /// `[0.5, 1.0]`, visible.
        bar_width: f64,
        /// `[0.2, 1.0]`, hidden.
        stem_depth: f64,
    },
}

const SLAB: f64 = 0.1;
const OVERLAP: f64 = 0.02;

impl ShapeParams {
    pub fn family(&self) -> Family {
        match self {
            ShapeParams::Chairlike { .. } => Family::Chairlike,
            ShapeParams::Boxcar { .. } => Family::Boxcar,
            ShapeParams::Tee { .. } => Family::Tee,
        }
    }

    /// Mirror symmetry about the `x = 0` plane.
    pub fn symmetric(&self) -> bool {
        !matches!(self, ShapeParams::Chairlike { arms: Arms::Right, .. })
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::BadSpec(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        match *self {
            ShapeParams::Chairlike {
                width,
                back_height,
                seat_height,
                seat_depth,
                ..
            } => {
                check("width", width, 0.5, 0.9)?;
                check("back_height", back_height, 0.25, 0.5)?;
                check("seat_height", seat_height, -0.15, 0.0)?;
                check("seat_depth", seat_depth, 0.35, 0.8)
            }
            ShapeParams::Boxcar {
                width,
                body_height,
                body_length,
                cabin_length,
            } => {
                check("width", width, 0.5, 0.9)?;
                check("body_height", body_height, 0.05, 0.2)?;
                check("body_length", body_length, 0.45, 1.0)?;
                check("cabin_length", cabin_length, 0.15, body_length - 0.2)
            }
            ShapeParams::Tee { bar_width, stem_depth } => {
                check("bar_width", bar_width, 0.5, 1.0)?;
                check("stem_depth", stem_depth, 0.2, 1.0)
            }
        }
    }

    /// Uniform draw over the family's parameter ranges.
    pub fn random<R: Rng + ?Sized>(family: Family, rng: &mut R) -> Self {
        match family {
            Family::Chairlike => ShapeParams::Chairlike {
                width: rng.gen_range(0.5..=0.9),
                back_height: rng.gen_range(0.25..=0.5),
                seat_height: rng.gen_range(-0.15..=0.0),
                seat_depth: rng.gen_range(0.35..=0.8),
                arms: *[Arms::None, Arms::Both, Arms::Right].choose(rng).expect("non-empty"),
            },
            Family::Boxcar => {
                let body_length = rng.gen_range(0.45..=1.0);
                ShapeParams::Boxcar {
                    width: rng.gen_range(0.5..=0.9),
                    body_height: rng.gen_range(0.05..=0.2),
                    body_length,
                    cabin_length: rng.gen_range(0.15..=body_length - 0.2),
                }
            }
            Family::Tee => ShapeParams::Tee {
                bar_width: rng.gen_range(0.5..=1.0),
                stem_depth: rng.gen_range(0.2..=1.0),
            },
        }
    }

    /// The same shape with every hidden parameter replaced by `other`'s.
    /// Both must be of the same family.
    pub fn with_hidden_of(&self, other: &ShapeParams) -> Result<ShapeParams> {
        let out = match (*self, *other) {
            (
                ShapeParams::Chairlike { width, back_height, .. },
                ShapeParams::Chairlike {
                    seat_height,
                    seat_depth,
                    arms,
                    ..
                },
            ) => ShapeParams::Chairlike {
                width,
                back_height,
                seat_height,
                seat_depth,
                arms,
            },
            (
                ShapeParams::Boxcar { width, body_height, .. },
                ShapeParams::Boxcar {
                    body_length,
                    cabin_length,
                    ..
                },
            ) => ShapeParams::Boxcar {
                width,
                body_height,
                body_length,
                cabin_length,
            },
            (ShapeParams::Tee { bar_width, .. }, ShapeParams::Tee { stem_depth, .. }) => {
                ShapeParams::Tee { bar_width, stem_depth }
            }
            _ => return Err(Error::BadSpec("hidden parameters come from another family".into())),
        };
        out.validate()?;
        Ok(out)
    }

    /// The axis-aligned boxes making up the shape.
    pub fn boxes(&self) -> Vec<Aabb> {
        let b = |x0, y0, z0, x1, y1, z1| Aabb::new(Point3::new(x0, y0, z0), Point3::new(x1, y1, z1));
        match *self {
            ShapeParams::Chairlike {
                width,
                back_height,
                seat_height,
                seat_depth,
                arms,
            } => {
                let hw = width / 2.0;
                let front = 0.5 - SLAB;
                let back_z = front - seat_depth;
                let leg = 0.08;
                let mut out = vec![
                    b(-hw, -0.5, front, hw, back_height, 0.5),
                    b(-hw, seat_height - 0.08, back_z, hw, seat_height, front + OVERLAP),
                    b(-hw, -0.5, back_z, -hw + leg, seat_height - 0.08 + OVERLAP, back_z + leg),
                    b(hw - leg, -0.5, back_z, hw, seat_height - 0.08 + OVERLAP, back_z + leg),
                ];
                let arm = |x0: f64, x1: f64| {
                    b(x0, seat_height + 0.15, front - 0.8 * seat_depth, x1, seat_height + 0.22, front + OVERLAP)
                };
                match arms {
                    Arms::None => {}
                    Arms::Both => {
                        out.push(arm(-hw, -hw + leg));
                        out.push(arm(hw - leg, hw));
                    }
                    Arms::Right => out.push(arm(hw - leg, hw)),
                }
                out
            }
            ShapeParams::Boxcar {
                width,
                body_height,
                body_length,
                cabin_length,
            } => {
                let hw = width / 2.0;
                let cabin_front = 0.5 - 0.15;
                vec![
                    b(-hw, -0.5, 0.5 - body_length, hw, body_height, 0.5),
                    b(
                        -0.8 * hw,
                        body_height - OVERLAP,
                        cabin_front - cabin_length,
                        0.8 * hw,
                        body_height + 0.2,
                        cabin_front,
                    ),
                ]
            }
            ShapeParams::Tee { bar_width, stem_depth } => {
                let hb = bar_width / 2.0;
                vec![
                    b(-hb, 0.15, 0.5 - 0.2, hb, 0.35, 0.5),
                    b(-0.1, -0.5, 0.5 - stem_depth, 0.1, 0.15 + OVERLAP, 0.5),
                ]
            }
        }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

const SURFACE_EPS: f64 = 1e-12;

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    fn extent(&self) -> Point3 {
        self.max - self.min
    }

    /// Faces as `(axis, coordinate, area)`.
    fn faces(&self) -> [(usize, f64, f64); 6] {
        let e = self.extent();
        let areas = [e.y * e.z, e.x * e.z, e.x * e.y];
        let lo = self.min.to_array();
        let hi = self.max.to_array();
        [
            (0, lo[0], areas[0]),
            (0, hi[0], areas[0]),
            (1, lo[1], areas[1]),
            (1, hi[1], areas[1]),
            (2, lo[2], areas[2]),
            (2, hi[2], areas[2]),
        ]
    }

    pub fn surface_area(&self) -> f64 {
        self.faces().iter().map(|f| f.2).sum()
    }

    pub fn contains_strictly(&self, p: Point3) -> bool {
        let (p, lo, hi) = (p.to_array(), self.min.to_array(), self.max.to_array());
        (0..3).all(|k| p[k] > lo[k] + SURFACE_EPS && p[k] < hi[k] - SURFACE_EPS)
    }

    pub fn contains_closed(&self, p: Point3) -> bool {
        let (p, lo, hi) = (p.to_array(), self.min.to_array(), self.max.to_array());
        (0..3).all(|k| p[k] >= lo[k] - SURFACE_EPS && p[k] <= hi[k] + SURFACE_EPS)
    }

    /// Entry parameter of the ray `origin + t·dir`, if it hits with `t > 0`.
    pub fn ray_entry(&self, origin: Point3, dir: Point3) -> Option<f64> {
        let (o, d) = (origin.to_array(), dir.to_array());
        let (lo, hi) = (self.min.to_array(), self.max.to_array());
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for k in 0..3 {
            if d[k] == 0.0 {
                if o[k] < lo[k] || o[k] > hi[k] {
                    return None;
                }
                continue;
            }
            let a = (lo[k] - o[k]) / d[k];
            let b = (hi[k] - o[k]) / d[k];
            t_near = t_near.max(a.min(b));
            t_far = t_far.min(a.max(b));
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

/// Points kept on the union's outer surface: a sample is rejected if it lies
/// strictly inside another box, or on the surface of a lower-indexed box
/// (so coplanar overlapping faces are sampled once).
fn on_union_surface(boxes: &[Aabb], owner: usize, p: Point3) -> bool {
    boxes.iter().enumerate().all(|(j, b)| {
        j == owner || !(b.contains_strictly(p) || (j < owner && b.contains_closed(p)))
    })
}

/// Area-uniform samples on the outer surface of a box union.
pub fn sample_union_surface<R: Rng + ?Sized>(boxes: &[Aabb], n: usize, rng: &mut R) -> Result<PointCloud> {
    let faces: Vec<(usize, usize, f64, f64)> = boxes
        .iter()
        .enumerate()
        .flat_map(|(i, b)| b.faces().into_iter().map(move |(axis, c, a)| (i, axis, c, a)))
        .collect();
    let total: f64 = faces.iter().map(|f| f.3).sum();
    if !(total > 0.0) {
        return Err(Error::BadSpec("shape has no surface".into()));
    }
    let mut pts = Vec::with_capacity(n);
    let budget = 1000 * n.max(1);
    for _ in 0..budget {
        if pts.len() == n {
            break;
        }
        let mut pick = rng.gen::<f64>() * total;
        let mut face = faces[faces.len() - 1];
        for f in &faces {
            if pick < f.3 {
                face = *f;
                break;
            }
            pick -= f.3;
        }
        let (owner, axis, coord, _) = face;
        let b = &boxes[owner];
        let (lo, hi) = (b.min.to_array(), b.max.to_array());
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = if k == axis { coord } else { lo[k] + rng.gen::<f64>() * (hi[k] - lo[k]) };
        }
        let p = Point3::from_array(p);
        if on_union_surface(boxes, owner, p) {
            pts.push(p);
        }
    }
    if pts.len() < n {
        return Err(Error::BadSpec(format!("only {} of {n} surface samples accepted", pts.len())));
    }
    PointCloud::new(pts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub params: ShapeParams,
    pub sample_count: usize,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn symmetric(&self) -> bool {
        self.params.symmetric()
    }
}

/// Surface samples of the shape described by `spec`.
pub fn make_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.params.validate()?;
    if spec.sample_count == 0 {
        return Err(Error::BadSpec("sample_count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_union_surface(&spec.params.boxes(), spec.sample_count, &mut rng)
}

/// Ray-cast depth render of a box union through every pixel center.
/// Contributors are box indices.
pub fn render_boxes(boxes: &[Aabb], cam: &Camera) -> DepthMap {
    let mut map = DepthMap::empty(cam.width, cam.height);
    let origin = cam.center();
    let to_world = cam.rotation().transpose();
    for row in 0..cam.height {
        for col in 0..cam.width {
            // Camera-space direction with unit z, so the ray parameter is the depth.
            let d = Point3::new(
                (col as f64 + 0.5 - cam.cx) / cam.fx,
                (row as f64 + 0.5 - cam.cy) / cam.fy,
                1.0,
            );
            let dir = to_world.apply(d);
            let mut best: Option<DepthSample> = None;
            for (i, b) in boxes.iter().enumerate() {
                if let Some(t) = b.ray_entry(origin, dir) {
                    if best.map_or(true, |s| t < s.depth) {
                        best = Some(DepthSample { depth: t, contributor: i });
                    }
                }
            }
            map.pixels[row * cam.width + col] = best;
        }
    }
    map
}

/// Depth range used to encode images; covers any shape inside the unit cube.
pub fn image_depth_range(ring: &ViewRing) -> (f64, f64) {
    (ring.radius - 1.0, ring.radius + 1.0)
}

/// Generator input from a depth map: the 16-bit code `q` of each pixel (as
/// stored in the PGM) becomes `1 − (q − 1)/65535`, so near surfaces are
/// bright and the background is 0.
pub fn depth_image(map: &DepthMap, z_range: (f64, f64)) -> Result<Image> {
    if map.width != map.height {
        return Err(Error::InvalidArgument("generator images must be square".into()));
    }
    let mut buf = Vec::new();
    write_pgm(map, z_range, &mut buf)?;
    let body = &buf[buf.len() - 2 * map.pixels.len()..];
    let pixels = body
        .chunks_exact(2)
        .map(|c| match u16::from_be_bytes([c[0], c[1]]) {
            0 => 0.0,
            q => 1.0 - (q as f64 - 1.0) / 65535.0,
        })
        .collect();
    Image::new(map.width, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One rendered view of a corpus shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    /// Camera used for view-based sampling.
    pub camera: Camera,
    /// Depth map the generator image is encoded from.
    pub depth: DepthMap,
    pub image: Image,
    /// Ground-truth front part, as indices into the record's cloud.
    pub front: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub shape_id: String,
    pub family: Family,
    pub split: Split,
    pub cloud: PointCloud,
    pub views: Vec<ViewRecord>,
}

impl DatasetRecord {
    pub fn front_cloud(&self, view: usize) -> PointCloud {
        self.cloud.select(&self.views[view].front)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub shapes: usize,
    pub families: Vec<Family>,
    pub points: usize,
    /// Cameras for view-based sampling.
    pub ring: ViewRing,
    /// Side of the generator's input image.
    pub image_size: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            shapes: 200,
            families: Family::ALL.to_vec(),
            points: 64,
            ring: ViewRing {
                focal: 16.0,
                resolution: (16, 16),
                ..ViewRing::default()
            },
            image_size: 16,
            seed: 0,
        }
    }
}

/// Train/test assignment by seeded shuffle: `floor(n/5)` shapes go to test.
pub fn split_assignment(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = n / 5;
    let mut out = vec![Split::Train; n];
    for &i in &order[..n_test] {
        out[i] = Split::Test;
    }
    out
}

fn make_view(cloud: &PointCloud, boxes: &[Aabb], cam: Camera, cfg: &DataConfig) -> Result<ViewRecord> {
    let img_cam = cam.with_resolution(cfg.image_size, cfg.image_size)?;
    let depth = render_boxes(boxes, &img_cam);
    let image = depth_image(&depth, image_depth_range(&cfg.ring))?;
    let front = view_based_sample(cloud, &cam).front_indices;
    Ok(ViewRecord {
        camera: cam,
        depth,
        image,
        front,
    })
}

/// Builds a record for explicit parameters and cameras.
pub fn make_record(
    shape_id: &str,
    spec: &ShapeSpec,
    cameras: &[Camera],
    split: Split,
    cfg: &DataConfig,
) -> Result<DatasetRecord> {
    let cloud = make_shape(spec)?;
    let boxes = spec.params.boxes();
    let views = cameras
        .iter()
        .map(|&c| make_view(&cloud, &boxes, c, cfg))
        .collect::<Result<_>>()?;
    Ok(DatasetRecord {
        shape_id: shape_id.to_string(),
        family: spec.family(),
        split,
        cloud,
        views,
    })
}

/// Shape specs of the corpus, families assigned round-robin.
pub fn corpus_specs(cfg: &DataConfig) -> Result<Vec<ShapeSpec>> {
    if cfg.families.is_empty() {
        return Err(Error::BadSpec("no families selected".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.shapes)
        .map(|i| ShapeSpec {
            params: ShapeParams::random(cfg.families[i % cfg.families.len()], &mut rng),
            sample_count: cfg.points,
            seed: rng.gen(),
        })
        .collect())
}

/// Generates the corpus in memory.
pub fn generate_corpus(cfg: &DataConfig) -> Result<Vec<DatasetRecord>> {
    cfg.ring.validate()?;
    let specs = corpus_specs(cfg)?;
    let splits = split_assignment(cfg.shapes, cfg.seed.wrapping_add(1));
    let mut ring_rng = ChaCha8Rng::seed_from_u64(cfg.ring.seed);
    ring_rng.set_stream(cfg.seed);
    specs
        .iter()
        .zip(splits)
        .enumerate()
        .map(|(i, (spec, split))| {
            let cams = sample_view_ring(&cfg.ring, &mut ring_rng)?;
            make_record(&format!("shape_{i:04}"), spec, &cams, split, cfg)
        })
        .collect()
}

/// One line of `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub shape_id: String,
    pub family: Family,
    pub split: Split,
    /// Paths relative to the dataset root.
    pub files: Vec<String>,
}

pub const MANIFEST: &str = "manifest.txt";
pub const MANIFEST_HEADER: &str = "shape_id\tfamily\tsplit\tfiles";

fn view_files(shape_id: &str, v: usize) -> [String; 3] {
    [
        format!("{shape_id}/view_{v}.pgm"),
        format!("{shape_id}/view_{v}.cam"),
        format!("{shape_id}/view_{v}.front"),
    ]
}

/// Writes one record's files under `root` and returns its manifest entry.
pub fn write_record(root: &Path, rec: &DatasetRecord, z_range: (f64, f64)) -> Result<ManifestEntry> {
    fs::create_dir_all(root.join(&rec.shape_id))?;
    let ply = format!("{}/cloud.ply", rec.shape_id);
    write_ply(
        &rec.cloud,
        PlyEncoding::Ascii,
        BufWriter::new(fs::File::create(root.join(&ply))?),
    )?;
    let mut files = vec![ply];
    for (v, view) in rec.views.iter().enumerate() {
        let [pgm, cam, front] = view_files(&rec.shape_id, v);
        write_pgm(&view.depth, z_range, BufWriter::new(fs::File::create(root.join(&pgm))?))?;
        write_camera(&view.camera, BufWriter::new(fs::File::create(root.join(&cam))?))?;
        let list: Vec<String> = view.front.iter().map(usize::to_string).collect();
        fs::write(root.join(&front), list.join(" ") + "\n")?;
        files.extend([pgm, cam, front]);
    }
    Ok(ManifestEntry {
        shape_id: rec.shape_id.clone(),
        family: rec.family,
        split: rec.split,
        files,
    })
}

pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut out: W) -> Result<()> {
    writeln!(out, "{MANIFEST_HEADER}")?;
    for e in entries {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            e.shape_id,
            e.family.name(),
            e.split.name(),
            e.files.join(",")
        )?;
    }
    Ok(())
}

pub fn read_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        _ => return Err(Error::format("manifest", "missing header line")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::format("manifest", format!("line {}: expected 4 columns", n + 1)));
            }
            let split = match cols[2] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(Error::format("manifest", format!("line {}: bad split '{other}'", n + 1))),
            };
            Ok(ManifestEntry {
                shape_id: cols[0].to_string(),
                family: cols[1].parse()?,
                split,
                files: cols[3].split(',').map(str::to_owned).collect(),
            })
        })
        .collect()
}

/// Generates the corpus and writes it under `out_dir`.
pub fn build_dataset(cfg: &DataConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let corpus = generate_corpus(cfg)?;
    write_corpus(&corpus, image_depth_range(&cfg.ring), out_dir)
}

pub fn write_corpus(corpus: &[DatasetRecord], z_range: (f64, f64), out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(out_dir)?;
    let entries = corpus
        .iter()
        .map(|r| write_record(out_dir, r, z_range))
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&entries, BufWriter::new(fs::File::create(out_dir.join(MANIFEST))?))?;
    Ok(entries)
}

fn open(root: &Path, rel: &str) -> Result<BufReader<fs::File>> {
    let path: PathBuf = root.join(rel);
    Ok(BufReader::new(fs::File::open(path)?))
}

/// Reads a dataset written by [`build_dataset`]. Images are decoded from the
/// stored PGMs and match the in-memory corpus exactly; depth-map
/// contributors are not stored.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let entries = read_manifest(&fs::read_to_string(dir.join(MANIFEST))?)?;
    entries
        .iter()
        .map(|e| {
            let cloud = read_ply(open(dir, &format!("{}/cloud.ply", e.shape_id))?)?;
            let n_views = (e.files.len().saturating_sub(1)) / 3;
            let views = (0..n_views)
                .map(|v| {
                    let [pgm, cam, front] = view_files(&e.shape_id, v);
                    let (depth, z_range) = read_pgm(open(dir, &pgm)?)?;
                    let camera = read_camera(open(dir, &cam)?)?;
                    let front = fs::read_to_string(dir.join(&front))?
                        .split_whitespace()
                        .map(|t| t.parse::<usize>().map_err(|err| Error::format("front indices", err.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    let image = depth_image(&depth, z_range)?;
                    Ok(ViewRecord {
                        camera,
                        depth,
                        image,
                        front,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DatasetRecord {
                shape_id: e.shape_id.clone(),
                family: e.family,
                split: e.split,
                cloud,
                views,
            })
        })
        .collect()
}
