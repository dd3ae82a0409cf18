//! Z-buffered point splatting, view-based sampling and inverse projection.
//!
//! Pixel `(col, row)` covers `u ∈ [col, col+1)`, `v ∈ [row, row+1)`; its
//! center is at `(col + 0.5, row + 0.5)`. Every point lands in exactly one
//! pixel (1-pixel footprint). The nearest point wins; equal depths keep the
//! lower point index.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geom::{project, Camera, Point3, PointCloud, MIN_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    /// Camera-space depth, always positive.
    pub depth: f64,
    /// Index of the winning point in the rendered cloud.
    pub contributor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major; `None` marks an empty pixel.
    pub pixels: Vec<Option<DepthSample>>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![None; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> Option<DepthSample> {
        self.pixels[row * self.width + col]
    }

    pub fn depth(&self, col: usize, row: usize) -> Option<f64> {
        self.get(col, row).map(|s| s.depth)
    }

    pub fn filled(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }

    /// Same depths, ignoring which point produced them.
    pub fn same_depths(&self, other: &DepthMap) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .pixels
                .iter()
                .zip(&other.pixels)
                .all(|(a, b)| a.map(|s| s.depth) == b.map(|s| s.depth))
    }

    /// Depth range `(min, max)` over filled pixels.
    pub fn depth_range(&self) -> Option<(f64, f64)> {
        self.pixels.iter().flatten().fold(None, |acc, s| match acc {
            None => Some((s.depth, s.depth)),
            Some((lo, hi)) => Some((lo.min(s.depth), hi.max(s.depth))),
        })
    }
}

/// Pixel containing projected coordinates `(u, v)`, if inside the image.
pub fn pixel_of(u: f64, v: f64, width: usize, height: usize) -> Option<(usize, usize)> {
    let (col, row) = (u.floor(), v.floor());
    if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
        return None;
    }
    Some((col as usize, row as usize))
}

/// Pixel index and depth of a point, or `None` when it is behind the camera
/// or outside the frustum.
pub fn splat_target(p: Point3, cam: &Camera) -> Option<(usize, f64)> {
    let proj = project(p, cam).ok()?;
    if proj.depth <= MIN_DEPTH {
        return None;
    }
    let (col, row) = pixel_of(proj.u, proj.v, cam.width, cam.height)?;
    Some((row * cam.width + col, proj.depth))
}

/// Renders a cloud into a z-buffer.
pub fn render_depth(pc: &PointCloud, cam: &Camera) -> DepthMap {
    let mut map = DepthMap::empty(cam.width, cam.height);
    for (i, &p) in pc.points().iter().enumerate() {
        let Some((pix, depth)) = splat_target(p, cam) else {
            continue;
        };
        let slot = &mut map.pixels[pix];
        match slot {
            Some(s) if s.depth <= depth => {}
            _ => {
                *slot = Some(DepthSample {
                    depth,
                    contributor: i,
                })
            }
        }
    }
    map
}

/// Partition of a cloud into the points that win a pixel (the front part)
/// and everything else.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewSampleResult {
    /// Ascending.
    pub front_indices: Vec<usize>,
    /// Ascending.
    pub back_indices: Vec<usize>,
}

/// Samples every point that contributes to the rendered depth map.
pub fn view_based_sample(pc: &PointCloud, cam: &Camera) -> ViewSampleResult {
    let map = render_depth(pc, cam);
    let mut is_front = vec![false; pc.len()];
    for s in map.pixels.iter().flatten() {
        is_front[s.contributor] = true;
    }
    let (front, back): (Vec<usize>, Vec<usize>) = (0..pc.len()).partition(|&i| is_front[i]);
    ViewSampleResult {
        front_indices: front,
        back_indices: back,
    }
}

/// The front part of `pc` as seen from `cam`.
pub fn front_part(pc: &PointCloud, cam: &Camera) -> PointCloud {
    pc.select(&view_based_sample(pc, cam).front_indices)
}

/// One world-space point per filled pixel, unprojected through the pixel
/// center, in row-major pixel order.
pub fn inverse_project(dm: &DepthMap, cam: &Camera) -> PointCloud {
    let mut pts = Vec::with_capacity(dm.filled());
    for row in 0..dm.height {
        for col in 0..dm.width {
            if let Some(depth) = dm.depth(col, row) {
                pts.push(unproject_pixel(col, row, depth, cam));
            }
        }
    }
    PointCloud::new(pts).expect("unprojected points are finite")
}

/// World point at pixel center `(col, row)` and the given camera-space depth.
pub fn unproject_pixel(col: usize, row: usize, depth: f64, cam: &Camera) -> Point3 {
    let u = col as f64 + 0.5;
    let v = row as f64 + 0.5;
    let pc = Point3::new((u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth);
    cam.to_world(pc)
}

/// Encodes a depth map as a 16-bit binary PGM.
///
/// Filled pixels map linearly from `z_range` onto `1..=65535`; empty pixels
/// are 0. The range is stored in a `# zrange <near> <far>` header comment.
pub fn write_pgm<W: Write>(dm: &DepthMap, z_range: (f64, f64), mut out: W) -> Result<()> {
    let (near, far) = z_range;
    if !(far > near) {
        return Err(Error::InvalidArgument(format!("bad PGM z-range [{near}, {far}]")));
    }
    write!(out, "P5\n# zrange {near:e} {far:e}\n{} {}\n65535\n", dm.width, dm.height)?;
    let mut bytes = Vec::with_capacity(dm.pixels.len() * 2);
    for p in &dm.pixels {
        let value: u16 = match p {
            None => 0,
            Some(s) => {
                let t = ((s.depth - near) / (far - near)).clamp(0.0, 1.0);
                1 + (t * 65534.0).round() as u16
            }
        };
        bytes.extend_from_slice(&value.to_be_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Depth image decoded from a PGM written by [`write_pgm`]. Contributors are
/// not stored in the file; decoded pixels report contributor `usize::MAX`.
pub fn read_pgm<R: BufRead>(mut input: R) -> Result<(DepthMap, (f64, f64))> {
    let mut header_tokens: Vec<String> = Vec::new();
    let mut z_range = None;
    let mut line = String::new();
    while header_tokens.len() < 4 {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::format("PGM", "truncated header"));
        }
        let trimmed = line.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            let parts: Vec<&str> = comment.split_whitespace().collect();
            if parts.len() == 3 && parts[0] == "zrange" {
                let near = parts[1].parse::<f64>().map_err(|e| Error::format("PGM", e.to_string()))?;
                let far = parts[2].parse::<f64>().map_err(|e| Error::format("PGM", e.to_string()))?;
                z_range = Some((near, far));
            }
            continue;
        }
        header_tokens.extend(trimmed.split_whitespace().map(str::to_owned));
    }
    if header_tokens[0] != "P5" || header_tokens[3] != "65535" {
        return Err(Error::format("PGM", "expected a 16-bit P5 image"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::format("PGM", e.to_string()));
    let (width, height) = (parse(&header_tokens[1])?, parse(&header_tokens[2])?);
    let (near, far) = z_range.ok_or_else(|| Error::format("PGM", "missing zrange comment"))?;
    let mut bytes = vec![0u8; width * height * 2];
    input.read_exact(&mut bytes)?;
    let pixels = bytes
        .chunks_exact(2)
        .map(|b| match u16::from_be_bytes([b[0], b[1]]) {
            0 => None,
            v => Some(DepthSample {
                depth: near + (v - 1) as f64 / 65534.0 * (far - near),
                contributor: usize::MAX,
            }),
        })
        .collect();
    Ok((DepthMap { width, height, pixels }, (near, far)))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geom::Mat3;

    fn axis_camera(w: usize, h: usize, f: f64) -> Camera {
        Camera::new(
            Mat3::IDENTITY,
            Point3::ORIGIN,
            (f, f),
            (w as f64 / 2.0, h as f64 / 2.0),
            (w, h),
        )
        .unwrap()
    }

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&a| Point3::from_array(a)).collect()).unwrap()
    }

    #[test]
    fn nearer_point_wins_center_pixel() {
        let cam = axis_camera(9, 9, 4.0);
        let pc = cloud(&[[0.0, 0.0, 3.0], [0.0, 0.0, 2.0]]);
        let dm = render_depth(&pc, &cam);
        let s = dm.get(4, 4).unwrap();
        assert_eq!(s.depth, 2.0);
        assert_eq!(s.contributor, 1);
        assert_eq!(dm.filled(), 1);

        let vs = view_based_sample(&pc, &cam);
        assert_eq!(vs.front_indices, vec![1]);
        assert_eq!(vs.back_indices, vec![0]);
    }

    #[test]
    fn equal_depth_keeps_lower_index() {
        let cam = axis_camera(9, 9, 4.0);
        let pc = cloud(&[[0.0, 0.0, 2.0], [0.01, 0.0, 2.0]]);
        assert_eq!(render_depth(&pc, &cam).get(4, 4).unwrap().contributor, 0);
    }

    #[test]
    fn outside_frustum_ignored() {
        let cam = axis_camera(9, 9, 4.0);
        let pc = cloud(&[[100.0, 0.0, 2.0], [0.0, 0.0, -2.0]]);
        let dm = render_depth(&pc, &cam);
        assert_eq!(dm, DepthMap::empty(9, 9));
        let vs = view_based_sample(&pc, &cam);
        assert!(vs.front_indices.is_empty());
        assert_eq!(vs.back_indices, vec![0, 1]);
    }

    #[test]
    fn single_point_is_front() {
        let cam = axis_camera(9, 9, 4.0);
        let pc = cloud(&[[0.2, -0.1, 2.5]]);
        assert_eq!(view_based_sample(&pc, &cam).front_indices, vec![0]);
    }

    #[test]
    fn inverse_project_round_trip_within_half_pixel() {
        let cam = Camera::look_at(Point3::new(0.4, 1.0, 3.0), Point3::ORIGIN, 64.0, (64, 64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = Point3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let dm = render_depth(&PointCloud::new(vec![p]).unwrap(), &cam);
            let back = inverse_project(&dm, &cam);
            assert_eq!(back.len(), 1);
            let depth = cam.to_camera(p).z;
            let bound = 0.5 * depth * (1.0 / cam.fx).hypot(1.0 / cam.fy);
            assert!(back[0].distance(p) <= bound + 1e-12);
            // Depth along the optical axis is preserved exactly.
            assert!((cam.to_camera(back[0]).z - depth).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_project_empty_and_plane() {
        let cam = axis_camera(8, 8, 8.0);
        assert!(inverse_project(&DepthMap::empty(8, 8), &cam).is_empty());

        let mut dm = DepthMap::empty(8, 8);
        for p in dm.pixels.iter_mut() {
            *p = Some(DepthSample { depth: 2.0, contributor: 0 });
        }
        let pts = inverse_project(&dm, &cam);
        assert_eq!(pts.len(), 64);
        for &p in pts.points() {
            assert!((cam.to_camera(p).z - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pgm_round_trip() {
        let cam = axis_camera(6, 5, 3.0);
        let pc = cloud(&[[0.0, 0.0, 2.0], [0.5, 0.3, 3.0], [-0.4, -0.2, 2.5]]);
        let dm = render_depth(&pc, &cam);
        let mut buf = Vec::new();
        write_pgm(&dm, (1.0, 4.0), &mut buf).unwrap();
        let (back, range) = read_pgm(&buf[..]).unwrap();
        assert_eq!(range, (1.0, 4.0));
        assert_eq!((back.width, back.height), (6, 5));
        for (a, b) in dm.pixels.iter().zip(&back.pixels) {
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => assert!((a.depth - b.depth).abs() <= 3.0 / 65534.0),
                _ => panic!("fill pattern changed"),
            }
        }
    }
}
