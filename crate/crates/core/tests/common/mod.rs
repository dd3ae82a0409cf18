#![allow(dead_code)]

use mvshape::geom::{Mat3, Point3, PointCloud, RigidTransform};
use proptest::prelude::*;

pub fn point() -> impl Strategy<Value = Point3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

pub fn cloud(sizes: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(point(), sizes).prop_map(|p| PointCloud::new(p).unwrap())
}

pub fn cloud_pair(sizes: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (PointCloud, PointCloud)> {
    sizes.prop_flat_map(|n| (cloud(n..=n), cloud(n..=n)))
}

pub fn rigid() -> impl Strategy<Value = RigidTransform> {
    (0.0..6.3f64, 0.0..6.3f64, 0.0..6.3f64, point()).prop_map(|(a, b, c, t)| {
        let r = Mat3::rotation_z(a).mul(&Mat3::rotation_y(b)).mul(&Mat3::rotation_x(c));
        RigidTransform::new(r, t * 3.0)
    })
}

pub fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

pub fn permuted(pc: &PointCloud, perm: &[usize]) -> PointCloud {
    pc.select(perm)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
