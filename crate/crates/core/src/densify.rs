//! Densification of a sparse map: Delaunay triangulation of the valid pixel
//! coordinates, then barycentric interpolation of inverse depth inside each
//! triangle, written out as log-depth.
//!
//! Interpolating inverse depth (rather than depth or log-depth) makes the
//! result exact on scene planes, whose inverse depth is affine in the image
//! coordinates.

use spade::{DelaunayTriangulation, Point2, Triangulation as _};

use crate::error::{FusionError, Result};
use crate::grid::{ImageGrid, SparseDepthMap, ValidityMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    /// Pixel column.
    pub x: f64,
    /// Pixel row.
    pub y: f64,
    /// `1 / depth`, in the sparse map's (arbitrary) unit.
    pub inverse_depth: f64,
    /// Row-major pixel index this vertex came from.
    pub pixel: usize,
}

/// A Delaunay triangulation of the valid pixels of a sparse map.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub vertices: Vec<Vertex>,
    /// Vertex-index triples, counter-clockwise in `(x, y)` coordinates.
    pub triangles: Vec<[usize; 3]>,
    /// Hull polygon as vertex indices.
    pub convex_hull: Vec<usize>,
    width: usize,
    height: usize,
}

impl Triangulation {
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Twice the signed area of `(a, b, c)`; positive when counter-clockwise.
pub fn orient2d(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Triangulates the valid pixels.
///
/// Vertices are inserted in row-major pixel order, so the output is a pure
/// function of the input. When four or more points are cocircular the
/// choice of diagonal follows that insertion order. Predicates are exact:
/// pixel coordinates are small integers, and the underlying triangulator
/// uses adaptive-precision orientation and in-circle tests.
pub fn triangulate(sparse: &SparseDepthMap) -> Result<Triangulation> {
    let (width, height) = sparse.shape();
    let log_depth = sparse.log_depth().values();
    let vertices: Vec<Vertex> = sparse
        .mask()
        .indices()
        .map(|i| Vertex {
            x: (i % width) as f64,
            y: (i / width) as f64,
            inverse_depth: (-log_depth[i]).exp(),
            pixel: i,
        })
        .collect();
    if vertices.len() < 3 {
        return Err(FusionError::TooFewPoints(format!(
            "{} valid points, need at least 3",
            vertices.len()
        )));
    }

    let points: Vec<Point2<f64>> = vertices.iter().map(|v| Point2::new(v.x, v.y)).collect();
    let dt = DelaunayTriangulation::<Point2<f64>>::bulk_load_stable(points)
        .map_err(|e| FusionError::TooFewPoints(format!("triangulation failed: {e}")))?;
    if dt.num_inner_faces() == 0 {
        return Err(FusionError::TooFewPoints("all valid points are collinear".into()));
    }

    let triangles = dt
        .inner_faces()
        .map(|face| {
            let [a, b, c] = face.vertices().map(|v| v.fix().index());
            let pa = (vertices[a].x, vertices[a].y);
            let pb = (vertices[b].x, vertices[b].y);
            let pc = (vertices[c].x, vertices[c].y);
            if orient2d(pa, pb, pc) > 0.0 {
                [a, b, c]
            } else {
                [a, c, b]
            }
        })
        .collect();
    let convex_hull = dt.convex_hull().map(|edge| edge.from().fix().index()).collect();

    Ok(Triangulation {
        vertices,
        triangles,
        convex_hull,
        width,
        height,
    })
}

/// Rasterizes the triangulation into a log-depth map.
///
/// Every pixel inside (or on the boundary of) a triangle gets the
/// barycentric blend of the vertex inverse depths, converted to log-depth.
/// Vertex pixels reproduce their input log-depth exactly. Pixels outside the
/// hull are left at 0 and flagged false in the coverage mask.
pub fn interpolate(tri: &Triangulation, sparse: &SparseDepthMap) -> Result<(ImageGrid, ValidityMask)> {
    sparse.log_depth().ensure_shape(tri.shape())?;
    let (width, height) = tri.shape();
    let mut values = vec![0.0; width * height];
    let mut covered = vec![false; width * height];

    for &[a, b, c] in &tri.triangles {
        let (va, vb, vc) = (tri.vertices[a], tri.vertices[b], tri.vertices[c]);
        let (pa, pb, pc) = ((va.x, va.y), (vb.x, vb.y), (vc.x, vc.y));
        let area = orient2d(pa, pb, pc);
        if area <= 0.0 {
            continue;
        }
        let x0 = va.x.min(vb.x).min(vc.x) as usize;
        let x1 = va.x.max(vb.x).max(vc.x) as usize;
        let y0 = va.y.min(vb.y).min(vc.y) as usize;
        let y1 = va.y.max(vb.y).max(vc.y) as usize;
        for py in y0..=y1 {
            for px in x0..=x1 {
                let i = py * width + px;
                if covered[i] {
                    continue;
                }
                let p = (px as f64, py as f64);
                // Integer coordinates keep these products exact.
                let wa = orient2d(pb, pc, p);
                let wb = orient2d(pc, pa, p);
                let wc = orient2d(pa, pb, p);
                if wa < 0.0 || wb < 0.0 || wc < 0.0 {
                    continue;
                }
                let inverse =
                    (wa * va.inverse_depth + wb * vb.inverse_depth + wc * vc.inverse_depth) / area;
                values[i] = -inverse.ln();
                covered[i] = true;
            }
        }
    }

    let log_depth = sparse.log_depth().values();
    for v in &tri.vertices {
        values[v.pixel] = log_depth[v.pixel];
        covered[v.pixel] = true;
    }

    Ok((
        ImageGrid::new(width, height, values)?,
        ValidityMask::new(width, height, covered)?,
    ))
}

/// Triangulate and interpolate in one step.
pub fn densify(sparse: &SparseDepthMap) -> Result<(ImageGrid, ValidityMask)> {
    let tri = triangulate(sparse)?;
    interpolate(&tri, sparse)
}

/// Fallback when triangulation is impossible: every pixel takes the
/// log-depth of its nearest valid pixel (ties go to the lower index).
/// Coverage is the whole image.
pub fn nearest_fill(sparse: &SparseDepthMap) -> Result<(ImageGrid, ValidityMask)> {
    let (width, height) = sparse.shape();
    let points: Vec<(usize, usize, usize)> = sparse
        .mask()
        .indices()
        .map(|i| (i % width, i / width, i))
        .collect();
    if points.is_empty() {
        return Err(FusionError::EmptyCoverage);
    }
    let log_depth = sparse.log_depth().values();
    let grid = ImageGrid::from_fn(width, height, |x, y| {
        let nearest = points
            .iter()
            .min_by_key(|(px, py, _)| {
                let dx = px.abs_diff(x);
                let dy = py.abs_diff(y);
                dx * dx + dy * dy
            })
            .expect("non-empty");
        log_depth[nearest.2]
    })?;
    Ok((grid, ValidityMask::all(width, height)))
}

/// Shifts `log_depth` so that its mean over `coverage` equals `target_mean`.
/// The shift is applied to every pixel; differences are unchanged.
pub fn normalize_scale(log_depth: &ImageGrid, coverage: &ValidityMask, target_mean: f64) -> Result<ImageGrid> {
    coverage.ensure_shape(log_depth.shape())?;
    let count = coverage.count();
    if count == 0 {
        return Err(FusionError::EmptyCoverage);
    }
    let mean = coverage.indices().map(|i| log_depth.values()[i]).sum::<f64>() / count as f64;
    log_depth.map(|v| v - mean + target_mean)
}
