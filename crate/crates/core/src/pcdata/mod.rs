//! Point-cloud data model: cloud/dataset types, unit-sphere normalization,
//! mesh ingestion, toy-dataset generation, and the on-disk dataset format.

pub mod off;
pub mod pcds;
pub mod ply;
pub mod surface;
pub mod toy;

use crate::{Error, Result};
use ndarray::{Array2, ArrayView1};

/// Fixed-length sequence of 3D coordinates for one object.
///
/// Stored as an `N×3` matrix of `f64`. Constructors reject empty or
/// non-finite input; beyond that, coordinates are unconstrained — call
/// [`normalize_unit_sphere`] to center and scale into the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
}

impl PointCloud {
    /// Wraps an `N×3` coordinate matrix, validating shape and finiteness.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(Error::Invalid(format!(
                "point cloud must have 3 columns, got {}",
                points.ncols()
            )));
        }
        if points.nrows() == 0 {
            return Err(Error::Invalid("point cloud must contain at least one point".into()));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("point cloud contains non-finite coordinates".into()));
        }
        Ok(PointCloud { points })
    }

    /// Builds a cloud from coordinate triples.
    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        let mut points = Array2::zeros((rows.len(), 3));
        for (i, r) in rows.iter().enumerate() {
            points[[i, 0]] = r[0];
            points[[i, 1]] = r[1];
            points[[i, 2]] = r[2];
        }
        PointCloud::new(points)
    }

    /// Number of points.
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    /// The `N×3` coordinate matrix.
    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    /// One point as a length-3 view.
    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Consumes the cloud, returning the coordinate matrix.
    pub fn into_points(self) -> Array2<f64> {
        self.points
    }
}

/// Centers a cloud on its centroid and scales so the farthest point sits on
/// the unit sphere.
///
/// Idempotent, and invariant to translation and positive scaling of the
/// input. A degenerate cloud whose points are all identical maps to
/// all-zeros (there is no scale to normalize), the one documented exception
/// to the max-norm-1 guarantee.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    let n = cloud.n() as f64;
    let centroid = cloud.points.sum_axis(ndarray::Axis(0)) / n;
    let mut centered = cloud.points.clone();
    for mut row in centered.rows_mut() {
        row -= &centroid;
    }
    let max_norm = centered
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0f64, f64::max);
    if max_norm > 0.0 {
        centered /= max_norm;
    }
    PointCloud { points: centered }
}

/// Collection of point clouds with integer class labels and a class-name
/// table. All clouds share the same point count.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    items: Vec<(PointCloud, usize)>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    /// Builds a dataset, validating label range and uniform point count.
    pub fn new(items: Vec<(PointCloud, usize)>, class_names: Vec<String>) -> Result<Self> {
        let num_classes = class_names.len();
        for (i, (cloud, label)) in items.iter().enumerate() {
            if *label >= num_classes {
                return Err(Error::Invalid(format!(
                    "item {i} has label {label}, outside [0, {num_classes})"
                )));
            }
            if cloud.n() != items[0].0.n() {
                return Err(Error::Invalid(format!(
                    "item {i} has {} points but item 0 has {}; clouds must share N",
                    cloud.n(),
                    items[0].0.n()
                )));
            }
        }
        Ok(LabeledDataset { items, class_names })
    }

    /// Number of classes (length of the class-name table).
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Class-name table, indexed by label.
    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// All `(cloud, label)` pairs in storage order.
    pub fn items(&self) -> &[(PointCloud, usize)] {
        &self.items
    }

    /// Number of items.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Whether the dataset holds no items.
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Shared point count per cloud (0 for an empty dataset).
    pub fn points_per_cloud(&self) -> usize {
        self.items.first().map_or(0, |(c, _)| c.n())
    }

    /// Indices of all items carrying `label`, in storage order.
    pub fn indices_of_class(&self, label: usize) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, (_, l))| *l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn rejects_empty_and_non_finite_clouds() {
        assert!(PointCloud::new(Array2::zeros((0, 3))).is_err());
        assert!(PointCloud::from_rows(&[[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::from_rows(&[[f64::INFINITY, 0.0, 0.0]]).is_err());
        assert!(PointCloud::new(Array2::zeros((4, 2))).is_err());
    }

    #[test]
    fn normalize_maps_two_point_segment_to_unit_endpoints() {
        let cloud = PointCloud::from_rows(&[[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let norm = normalize_unit_sphere(&cloud);
        assert_abs_diff_eq!(norm.points(), &array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], epsilon = 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let cloud = PointCloud::from_rows(&[[0.3, -1.0, 2.0], [4.0, 0.5, -2.0], [0.0, 0.0, 0.1]]).unwrap();
        let once = normalize_unit_sphere(&cloud);
        let twice = normalize_unit_sphere(&once);
        for (a, b) in once.points().iter().zip(twice.points().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_recenters_and_rescales_random_cloud() {
        let mut rng = crate::seeds::rng_for(11, &[99]);
        let rows: Vec<[f64; 3]> = (0..64)
            .map(|_| [rng.gen::<f64>() * 10.0 - 5.0, rng.gen::<f64>() * 2.0, rng.gen::<f64>()])
            .collect();
        let norm = normalize_unit_sphere(&PointCloud::from_rows(&rows).unwrap());
        // Independent re-derivation of centroid and max norm from the output.
        let centroid = norm.points().sum_axis(ndarray::Axis(0)) / 64.0;
        for &c in centroid.iter() {
            assert!(c.abs() < 1e-6, "centroid component {c} not near 0");
        }
        let max_norm = norm
            .points()
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0f64, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-6, "max norm {max_norm} not 1");
    }

    #[test]
    fn normalize_is_translation_and_scale_invariant() {
        let mut rng = crate::seeds::rng_for(12, &[100]);
        let rows: Vec<[f64; 3]> = (0..32)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let base = PointCloud::from_rows(&rows).unwrap();
        let transformed = PointCloud::new(base.points() * 3.7 + 1.25).unwrap();
        let a = normalize_unit_sphere(&base);
        let b = normalize_unit_sphere(&transformed);
        for (x, y) in a.points().iter().zip(b.points().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn normalize_degenerate_all_equal_cloud_maps_to_zeros() {
        let cloud = PointCloud::from_rows(&[[2.0, 3.0, 4.0]; 5]).unwrap();
        let norm = normalize_unit_sphere(&cloud);
        assert!(norm.points().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dataset_rejects_out_of_range_labels_and_mixed_point_counts() {
        let c2 = PointCloud::from_rows(&[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let c3 = PointCloud::from_rows(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let names = vec!["a".to_string()];
        assert!(LabeledDataset::new(vec![(c2.clone(), 1)], names.clone()).is_err());
        assert!(LabeledDataset::new(vec![(c2.clone(), 0), (c3, 0)], names.clone()).is_err());
        assert!(LabeledDataset::new(vec![(c2, 0)], names).is_ok());
    }

    #[test]
    fn indices_of_class_preserves_storage_order() {
        let c = PointCloud::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let ds = LabeledDataset::new(
            vec![(c.clone(), 1), (c.clone(), 0), (c.clone(), 1), (c, 0)],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        assert_eq!(ds.indices_of_class(0), vec![1, 3]);
        assert_eq!(ds.indices_of_class(1), vec![0, 2]);
    }
}
