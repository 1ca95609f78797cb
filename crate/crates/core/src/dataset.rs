//! Correspondence sets and the two-target bar dataset they are drawn from.

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, ExtrinsicAngles, Pixel2, Point3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("distance must be positive, got {0}")]
    InvalidDistance(f64),
    #[error("baseline must be positive, got {0}")]
    InvalidBaseline(f64),
    #[error("image index {index} out of range (dataset has {len} images)")]
    ImageOutOfRange { index: usize, len: usize },
    #[error("non-finite pixel coordinate in image {0}")]
    NonFinitePixel(usize),
    #[error("dataset has no images")]
    Empty,
}

/// The two images of one target: primary camera first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPair {
    pub q1: Pixel2,
    pub q2: Pixel2,
}

impl PixelPair {
    pub fn new(q1: Pixel2, q2: Pixel2) -> Self {
        Self { q1, q2 }
    }
}

/// Point-to-point correspondences between the two cameras.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet2D {
    pairs: Vec<PixelPair>,
}

impl CorrespondenceSet2D {
    pub fn new(pairs: Vec<PixelPair>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[PixelPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, pair: PixelPair) {
        self.pairs.push(pair);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PixelPair> {
        self.pairs.iter()
    }
}

impl FromIterator<PixelPair> for CorrespondenceSet2D {
    fn from_iter<I: IntoIterator<Item = PixelPair>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Two targets at a measured mutual distance, each seen by both cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEntry {
    pub distance: f64,
    pub a: PixelPair,
    pub b: PixelPair,
}

/// Target-to-target correspondences with measured distances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet3D {
    entries: Vec<DistanceEntry>,
}

impl CorrespondenceSet3D {
    pub fn new(entries: Vec<DistanceEntry>) -> Result<Self, DatasetError> {
        if let Some(bad) = entries
            .iter()
            .find(|e| !(e.distance.is_finite() && e.distance > 0.0))
        {
            return Err(DatasetError::InvalidDistance(bad.distance));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[DistanceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DistanceEntry> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    A,
    B,
}

impl Target {
    pub fn label(self) -> &'static str {
        match self {
            Target::A => "A",
            Target::B => "B",
        }
    }
}

/// Detections of both bar targets in one image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageObservation {
    pub a: PixelPair,
    pub b: PixelPair,
}

impl ImageObservation {
    pub fn target(&self, t: Target) -> &PixelPair {
        match t {
            Target::A => &self.a,
            Target::B => &self.b,
        }
    }
}

/// Generating truth for synthetic datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub angles: ExtrinsicAngles,
    /// World positions of targets A and B, one entry per image.
    pub targets: Vec<(Point3, Point3)>,
}

/// A bar-target dataset: intrinsics, measured baseline and target distance,
/// and per-image detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
    pub baseline: f64,
    pub distance: f64,
    pub images: Vec<ImageObservation>,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.baseline.is_finite() && self.baseline > 0.0) {
            return Err(DatasetError::InvalidBaseline(self.baseline));
        }
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return Err(DatasetError::InvalidDistance(self.distance));
        }
        if self.images.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (i, img) in self.images.iter().enumerate() {
            let all = [img.a.q1, img.a.q2, img.b.q1, img.b.q2];
            if !all.iter().all(Pixel2::is_finite) {
                return Err(DatasetError::NonFinitePixel(i));
            }
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    fn check_indices(&self, indices: &[usize]) -> Result<(), DatasetError> {
        match indices.iter().find(|&&i| i >= self.images.len()) {
            Some(&index) => Err(DatasetError::ImageOutOfRange {
                index,
                len: self.images.len(),
            }),
            None => Ok(()),
        }
    }

    /// Correct point-to-point pairs of the chosen images: target A then
    /// target B for each image, in the given order.
    pub fn correspondences_2d(&self, indices: &[usize]) -> Result<CorrespondenceSet2D, DatasetError> {
        self.check_indices(indices)?;
        Ok(indices
            .iter()
            .flat_map(|&i| [self.images[i].a, self.images[i].b])
            .collect())
    }

    /// One distance entry per chosen image.
    pub fn correspondences_3d(&self, indices: &[usize]) -> Result<CorrespondenceSet3D, DatasetError> {
        self.check_indices(indices)?;
        CorrespondenceSet3D::new(
            indices
                .iter()
                .map(|&i| DistanceEntry {
                    distance: self.distance,
                    a: self.images[i].a,
                    b: self.images[i].b,
                })
                .collect(),
        )
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.images.len()).collect()
    }
}
