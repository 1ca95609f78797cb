//! Extrinsic calibration of a canonical stereo rig.
//!
//! Three estimators share one parametrization (yaw, pitch, roll, and two
//! translation-direction angles, with the baseline measured externally):
//!
//! * [`essential`]: epipolar least squares, factored with the baseline;
//! * minimizing the reprojection error ([`cost::ReprojectionCost`]);
//! * minimizing the inter-target distance error ([`cost::ReconstructionCost`]).
//!
//! The [`evaluation`] and [`protocol`] modules score each estimate on
//! correspondence identification and on metric reconstruction, and
//! recommend one parameter set per task.

pub mod cost;
pub mod dataset;
pub mod essential;
pub mod evaluation;
pub mod formats;
pub mod geometry;
pub mod montecarlo;
pub mod protocol;
pub mod scene;
pub mod triangulation;

pub use dataset::{
    CorrespondenceSet2D, CorrespondenceSet3D, Dataset, DistanceEntry, GroundTruth,
    ImageObservation, PixelPair, Target,
};
pub use geometry::{
    CameraIntrinsics, EssentialMatrix, ExtrinsicAngles, Extrinsics, NormalizedPoint2, Pixel2,
    Point3, ProjectionMatrix,
};
pub use montecarlo::{minimize, CostFunction, MonteCarloConfig};
pub use triangulation::{Reconstruction, StereoRig};
