pub mod eyesim;
pub mod fuse;
pub mod gaze;
pub mod geom;
pub mod grasp;
pub mod graspnet;
pub mod pupil;
pub mod raster;
pub mod serve;
