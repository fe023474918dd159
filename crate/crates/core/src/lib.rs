pub mod airquality;
pub mod calendar;
pub mod deaths;
pub mod excess;
pub mod features;
pub mod gam;
pub mod imputation;
pub mod mortality;
pub mod spline;
pub mod synthetic;
pub mod weather;
