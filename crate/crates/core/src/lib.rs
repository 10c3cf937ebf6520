//! Component-wise gradient boosting with stability selection and
//! finite-sample control of the per-family error rate.

pub mod boosting;
pub mod bounds;
pub mod data;
pub mod simlab;
pub mod stabsel;
