#![allow(dead_code)]

pub mod curvature;
pub mod forward;
