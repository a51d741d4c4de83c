#![allow(dead_code)]

pub mod gradcheck;
pub mod http;
pub mod tile_faults;
