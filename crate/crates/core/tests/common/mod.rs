#![allow(dead_code)]

pub mod bucket;
pub mod fabric_ref;
pub mod roundtrip;
