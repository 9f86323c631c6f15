//! File formats and synthetic stream generation for the `smn` driver.

pub mod scene;
pub mod stream;
