//! Criterion benchmarks for the spectral transform, matrix products, the
//! model forward/backward pass and token augmentation. Run with
//! `cargo bench -p daif-bench`.
