//! Criterion benchmarks for training, selection and the theory estimators.
//! Run with `cargo bench -p enkcvs-bench`.
