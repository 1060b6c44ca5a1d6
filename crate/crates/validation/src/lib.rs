//! Holds the `acceptance` test target. Run it with
//! `cargo test -p nmd-validation --test acceptance --release`.
