//! Holds the `acceptance` test target, which checks the fiberfrp toolkit
//! against numbered criteria on the reference link. Run it with
//! `cargo test -p fiberfrp-validation --test acceptance`.
