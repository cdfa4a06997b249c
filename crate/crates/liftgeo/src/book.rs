//! Runs the guide's code snippets as doc-tests so the book cannot drift from
//! the library. Only compiled by rustdoc.

#![cfg(doctest)]

macro_rules! chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        mod $name {}
    };
}

chapter!(introduction, "../../../book/src/introduction.md");
chapter!(geometry, "../../../book/src/geometry.md");
chapter!(autodiff, "../../../book/src/autodiff.md");
chapter!(networks, "../../../book/src/networks.md");
chapter!(training, "../../../book/src/training.md");
chapter!(synthetic_data, "../../../book/src/synthetic-data.md");
chapter!(evaluation, "../../../book/src/evaluation.md");
