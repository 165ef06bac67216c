//! Doc-test anchors for the book under `book/src`. Each module inlines
//! one chapter verbatim, so `cargo test --doc` compiles and runs every
//! snippet the guide shows and the book cannot drift from the crate.

macro_rules! chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        mod $name {}
    };
}

chapter!(introduction, "../../../book/src/introduction.md");
chapter!(traffic_model, "../../../book/src/traffic-model.md");
chapter!(simulation, "../../../book/src/simulation.md");
chapter!(neighbor_lists, "../../../book/src/neighbor-lists.md");
chapter!(admission_control, "../../../book/src/admission-control.md");
chapter!(signaling, "../../../book/src/signaling.md");
chapter!(configuration, "../../../book/src/configuration.md");
