//! Runs every program included in the book.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        mod $name {
            include!($file);

            #[test]
            fn runs() {
                main();
            }
        }
    };
}

chapter!(streams, "../../../book/snippets/streams.rs");
chapter!(model, "../../../book/snippets/model.rs");
chapter!(memory, "../../../book/snippets/memory.rs");
chapter!(growing, "../../../book/snippets/growing.rs");
chapter!(merging, "../../../book/snippets/merging.rs");
chapter!(metrics, "../../../book/snippets/metrics.rs");
chapter!(counting, "../../../book/snippets/counting.rs");
chapter!(running, "../../../book/snippets/running.rs");
