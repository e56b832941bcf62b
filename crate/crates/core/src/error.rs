use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integrity error in {split} split: expected {expected} images, found {actual}")]
    Integrity {
        split: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("corrupt dataset: {0}")]
    Corruption(String),
    #[error("class {class} has no samples; {what} is undefined")]
    EmptyClass { class: &'static str, what: &'static str },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}
