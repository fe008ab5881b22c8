//! C ABI placeholder.
