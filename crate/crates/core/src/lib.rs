//! Fair asynchronous session subtyping, composition checking, a simulator for
//! the CaP process calculus with measure-based typing, and a queue machine
//! encoding.

pub mod cap;
pub mod corpus;
pub mod gen;
pub mod lex;
pub mod lts;
pub mod measure;
pub mod qm;
pub mod relation;
pub mod typecheck;
pub mod types;

pub use types::{Node, Polarity, SessionType, Tag, TypeError};
