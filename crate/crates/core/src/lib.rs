pub mod bitpack;
pub mod bits;
pub mod codebook;
pub mod combinatorics;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod query;
pub mod uncertainty;
pub mod weight;

pub use bits::{BitHash, BitMask};
pub use codebook::{Codebook, CodebookBuilder, CodebookEntry, CodebookHeader};
pub use error::{Error, Result};
pub use uncertainty::{ClipTrace, UncertaintyScores};
pub use weight::Weight;
