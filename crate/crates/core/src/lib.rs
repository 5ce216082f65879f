pub mod diffeo;
pub mod map;
pub mod renorm;
pub mod error;
pub mod num;

pub use diffeo::{Diffeo, PrimitiveCurve};
pub use map::{MapS, MapX, MapY, ValidationReport};
pub use renorm::{is_renormalizable, iterate, renorm_s, renorm_x, tune_to_fibonacci, IterateOptions, RenormTrace, TuneParameter, TuneReport};
pub use error::{Error, Result};
pub use num::PrecisionPolicy;
