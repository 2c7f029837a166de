//! Attribute-coupled matrix factorization for rating prediction.
//!
//! The crate factors a sparse user-item rating matrix with SGD and can
//! regularize item latent vectors toward their most similar neighbors,
//! where similarity is computed from categorical item attributes with
//! either simple matching (SMS) or coupled object similarity (COS).
//!
//! Pipeline: [`dataset`] loads ratings/attributes and produces folds,
//! [`coupling`] turns attributes into a sparsified item-item similarity
//! graph, [`factorization`] trains the latent model, and [`evaluation`]
//! scores it (MAE/RMSE, cold-start buckets, hyperparameter sweeps).
//!
//! The `parallel` feature (on by default) runs graph construction and
//! fold/sweep evaluation on a rayon pool; without it every code path is
//! sequential. Both produce identical results.

pub mod coupling;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod factorization;

pub use error::{Error, Result};
