//! Latent factor model and its SGD trainer.
//!
//! The model predicts a rating as the inner product of a user and an
//! item latent vector. Training minimizes squared error on observed
//! ratings with Frobenius regularization on both factor matrices, plus
//! an optional item-relationship term that pulls the latent vectors of
//! attribute-similar items toward each other, weighted by `beta` and the
//! similarity graph.
//!
//! With `beta = 0` (or no graph) this is plain regularized SGD matrix
//! factorization; the trainer then dispatches to a kernel that never
//! touches the graph, so the two configurations are bitwise identical.

use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::SimilarityGraph;
use crate::dataset::SparseRatingMatrix;
use crate::error::{Error, Result};

/// User and item latent factor matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    k: usize,
    n_users: usize,
    n_items: usize,
    /// `n_users x k`, row per user.
    user_factors: Vec<f64>,
    /// `n_items x k`, row per item.
    item_factors: Vec<f64>,
    seed: u64,
}

impl FactorModel {
    pub fn from_parts(
        k: usize,
        n_users: usize,
        n_items: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if user_factors.len() != n_users * k || item_factors.len() != n_items * k {
            return Err(Error::DimensionMismatch(format!(
                "factor lengths {}x{} do not match {n_users} users / {n_items} items at k={k}",
                user_factors.len(),
                item_factors.len()
            )));
        }
        Ok(Self {
            k,
            n_users,
            n_items,
            user_factors,
            item_factors,
            seed,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn user_factor(&self, user: u32) -> &[f64] {
        &self.user_factors[user as usize * self.k..(user as usize + 1) * self.k]
    }

    pub fn item_factor(&self, item: u32) -> &[f64] {
        &self.item_factors[item as usize * self.k..(item as usize + 1) * self.k]
    }

    fn check_indexes(&self, user: u32, item: u32) -> Result<()> {
        if user as usize >= self.n_users {
            return Err(Error::IndexOutOfRange {
                kind: "user",
                index: user as usize,
                len: self.n_users,
            });
        }
        if item as usize >= self.n_items {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: item as usize,
                len: self.n_items,
            });
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.user_factors.iter().all(|v| v.is_finite())
            && self.item_factors.iter().all(|v| v.is_finite())
    }
}

/// Order in which each epoch visits the observed ratings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitOrder {
    /// Sorted by user index, items ascending within a user: the
    /// canonical sweep over the rating matrix.
    UserMajor,
    /// The order entries appear in the input file.
    File,
    /// A fresh seeded shuffle every epoch.
    Shuffled,
}

impl std::str::FromStr for VisitOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "user-major" | "user_major" => Ok(VisitOrder::UserMajor),
            "file" => Ok(VisitOrder::File),
            "shuffle" | "shuffled" => Ok(VisitOrder::Shuffled),
            other => Err(Error::InvalidConfig(format!(
                "unknown visit order {other:?}; expected user-major, file or shuffle"
            ))),
        }
    }
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// User regularization weight.
    pub lambda1: f64,
    /// Item regularization weight.
    pub lambda2: f64,
    /// Item-relationship regularization weight.
    pub beta: f64,
    /// Learning rate.
    pub eta: f64,
    /// Latent dimension.
    pub latent_dim: usize,
    /// Epoch cap.
    pub max_epochs: usize,
    /// Convergence threshold on the per-epoch objective decrease.
    pub epsilon: f64,
    pub seed: u64,
    pub visit_order: VisitOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            beta: 0.1,
            eta: 0.005,
            latent_dim: 10,
            max_epochs: 200,
            epsilon: 1e-4,
            seed: 42,
            visit_order: VisitOrder::UserMajor,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(Error::InvalidConfig("eta must be positive".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidConfig(
                "lambda1, lambda2 and beta must be nonnegative".into(),
            ));
        }
        if self.max_epochs < 1 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidConfig("epsilon must be nonnegative".into()));
        }
        if self.latent_dim < 1 {
            return Err(Error::InvalidConfig("latent_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Why training stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Converged,
}

/// Objective value per epoch and the stop condition that fired.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub objective_per_epoch: Vec<f64>,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

impl TrainTrace {
    /// Writes the trace as CSV `epoch,objective`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,objective")?;
        for (epoch, objective) in self.objective_per_epoch.iter().enumerate() {
            writeln!(w, "{},{}", epoch + 1, objective)?;
        }
        Ok(())
    }
}

/// Initializes a model with i.i.d. uniform entries on [0, 0.1) from a
/// seeded generator. Deterministic in (dims, k, seed).
pub fn init_model(n_users: usize, n_items: usize, k: usize, seed: u64) -> Result<FactorModel> {
    if n_users == 0 || n_items == 0 {
        return Err(Error::InvalidConfig(
            "model needs at least one user and one item".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("latent dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut user_factors = vec![0.0; n_users * k];
    for v in user_factors.iter_mut() {
        *v = rng.gen::<f64>() * 0.1;
    }
    let mut item_factors = vec![0.0; n_items * k];
    for v in item_factors.iter_mut() {
        *v = rng.gen::<f64>() * 0.1;
    }
    FactorModel::from_parts(k, n_users, n_items, user_factors, item_factors, seed)
}

/// Raw (unclamped) predicted rating: the inner product of the user and
/// item latent vectors.
pub fn predict(model: &FactorModel, user: u32, item: u32) -> Result<f64> {
    model.check_indexes(user, item)?;
    Ok(dot(model.user_factor(user), model.item_factor(item)))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The ordered pairwise coupling sum `sum_{i,i'} S_ii' ||q_i - q_i'||^2`
/// over both directions of every graph edge.
pub fn coupling_penalty(model: &FactorModel, graph: &SimilarityGraph) -> f64 {
    let mut total = 0.0;
    for i in 0..model.n_items() as u32 {
        let qi = model.item_factor(i);
        for &(j, w) in graph.neighbors(i) {
            let qj = model.item_factor(j);
            let dist: f64 = qi.iter().zip(qj).map(|(a, b)| (a - b) * (a - b)).sum();
            total += w * dist;
        }
    }
    total
}

/// Full training objective: squared prediction error over observed
/// ratings, Frobenius regularization of both factor matrices, and half
/// the `beta`-weighted ordered coupling sum.
pub fn objective(
    model: &FactorModel,
    train: &SparseRatingMatrix,
    graph: Option<&SimilarityGraph>,
    config: &TrainConfig,
) -> Result<f64> {
    check_dims(model, train, graph)?;
    let mut loss = 0.0;
    for e in train.entries() {
        let err = e.rating - dot(model.user_factor(e.user), model.item_factor(e.item));
        loss += err * err;
    }
    loss *= 0.5;

    let norm_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    loss += 0.5 * config.lambda1 * norm_sq(&model.user_factors);
    loss += 0.5 * config.lambda2 * norm_sq(&model.item_factors);

    if config.beta > 0.0 {
        if let Some(g) = graph {
            loss += 0.5 * config.beta * coupling_penalty(model, g);
        }
    }
    Ok(loss)
}

fn check_dims(
    model: &FactorModel,
    train: &SparseRatingMatrix,
    graph: Option<&SimilarityGraph>,
) -> Result<()> {
    if model.n_users() != train.n_users() || model.n_items() != train.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{} but matrix has {} users / {} items",
            model.n_users(),
            model.n_items(),
            train.n_users(),
            train.n_items()
        )));
    }
    if let Some(g) = graph {
        if g.n_items() != model.n_items() {
            return Err(Error::DimensionMismatch(format!(
                "graph covers {} items but model has {}",
                g.n_items(),
                model.n_items()
            )));
        }
    }
    Ok(())
}

/// Analytic gradient of [`objective`] with respect to `p_u` and `q_i`
/// for a single observed rating. Matches central finite differences of
/// the objective, coupling term included.
pub fn gradients(
    model: &FactorModel,
    user: u32,
    item: u32,
    rating: f64,
    graph: Option<&SimilarityGraph>,
    config: &TrainConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_indexes(user, item)?;
    let k = model.k();
    let pu = model.user_factor(user);
    let qi = model.item_factor(item);
    let err = rating - dot(pu, qi);

    let mut grad_pu = vec![0.0; k];
    let mut grad_qi = vec![0.0; k];
    for f in 0..k {
        grad_pu[f] = -err * qi[f] + config.lambda1 * pu[f];
        grad_qi[f] = -err * pu[f] + config.lambda2 * qi[f];
    }
    if config.beta > 0.0 {
        if let Some(g) = graph {
            if g.n_items() != model.n_items() {
                return Err(Error::DimensionMismatch(format!(
                    "graph covers {} items but model has {}",
                    g.n_items(),
                    model.n_items()
                )));
            }
            let deg = g.degree(item);
            let mut neighbor_sum = vec![0.0; k];
            for &(j, w) in g.neighbors(item) {
                let qj = model.item_factor(j);
                for f in 0..k {
                    neighbor_sum[f] += w * qj[f];
                }
            }
            // The coupling term is quadratic over both edge directions,
            // hence the factor two.
            for f in 0..k {
                grad_qi[f] += 2.0 * config.beta * (deg * qi[f] - neighbor_sum[f]);
            }
        }
    }
    Ok((grad_pu, grad_qi))
}

/// One in-place SGD update for a single observed rating. The residual
/// and both latent vectors are read before either is written.
pub fn sgd_step(
    model: &mut FactorModel,
    user: u32,
    item: u32,
    rating: f64,
    graph: Option<&SimilarityGraph>,
    config: &TrainConfig,
) -> Result<()> {
    model.check_indexes(user, item)?;
    if let Some(g) = graph {
        if g.n_items() != model.n_items() {
            return Err(Error::DimensionMismatch(format!(
                "graph covers {} items but model has {}",
                g.n_items(),
                model.n_items()
            )));
        }
    }
    let mut buf = vec![0.0; model.k()];
    let coupled = config.beta != 0.0
        && graph.map_or(false, |g| !g.neighbors(item).is_empty());
    match (coupled, graph) {
        (true, Some(g)) => step_coupled(model, user, item, rating, g, config, 1.0, &mut buf),
        _ => step_plain(model, user, item, rating, config),
    }
    Ok(())
}

/// Plain regularized update; never touches any graph.
#[inline]
fn step_plain(model: &mut FactorModel, user: u32, item: u32, rating: f64, config: &TrainConfig) {
    let k = model.k;
    let u0 = user as usize * k;
    let i0 = item as usize * k;
    let err = {
        let pu = &model.user_factors[u0..u0 + k];
        let qi = &model.item_factors[i0..i0 + k];
        rating - dot(pu, qi)
    };
    let eta = config.eta;
    for f in 0..k {
        let p_old = model.user_factors[u0 + f];
        let q_old = model.item_factors[i0 + f];
        model.user_factors[u0 + f] = p_old + eta * (err * q_old - config.lambda1 * p_old);
        model.item_factors[i0 + f] = q_old + eta * (err * p_old - config.lambda2 * q_old);
    }
}

/// Update with the item-relationship term: the item vector is also
/// pulled toward the similarity-weighted mean of its neighbors.
/// `beta_scale` spreads the coupling weight over the item's visits, so
/// one epoch applies the regularizer gradient with total weight `beta`
/// no matter how many ratings the item has.
#[inline]
fn step_coupled(
    model: &mut FactorModel,
    user: u32,
    item: u32,
    rating: f64,
    graph: &SimilarityGraph,
    config: &TrainConfig,
    beta_scale: f64,
    neighbor_sum: &mut [f64],
) {
    let k = model.k;
    let u0 = user as usize * k;
    let i0 = item as usize * k;
    let err = {
        let pu = &model.user_factors[u0..u0 + k];
        let qi = &model.item_factors[i0..i0 + k];
        rating - dot(pu, qi)
    };
    neighbor_sum.fill(0.0);
    for &(j, w) in graph.neighbors(item) {
        let qj = model.item_factor(j);
        for f in 0..k {
            neighbor_sum[f] += w * qj[f];
        }
    }
    let deg = graph.degree(item);
    let eta = config.eta;
    let beta = config.beta * beta_scale;
    for f in 0..k {
        let p_old = model.user_factors[u0 + f];
        let q_old = model.item_factors[i0 + f];
        model.user_factors[u0 + f] = p_old + eta * (err * q_old - config.lambda1 * p_old);
        model.item_factors[i0 + f] = q_old
            + eta * (err * p_old - config.lambda2 * q_old - beta * (q_old * deg - neighbor_sum[f]));
    }
}

/// Trains a model on the observed ratings.
///
/// Each epoch visits every observed rating once in the configured
/// order, then evaluates the objective. Training stops at `max_epochs`
/// or as soon as the per-epoch objective decrease drops to `epsilon` or
/// below, whichever comes first. Any non-finite factor entry aborts with
/// a diagnostic naming the epoch.
pub fn train(
    data: &SparseRatingMatrix,
    graph: Option<&SimilarityGraph>,
    config: &TrainConfig,
) -> Result<(FactorModel, TrainTrace)> {
    config.validate()?;
    if data.n_ratings() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if config.beta > 0.0 && graph.is_none() {
        return Err(Error::InvalidConfig(
            "beta > 0 requires a similarity graph".into(),
        ));
    }
    let mut model = init_model(
        data.n_users(),
        data.n_items(),
        config.latent_dim,
        config.seed,
    )?;
    check_dims(&model, data, graph)?;

    // The coupled kernel is only selected when it can contribute, so a
    // beta = 0 run is the plain trainer, bit for bit.
    let active_graph = if config.beta > 0.0 { graph } else { None };

    // Spread each item's coupling weight across its visits: the update
    // rule fires once per observed rating, so without this an item with
    // many ratings would feel the regularizer proportionally harder.
    let beta_scale: Vec<f64> = (0..data.n_items() as u32)
        .map(|i| {
            let n = data.by_item(i).len();
            if n > 0 {
                1.0 / n as f64
            } else {
                1.0
            }
        })
        .collect();

    let mut order: Vec<u32> = (0..data.n_ratings() as u32).collect();
    if config.visit_order == VisitOrder::UserMajor {
        order.sort_unstable_by_key(|&n| {
            let e = data.entries()[n as usize];
            (e.user, e.item)
        });
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut buf = vec![0.0; config.latent_dim];

    let mut trace = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        if config.visit_order == VisitOrder::Shuffled {
            order.shuffle(&mut shuffle_rng);
        }
        match active_graph {
            Some(g) => {
                for &n in &order {
                    let e = data.entries()[n as usize];
                    if g.neighbors(e.item).is_empty() {
                        step_plain(&mut model, e.user, e.item, e.rating, config);
                    } else {
                        step_coupled(
                            &mut model,
                            e.user,
                            e.item,
                            e.rating,
                            g,
                            config,
                            beta_scale[e.item as usize],
                            &mut buf,
                        );
                    }
                }
            }
            None => {
                for &n in &order {
                    let e = data.entries()[n as usize];
                    step_plain(&mut model, e.user, e.item, e.rating, config);
                }
            }
        }
        if !model.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        let value = objective(&model, data, active_graph, config)?;
        if let Some(&previous) = trace.last() {
            trace.push(value);
            if previous - value <= config.epsilon {
                stop_reason = StopReason::Converged;
                break;
            }
        } else {
            trace.push(value);
        }
    }

    let epochs_run = trace.len();
    Ok((
        model,
        TrainTrace {
            objective_per_epoch: trace,
            epochs_run,
            stop_reason,
        },
    ))
}

/// Writes the model textually: a `K N M seed` header, then K-row dense
/// blocks for the user and item matrices with 17 significant digits, so
/// reloading is exact.
pub fn write_model<W: Write>(mut w: W, model: &FactorModel) -> Result<()> {
    writeln!(
        w,
        "{} {} {} {}",
        model.k(),
        model.n_users(),
        model.n_items(),
        model.seed()
    )?;
    let write_block = |w: &mut W, factors: &[f64], rows: usize, k: usize| -> Result<()> {
        for f in 0..k {
            let mut line = String::with_capacity(rows * 24);
            for r in 0..rows {
                if r > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{:.16e}", factors[r * k + f]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    };
    write_block(&mut w, &model.user_factors, model.n_users(), model.k())?;
    write_block(&mut w, &model.item_factors, model.n_items(), model.k())?;
    Ok(())
}

/// Reads a model written by [`write_model`].
pub fn read_model<R: Read>(r: R) -> Result<FactorModel> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().transpose()?.ok_or_else(|| Error::Parse {
        line: 1,
        msg: "empty model file".into(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(Error::Parse {
            line: 1,
            msg: "model header must be `K N M seed`".into(),
        });
    }
    let parse = |s: &str, what: &str| -> Result<u64> {
        s.parse().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("bad {what} in model header"),
        })
    };
    let k = parse(parts[0], "K")? as usize;
    let n_users = parse(parts[1], "N")? as usize;
    let n_items = parse(parts[2], "M")? as usize;
    let seed = parse(parts[3], "seed")?;

    let mut read_block = |rows: usize, lineno_base: usize| -> Result<Vec<f64>> {
        let mut factors = vec![0.0; rows * k];
        for f in 0..k {
            let lineno = lineno_base + f + 1;
            let line = lines.next().transpose()?.ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "model file truncated".into(),
            })?;
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != rows {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {rows} values, found {}", values.len()),
                });
            }
            for (r, v) in values.iter().enumerate() {
                factors[r * k + f] = v.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad factor value {v:?}"),
                })?;
            }
        }
        Ok(factors)
    };
    let user_factors = read_block(n_users, 1)?;
    let item_factors = read_block(n_items, 1 + k)?;
    FactorModel::from_parts(k, n_users, n_items, user_factors, item_factors, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_ratings, RatingScale, RatingsFormat};
    use approx::assert_relative_eq;

    fn scale() -> RatingScale {
        RatingScale::new(1.0, 5.0)
    }

    fn single_rating_matrix() -> SparseRatingMatrix {
        load_ratings("u\ti\t4\n".as_bytes(), RatingsFormat::GenericTsv, scale()).unwrap()
    }

    fn cfg(beta: f64) -> TrainConfig {
        TrainConfig {
            beta,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_in_range() {
        let a = init_model(5, 7, 3, 11).unwrap();
        let b = init_model(5, 7, 3, 11).unwrap();
        assert_eq!(a, b);
        assert!(a
            .user_factors
            .iter()
            .chain(&a.item_factors)
            .all(|&v| (0.0..0.1).contains(&v)));
        let c = init_model(5, 7, 3, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_dimensions() {
        let m = init_model(943, 1682, 10, 0).unwrap();
        assert_eq!(m.user_factors.len(), 943 * 10);
        assert_eq!(m.item_factors.len(), 1682 * 10);
        assert_eq!(m.user_factor(942).len(), 10);
        assert!(init_model(0, 5, 2, 0).is_err());
        assert!(init_model(5, 5, 0, 0).is_err());
    }

    #[test]
    fn predict_cases() {
        let model =
            FactorModel::from_parts(2, 1, 2, vec![1.0, 0.0], vec![0.5, 0.5, 0.0, 0.0], 0).unwrap();
        assert_eq!(predict(&model, 0, 0).unwrap(), 0.5);
        assert_eq!(predict(&model, 0, 1).unwrap(), 0.0);
        let unit = FactorModel::from_parts(2, 1, 1, vec![1.0, 0.0], vec![1.0, 0.0], 0).unwrap();
        assert_eq!(predict(&unit, 0, 0).unwrap(), 1.0);
        assert!(predict(&model, 1, 0).is_err());
        assert!(predict(&model, 0, 2).is_err());
    }

    #[test]
    fn objective_zero_model_single_rating() {
        let data = single_rating_matrix();
        let model = FactorModel::from_parts(2, 1, 1, vec![0.0; 2], vec![0.0; 2], 0).unwrap();
        let mut c = cfg(0.0);
        c.lambda1 = 0.0;
        c.lambda2 = 0.0;
        let value = objective(&model, &data, None, &c).unwrap();
        assert_relative_eq!(value, 0.5 * 16.0, max_relative = 1e-15);
    }

    #[test]
    fn objective_beta_zero_ignores_graph() {
        let data = load_ratings(
            "u\ti0\t4\nu\ti1\t3\n".as_bytes(),
            RatingsFormat::GenericTsv,
            scale(),
        )
        .unwrap();
        let model = init_model(1, 2, 3, 5).unwrap();
        let graph = SimilarityGraph::from_edges(2, &[(0, 1, 0.8)]).unwrap();
        let with = objective(&model, &data, Some(&graph), &cfg(0.0)).unwrap();
        let without = objective(&model, &data, None, &cfg(0.0)).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn coupling_penalty_matches_trace_form() {
        use crate::coupling::laplacian;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let m = rng.gen_range(3..8usize);
            let k = rng.gen_range(1..4usize);
            let mut edges = Vec::new();
            for i in 0..m as u32 {
                for j in (i + 1)..m as u32 {
                    if rng.gen_bool(0.6) {
                        edges.push((i, j, rng.gen_range(0.05..1.0)));
                    }
                }
            }
            let graph = SimilarityGraph::from_edges(m, &edges).unwrap();
            let mut item_factors = vec![0.0; m * k];
            for v in item_factors.iter_mut() {
                *v = rng.gen_range(-2.0..2.0);
            }
            let model =
                FactorModel::from_parts(k, 1, m, vec![0.0; k], item_factors.clone(), 0).unwrap();

            let beta = rng.gen_range(0.01..1.0);
            let pairwise = 0.5 * beta * coupling_penalty(&model, &graph);

            // trace form via the Laplacian view
            let lap = laplacian(&graph).unwrap();
            let q_rows: Vec<Vec<f64>> = (0..k)
                .map(|f| (0..m).map(|i| item_factors[i * k + f]).collect())
                .collect();
            let trace_form = beta * lap.trace_quad(&q_rows);
            assert_relative_eq!(pairwise, trace_form, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradient_stationary_point_is_zero() {
        // r equals the prediction and all regularizers are off
        let model =
            FactorModel::from_parts(2, 1, 1, vec![0.5, 0.5], vec![1.0, 1.0], 0).unwrap();
        let mut c = cfg(0.0);
        c.lambda1 = 0.0;
        c.lambda2 = 0.0;
        let (gp, gq) = gradients(&model, 0, 0, 1.0, None, &c).unwrap();
        assert!(gp.iter().all(|&v| v == 0.0));
        assert!(gq.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_frozen_example() {
        let model =
            FactorModel::from_parts(2, 1, 1, vec![1.0, 0.0], vec![0.5, 0.5], 0).unwrap();
        let mut c = cfg(0.0);
        c.lambda1 = 0.1;
        let (gp, _) = gradients(&model, 0, 0, 4.0, None, &c).unwrap();
        assert_relative_eq!(gp[0], -1.65, max_relative = 1e-12);
        assert_relative_eq!(gp[1], -1.75, max_relative = 1e-12);
    }

    /// Central finite differences of the objective for one (user, item).
    fn fd_gradients(
        model: &FactorModel,
        data: &SparseRatingMatrix,
        graph: Option<&SimilarityGraph>,
        config: &TrainConfig,
        user: u32,
        item: u32,
        h: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let k = model.k();
        let mut grad_pu = vec![0.0; k];
        let mut grad_qi = vec![0.0; k];
        for f in 0..k {
            let mut plus = model.clone();
            plus.user_factors[user as usize * k + f] += h;
            let mut minus = model.clone();
            minus.user_factors[user as usize * k + f] -= h;
            grad_pu[f] = (objective(&plus, data, graph, config).unwrap()
                - objective(&minus, data, graph, config).unwrap())
                / (2.0 * h);

            let mut plus = model.clone();
            plus.item_factors[item as usize * k + f] += h;
            let mut minus = model.clone();
            minus.item_factors[item as usize * k + f] -= h;
            grad_qi[f] = (objective(&plus, data, graph, config).unwrap()
                - objective(&minus, data, graph, config).unwrap())
                / (2.0 * h);
        }
        (grad_pu, grad_qi)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..10 {
            let m = rng.gen_range(3..7usize);
            let k = rng.gen_range(2..5usize);
            // the target rating (u0, i0); padding rows keep other
            // users/items out of its gradient
            let mut tsv = String::from("u0\ti0\t4\n");
            for extra in 1..m {
                tsv.push_str(&format!("u{extra}\ti{extra}\t1\n"));
            }
            let data = load_ratings(tsv.as_bytes(), RatingsFormat::GenericTsv, scale()).unwrap();
            let model = FactorModel::from_parts(
                k,
                m,
                m,
                (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                0,
            )
            .unwrap();
            let mut edges = Vec::new();
            for i in 0..m as u32 {
                for j in (i + 1)..m as u32 {
                    if rng.gen_bool(0.5) {
                        edges.push((i, j, rng.gen_range(0.1..1.0)));
                    }
                }
            }
            let graph = SimilarityGraph::from_edges(m, &edges).unwrap();
            let config = TrainConfig {
                lambda1: rng.gen_range(0.0..0.3),
                lambda2: rng.gen_range(0.0..0.3),
                beta: if case % 2 == 0 {
                    rng.gen_range(0.05..0.5)
                } else {
                    0.0
                },
                ..TrainConfig::default()
            };
            let (gp, gq) = gradients(&model, 0, 0, 4.0, Some(&graph), &config).unwrap();
            let (fgp, fgq) = fd_gradients(&model, &data, Some(&graph), &config, 0, 0, 1e-6);
            for f in 0..k {
                assert!(
                    rel_err(gp[f], fgp[f]) < 1e-5,
                    "p gradient mismatch: {} vs {}",
                    gp[f],
                    fgp[f]
                );
                assert!(
                    rel_err(gq[f], fgq[f]) < 1e-5,
                    "q gradient mismatch: {} vs {}",
                    gq[f],
                    fgq[f]
                );
            }
        }
    }

    #[test]
    fn sgd_step_frozen_example() {
        let mut model =
            FactorModel::from_parts(2, 1, 1, vec![1.0, 0.0], vec![0.5, 0.5], 0).unwrap();
        let config = TrainConfig {
            lambda1: 0.1,
            lambda2: 0.1,
            beta: 0.0,
            eta: 0.005,
            ..TrainConfig::default()
        };
        sgd_step(&mut model, 0, 0, 4.0, None, &config).unwrap();
        assert_relative_eq!(model.user_factor(0)[0], 1.00825, max_relative = 1e-12);
        assert_relative_eq!(model.user_factor(0)[1], 0.00875, max_relative = 1e-12);
    }

    #[test]
    fn sgd_step_beta_zero_is_plain_rule() {
        let graph = SimilarityGraph::from_edges(2, &[(0, 1, 0.9)]).unwrap();
        let mut a = init_model(2, 2, 3, 4).unwrap();
        let mut b = a.clone();
        let with_graph = cfg(0.0);
        sgd_step(&mut a, 0, 0, 5.0, Some(&graph), &with_graph).unwrap();
        sgd_step(&mut b, 0, 0, 5.0, None, &with_graph).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_step_isolated_item_is_plain_rule() {
        // item 0 has no neighbors; only 1-2 are connected
        let graph = SimilarityGraph::from_edges(3, &[(1, 2, 0.7)]).unwrap();
        let mut a = init_model(2, 3, 3, 4).unwrap();
        let mut b = a.clone();
        sgd_step(&mut a, 0, 0, 5.0, Some(&graph), &cfg(0.5)).unwrap();
        sgd_step(&mut b, 0, 0, 5.0, None, &cfg(0.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_step_coupled_pulls_toward_neighbor() {
        // two items, fully weighted edge; the rated item's vector should
        // move toward its neighbor relative to the uncoupled update
        let graph = SimilarityGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        let k = 1;
        let make = || {
            FactorModel::from_parts(k, 1, 2, vec![0.5], vec![0.0, 1.0], 0).unwrap()
        };
        let mut coupled = make();
        let mut plain = make();
        let config = TrainConfig {
            beta: 0.5,
            lambda1: 0.0,
            lambda2: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut coupled, 0, 0, 1.0, Some(&graph), &config).unwrap();
        sgd_step(&mut plain, 0, 0, 1.0, None, &cfg(0.0)).unwrap();
        // neighbor q_1 = 1.0 > q_0, so the coupled update is larger
        assert!(coupled.item_factor(0)[0] > plain.item_factor(0)[0]);
    }

    #[test]
    fn train_rank_one_fixed_point() {
        let data = single_rating_matrix();
        let config = TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            beta: 0.0,
            eta: 0.005,
            latent_dim: 1,
            max_epochs: 5000,
            epsilon: 0.0,
            seed: 9,
            visit_order: VisitOrder::File,
        };
        let (model, _) = train(&data, None, &config).unwrap();
        let pred = predict(&model, 0, 0).unwrap();
        assert!(
            (pred - 4.0).abs() < 1e-3,
            "rank-1 prediction {pred} did not converge to 4"
        );
    }

    #[test]
    fn train_is_deterministic() {
        let data = load_ratings(
            "a\tx\t4\nb\tx\t2\na\ty\t5\nc\tz\t1\n".as_bytes(),
            RatingsFormat::GenericTsv,
            scale(),
        )
        .unwrap();
        let config = TrainConfig {
            max_epochs: 20,
            beta: 0.0,
            ..TrainConfig::default()
        };
        let (m1, t1) = train(&data, None, &config).unwrap();
        let (m2, t2) = train(&data, None, &config).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn train_beta_zero_bitwise_equals_plain_path() {
        let data = load_ratings(
            "a\tx\t4\nb\tx\t2\na\ty\t5\nc\tz\t1\n".as_bytes(),
            RatingsFormat::GenericTsv,
            scale(),
        )
        .unwrap();
        let graph =
            SimilarityGraph::from_edges(3, &[(0, 1, 0.5), (1, 2, 0.25)]).unwrap();
        let config = TrainConfig {
            max_epochs: 25,
            beta: 0.0,
            ..TrainConfig::default()
        };
        let (with_graph, _) = train(&data, Some(&graph), &config).unwrap();
        let (without, _) = train(&data, None, &config).unwrap();
        assert_eq!(with_graph, without);
    }

    #[test]
    fn train_requires_graph_when_beta_positive() {
        let data = single_rating_matrix();
        assert!(matches!(
            train(&data, None, &cfg(0.1)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn train_rejects_mismatched_graph() {
        let data = single_rating_matrix();
        let graph = SimilarityGraph::from_edges(5, &[(0, 1, 0.5)]).unwrap();
        assert!(matches!(
            train(&data, Some(&graph), &cfg(0.1)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn train_reports_divergence_epoch() {
        let data = load_ratings(
            "a\tx\t5\nb\tx\t5\na\ty\t5\nb\ty\t5\n".as_bytes(),
            RatingsFormat::GenericTsv,
            scale(),
        )
        .unwrap();
        let config = TrainConfig {
            eta: 1e6,
            lambda1: 0.0,
            lambda2: 0.0,
            beta: 0.0,
            max_epochs: 50,
            epsilon: 0.0,
            ..TrainConfig::default()
        };
        match train(&data, None, &config) {
            Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trace_length_matches_epochs() {
        let data = single_rating_matrix();
        let config = TrainConfig {
            beta: 0.0,
            max_epochs: 7,
            epsilon: 0.0,
            latent_dim: 2,
            ..TrainConfig::default()
        };
        let (_, trace) = train(&data, None, &config).unwrap();
        assert_eq!(trace.objective_per_epoch.len(), trace.epochs_run);
        assert!(trace.epochs_run <= 7);

        // generous epsilon stops early with the converged reason
        let lazy = TrainConfig {
            epsilon: 1e9,
            ..config
        };
        let (_, trace) = train(&data, None, &lazy).unwrap();
        assert_eq!(trace.stop_reason, StopReason::Converged);
        assert_eq!(trace.epochs_run, 2);
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let model = init_model(4, 6, 3, 123).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let reloaded = read_model(buf.as_slice()).unwrap();
        assert_eq!(model, reloaded);
    }

    #[test]
    fn model_file_rejects_truncation() {
        let model = init_model(2, 2, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(read_model(truncated.as_bytes()).is_err());
    }

    #[test]
    fn trace_csv_format() {
        let trace = TrainTrace {
            objective_per_epoch: vec![10.5, 9.25],
            epochs_run: 2,
            stop_reason: StopReason::MaxEpochs,
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,objective\n1,10.5\n2,9.25\n");
    }
}
