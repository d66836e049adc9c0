use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::{add_assign, head_grad, scale, HeadForward, Triplet};
use super::loss::DEFAULT_MARGIN;
use super::mining::{mine_triplets, MiningConfig};
use super::optim::OptimState;
use crate::aggregate::HeadParams;
use crate::encoder::MultiLevelTokens;
use crate::error::{Error, Result};
use crate::numeric::{Rng, Scalar};
use crate::retrieval::PlaceTag;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub margin: f64,
    pub mining: MiningConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            lr: 1e-3,
            margin: DEFAULT_MARGIN,
            mining: MiningConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T = f32> {
    pub params: HeadParams<T>,
    /// Mean triplet loss per epoch, each triplet evaluated just before the
    /// step that consumed it.
    pub epoch_losses: Vec<f64>,
    pub triplets_per_epoch: Vec<usize>,
}

/// Current global descriptors of every training image.
pub fn current_globals<T: Scalar>(tokens: &[MultiLevelTokens<T>], params: &HeadParams<T>) -> Result<Vec<Vec<T>>> {
    tokens
        .par_iter()
        .map(|t| HeadForward::new(t, params).map(|f| f.global))
        .collect()
}

/// Per-triplet gradients held in memory at once; they are summed in batch
/// order, so the grouping does not change the result.
const GRAD_GROUP: usize = 32;

/// Head-only training over frozen tokens: every epoch re-mines triplets with
/// the current head, shuffles them, and takes one optimizer step per batch.
pub fn train_head<T: Scalar>(
    tokens: &[MultiLevelTokens<T>],
    tags: &[PlaceTag],
    initial: &HeadParams<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if tokens.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if !(config.margin >= 0.0) || !(config.lr >= 0.0) {
        return Err(Error::config("margin and learning rate must be non-negative"));
    }
    let margin = T::lit(config.margin);
    let mut params = initial.clone();
    let mut opt = OptimState::new(&params, config.lr);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut triplets_per_epoch = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let globals = current_globals(tokens, &params)?;
        let mined = mine_triplets(&globals, tags, &config.mining)?;
        let combos: Vec<(usize, usize, usize)> = mined
            .triplets
            .iter()
            .flat_map(|t| t.negatives.iter().map(move |&n| (t.query, t.positive, n)))
            .collect();
        if combos.is_empty() {
            return Err(Error::validation(format!(
                "mining produced no triplets ({} queries without positive, {} without negative)",
                mined.skipped_no_positive, mined.skipped_no_negative
            )));
        }
        let mut order: Vec<usize> = (0..combos.len()).collect();
        Rng::stream(config.seed, epoch as u64).shuffle(&mut order);

        let mut losses = vec![0.0f64; combos.len()];
        for batch in order.chunks(config.batch_size) {
            let mut grad = params.zeros_like();
            for group in batch.chunks(GRAD_GROUP) {
                let results: Vec<(T, HeadParams<T>)> = group
                    .par_iter()
                    .map(|&c| {
                        let (q, p, n) = combos[c];
                        let t = Triplet { query: &tokens[q], positive: &tokens[p], negative: &tokens[n] };
                        head_grad(t, &params, margin)
                    })
                    .collect::<Result<_>>()?;
                for (&c, (loss, g)) in group.iter().zip(&results) {
                    losses[c] = loss.as_f64();
                    add_assign(&mut grad, g);
                }
            }
            scale(&mut grad, T::one() / T::lit(batch.len() as f64));
            opt.apply(&mut params, &grad);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        if !mean.is_finite() || params.validate(params.dim()).is_err() {
            return Err(Error::Diverged {
                epoch,
                message: format!("mean loss {mean}; lower the learning rate"),
            });
        }
        epoch_losses.push(mean);
        triplets_per_epoch.push(combos.len());
    }
    Ok(TrainOutcome { params, epoch_losses, triplets_per_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::AggregationVariant;
    use crate::numeric::Tensor;

    /// Two places, each seen three times with shared token statistics.
    fn clustered(rng: &mut Rng) -> (Vec<MultiLevelTokens<f64>>, Vec<PlaceTag>) {
        let (n, d) = (6, 4);
        let bases: Vec<Vec<f64>> = (0..2).map(|_| (0..n * d).map(|_| rng.normal()).collect()).collect();
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for view in 0..6 {
            let place = view % 2;
            let mut lvl = || Tensor::from_fn(&[n, d], |i| bases[place][i] + 0.3 * rng.normal());
            tokens.push(MultiLevelTokens {
                low: lvl(),
                mid: lvl(),
                high: lvl(),
                rows: 1,
                cols: n,
                centers: (0..n as i32).map(|k| [16 * k + 8, 8]).collect(),
            });
            tags.push(PlaceTag::at(format!("v{view}"), 100.0 * place as f64 + view as f64, 0.0));
        }
        (tokens, tags)
    }

    #[test]
    fn zero_rate_keeps_params_and_loss() {
        let mut rng = Rng::seed(11);
        let (tokens, tags) = clustered(&mut rng);
        let init = HeadParams::random(AggregationVariant::Standard, 4, &mut rng);
        let cfg = TrainConfig { epochs: 3, lr: 0.0, batch_size: 2, ..Default::default() };
        let out = train_head(&tokens, &tags, &init, &cfg).unwrap();
        assert_eq!(out.params, init);
        assert!(out.epoch_losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_epochs_is_identity_and_runs_repeat() {
        let mut rng = Rng::seed(12);
        let (tokens, tags) = clustered(&mut rng);
        let init = HeadParams::random(AggregationVariant::Plain, 4, &mut rng);
        let none = TrainConfig { epochs: 0, ..Default::default() };
        assert_eq!(train_head(&tokens, &tags, &init, &none).unwrap().params, init);
        let cfg = TrainConfig { epochs: 4, lr: 0.01, batch_size: 3, seed: 9, margin: 2.0, ..Default::default() };
        let a = train_head(&tokens, &tags, &init, &cfg).unwrap();
        let b = train_head(&tokens, &tags, &init, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, init);
    }

    #[test]
    fn separable_clusters_lower_the_loss() {
        let mut rng = Rng::seed(13);
        let (tokens, tags) = clustered(&mut rng);
        let init = HeadParams::random(AggregationVariant::Standard, 4, &mut rng);
        let cfg = TrainConfig { epochs: 30, lr: 0.01, batch_size: 4, margin: 0.5, ..Default::default() };
        let out = train_head(&tokens, &tags, &init, &cfg).unwrap();
        assert!(out.epoch_losses.last().unwrap() < out.epoch_losses.first().unwrap(), "{:?}", out.epoch_losses);
    }

    #[test]
    fn empty_yield_reports_counts() {
        let mut rng = Rng::seed(14);
        let (tokens, mut tags) = clustered(&mut rng);
        for (k, t) in tags.iter_mut().enumerate() {
            t.easting = 1000.0 * k as f64;
        }
        let init = HeadParams::random(AggregationVariant::Standard, 4, &mut rng);
        let err = train_head(&tokens, &tags, &init, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("6 queries without positive"), "{err}");
    }
}
