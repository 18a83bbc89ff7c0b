use crate::data::LabeledDataset;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{spatial_sum, Tensor};

use super::model::{LayerParams, Model};
use super::spec::{FeatureShape, LayerSpec, NetworkSpec};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Config(format!("{what} must be positive")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate");
        }
        if self.batch_size == 0 {
            return bad("batch size");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init scale");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of samples whose pre-update prediction was correct.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
}

/// Minibatch SGD on mean cross-entropy from a seeded initialisation.
pub fn train(spec: &NetworkSpec, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    let model = Model::init(spec.clone(), cfg.seed, cfg.init_scale);
    continue_training(model, dataset, cfg)
}

/// Runs `cfg.epochs` epochs of SGD starting from `model`.
pub fn continue_training(mut model: Model, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if dataset.num_classes() > model.num_classes() {
        return Err(ModelError::LabelOutOfRange {
            label: dataset.num_classes() - 1,
            classes: model.num_classes(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        SplitMix64::new(derive_seed(cfg.seed, epoch as u64 + 1)).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let images: Vec<&Tensor> = batch.iter().map(|&i| &dataset.images()[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels()[i]).collect();
            let (loss, hits, grads) = model.batch_gradients(&images, &labels)?;
            model.apply(&grads, cfg.learning_rate);
            loss_sum += loss * batch.len() as f64;
            correct += hits;
        }
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
            train_accuracy: correct as f64 / dataset.len() as f64,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Fraction of the dataset whose top-1 prediction matches the label.
pub fn accuracy(model: &Model, dataset: &LabeledDataset) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut correct = 0;
    for (img, &label) in dataset.images().iter().zip(dataset.labels()) {
        correct += (model.predict_top1(img)? == label) as usize;
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Globally pooled features of layer `layer_index` for one image, shaped
/// `[c, 1, 1]` (flat layers are passed through).
pub fn readout_features(model: &Model, image: &Tensor, layer_index: usize) -> Result<Tensor, ModelError> {
    let act = model.layer_activations(image, layer_index)?;
    let info = model.spec().info()[layer_index].output;
    let values = if info.spatial {
        let area = (info.height * info.width) as f64;
        spatial_sum(&act).expect("rank-4 activations").into_iter().map(|v| v / area).collect()
    } else {
        act.into_data()
    };
    Ok(Tensor::new(vec![info.channels, 1, 1], values).expect("consistent shape"))
}

/// Trains a `gap → dense → softmax` head on frozen features of layer
/// `layer_index`. The returned model is the frozen prefix plus the head.
pub fn train_readout(model: &Model, layer_index: usize, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    let layers = model.spec().layers().len();
    if layer_index >= layers {
        return Err(ModelError::LayerIndex {
            index: layer_index,
            layers,
        });
    }
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let info = model.spec().info()[layer_index].output;
    let classes = dataset.num_classes();

    let features = dataset
        .images()
        .iter()
        .map(|img| readout_features(model, img, layer_index))
        .collect::<Result<Vec<_>, _>>()?;
    let feature_set = LabeledDataset::new(features, dataset.labels().to_vec(), classes)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let head_spec = NetworkSpec::new(
        FeatureShape::image(info.channels, 1, 1),
        vec![LayerSpec::Dense { units: classes }, LayerSpec::Softmax],
    )?;
    let head = train(&head_spec, &feature_set, cfg)?;

    let mut spec_layers = model.spec().prefix(layer_index).to_vec();
    let mut params = model.params()[..=layer_index].to_vec();
    if info.spatial {
        spec_layers.push(LayerSpec::Gap);
        params.push(None);
    }
    spec_layers.push(LayerSpec::Dense { units: classes });
    let dense: Option<LayerParams> = head.model.params()[0].clone();
    params.push(dense);
    spec_layers.push(LayerSpec::Softmax);
    params.push(None);
    let spec = NetworkSpec::new(model.spec().input(), spec_layers)?;
    let composite = Model::from_parts(spec, params, cfg.seed)?;
    Ok(TrainOutcome {
        model: composite,
        history: head.history,
    })
}
