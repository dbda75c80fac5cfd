use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Bound, Linear, ParamSet, Tape, Tensor, Var};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::pointcore::{PointCloud, PoolingMap};
use crate::sched::{AdamW, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    Linear,
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub n_classes: usize,
    /// Width of the decoder probe's shared hidden layer.
    pub decoder_hidden: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 50,
            lr: 1e-3,
            n_classes: crate::synthgen::NUM_CLASSES,
            decoder_hidden: 64,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.n_classes < 2 || self.decoder_hidden == 0 {
            return Err(Error::Config(
                "probe needs epochs >= 1, n_classes >= 2 and decoder_hidden >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("probe lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub mode: ProbeMode,
    /// IoU per class; `None` for classes absent from the evaluation labels.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub accuracy: f64,
    pub probe_params: usize,
    pub encoder_params: usize,
    pub total_params: usize,
    pub probe_fraction: f64,
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
}

/// Frozen per-stage features of one labeled scene.
#[derive(Debug, Clone)]
pub struct ProbeData {
    pub stage_features: Vec<Tensor>,
    pub maps: Vec<Arc<PoolingMap>>,
    pub labels: Vec<u32>,
}

impl ProbeData {
    pub fn extract(
        encoder: &Encoder,
        params: &ParamSet,
        scene: &PointCloud,
        n_classes: usize,
    ) -> Result<ProbeData> {
        let labels = scene
            .label
            .clone()
            .ok_or_else(|| Error::Data("probe scenes need labels".into()))?;
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::Data(format!(
                "label {bad} outside the {n_classes} known classes"
            )));
        }
        let (stage_features, st) = encoder.encode_frozen(params, scene)?;
        Ok(ProbeData {
            stage_features,
            maps: st.maps,
            labels,
        })
    }
}

/// Probe head over per-stage features. Both modes project each stage, carry
/// the deepest projection down the pooling hierarchy and add the finer ones;
/// for the linear probe that is exactly one linear layer over the fully
/// up-cast features, split by column block.
struct ProbeModel {
    mode: ProbeMode,
    proj: Vec<Linear>,
    classifier: Option<Linear>,
}

impl ProbeModel {
    fn init(
        mode: ProbeMode,
        widths: &[usize],
        cfg: &ProbeConfig,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> ProbeModel {
        let out = match mode {
            ProbeMode::Linear => cfg.n_classes,
            ProbeMode::Decoder => cfg.decoder_hidden,
        };
        let proj = widths
            .iter()
            .enumerate()
            .map(|(s, &c)| Linear::init(params, &format!("probe.stage{s}"), c, out, None, rng))
            .collect();
        let classifier = (mode == ProbeMode::Decoder).then(|| {
            Linear::init(
                params,
                "probe.classifier",
                cfg.decoder_hidden,
                cfg.n_classes,
                None,
                rng,
            )
        });
        ProbeModel {
            mode,
            proj,
            classifier,
        }
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, data: &ProbeData) -> Result<Var> {
        let n = data.stage_features.len();
        let mut acc: Option<Var> = None;
        for s in (0..n).rev() {
            let f = tape.constant(data.stage_features[s].clone());
            let y = tape.matmul(f, bound.var(self.proj[s].w))?;
            acc = Some(match acc {
                None => y,
                Some(a) => {
                    let g = tape.gather(a, Arc::new(data.maps[s].parent.clone()))?;
                    tape.add(g, y)?
                }
            });
        }
        let mut acc = acc.expect("at least one stage");
        // Only one bias survives; the per-stage ones would be redundant.
        acc = tape.add_row(acc, bound.var(self.proj[0].b))?;
        if let (ProbeMode::Decoder, Some(c)) = (self.mode, &self.classifier) {
            let h = tape.gelu(acc);
            acc = c.forward(tape, bound, h)?;
        }
        Ok(acc)
    }

    fn n_params(&self, params: &ParamSet) -> usize {
        // Stage biases other than stage 0 never enter the forward pass.
        let unused: usize = self.proj[1..]
            .iter()
            .map(|l| params.get(l.b).value.len())
            .sum();
        params.numel() - unused
    }
}

fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[u32]) -> Result<Var> {
    let [n, k] = tape.value(logits).shape();
    let lp = tape.log_softmax(logits, 1)?;
    let mut target = Tensor::zeros(n, k);
    for (i, &l) in labels.iter().enumerate() {
        target.set(i, l as usize, -1.0 / n as f64);
    }
    let t = tape.constant(target);
    let prod = tape.mul(lp, t)?;
    Ok(tape.sum(prod))
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best as u32
}

/// Per-class IoU (over classes present in `truth`), mIoU and accuracy.
pub fn segmentation_scores(
    pred: &[u32],
    truth: &[u32],
    n_classes: usize,
) -> (Vec<Option<f64>>, f64, f64) {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[t as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[t as usize] += 1;
        }
    }
    let iou: Vec<Option<f64>> = (0..n_classes)
        .map(|c| (tp[c] + fn_[c] > 0).then(|| tp[c] as f64 / (tp[c] + fp[c] + fn_[c]) as f64))
        .collect();
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let acc = if truth.is_empty() {
        0.0
    } else {
        tp.iter().sum::<usize>() as f64 / truth.len() as f64
    };
    (iou, miou, acc)
}

/// Trains a probe on `train` and scores it on `test`. Encoder parameter counts
/// in the report are left at zero.
pub fn fit_probe(
    mode: ProbeMode,
    train: &[ProbeData],
    test: &[ProbeData],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::Data("probe needs training scenes".into()))?;
    let widths: Vec<usize> = first.stage_features.iter().map(Tensor::cols).collect();
    for d in train.iter().chain(test) {
        let w: Vec<usize> = d.stage_features.iter().map(Tensor::cols).collect();
        if w != widths || d.labels.len() != d.stage_features[0].rows() {
            return Err(Error::Data(
                "probe scenes have inconsistent feature layouts".into(),
            ));
        }
        if d.labels.iter().any(|&l| l as usize >= cfg.n_classes) {
            return Err(Error::Data(format!(
                "label outside the {} known classes",
                cfg.n_classes
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    let model = ProbeModel::init(mode, &widths, cfg, &mut params, &mut rng);
    let mut opt = AdamW::new(&params, AdamWConfig::default());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, &params, true);
            let logits = model.forward(&mut tape, &bound, &train[i])?;
            let loss = cross_entropy(&mut tape, logits, &train[i].labels)?;
            total += tape.value(loss).item();
            let grads = bound.grads(&tape.backward(loss)?);
            opt.update(&mut params, &grads, cfg.lr, 0.0, 1, 1.0)?;
        }
        curve.push(total / train.len() as f64);
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for d in test {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &params, false);
        let logits = model.forward(&mut tape, &bound, d)?;
        let l = tape.value(logits);
        pred.extend((0..l.rows()).map(|r| argmax(l.row(r))));
        truth.extend_from_slice(&d.labels);
    }
    let (per_class_iou, miou, accuracy) = segmentation_scores(&pred, &truth, cfg.n_classes);
    let probe_params = model.n_params(&params);
    Ok(ProbeReport {
        mode,
        per_class_iou,
        miou,
        accuracy,
        probe_params,
        encoder_params: 0,
        total_params: probe_params,
        probe_fraction: 1.0,
        curve,
    })
}

fn run(
    mode: ProbeMode,
    encoder: &Encoder,
    params: &ParamSet,
    train: &[PointCloud],
    test: &[PointCloud],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    cfg.validate()?;
    let before = params.checksum();
    let extract = |scenes: &[PointCloud]| -> Result<Vec<ProbeData>> {
        scenes
            .par_iter()
            .map(|s| ProbeData::extract(encoder, params, s, cfg.n_classes))
            .collect()
    };
    let train_data = extract(train)?;
    let test_data = extract(test)?;
    let mut report = fit_probe(mode, &train_data, &test_data, cfg)?;
    assert_eq!(
        before,
        params.checksum(),
        "probing modified the frozen encoder"
    );
    report.encoder_params = params.numel_prefixed("encoder.");
    report.total_params = report.encoder_params + report.probe_params;
    report.probe_fraction = report.probe_params as f64 / report.total_params as f64;
    Ok(report)
}

/// One linear layer on frozen, fully up-cast encoder features.
pub fn linear_probe(
    encoder: &Encoder,
    params: &ParamSet,
    train: &[PointCloud],
    test: &[PointCloud],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    run(ProbeMode::Linear, encoder, params, train, test, cfg)
}

/// Per-stage projections summed through the pooling hierarchy, a GELU and a
/// linear classifier, on the frozen encoder.
pub fn decoder_probe(
    encoder: &Encoder,
    params: &ParamSet,
    train: &[PointCloud],
    test: &[PointCloud],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    run(ProbeMode::Decoder, encoder, params, train, test, cfg)
}
