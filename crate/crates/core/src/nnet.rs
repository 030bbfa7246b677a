//! Two-layer frame scoring network with hand-written gradients.
//!
//! `h = relu(W1 x + b1)` gives hidden features per frame and
//! `f = W2 h + b2` the unnormalized class scores. Matrices are laid out with
//! one column per frame.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ActionSet, ClassId};

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_LOSS_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl NetworkParams {
    pub fn zeros(input_dim: usize, hidden: usize, num_classes: usize) -> Self {
        NetworkParams {
            w1: Array2::zeros((hidden, input_dim)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((num_classes, hidden)),
            b2: Array1::zeros(num_classes),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let uniform = |fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            move |rng: &mut R| rng.random_range(-bound..=bound)
        };
        let draw1 = uniform(input_dim);
        let w1 = Array2::from_shape_simple_fn((hidden, input_dim), || draw1(rng));
        let b1 = Array1::from_shape_simple_fn(hidden, || draw1(rng));
        let draw2 = uniform(hidden);
        let w2 = Array2::from_shape_simple_fn((num_classes, hidden), || draw2(rng));
        let b2 = Array1::from_shape_simple_fn(num_classes, || draw2(rng));
        NetworkParams { w1, b1, w2, b2 }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = self.w1.dim();
        if h == 0 {
            return Err(Error::Dimension(
                "network needs at least one hidden unit".into(),
            ));
        }
        if self.b1.len() != h || self.w2.ncols() != h || self.b2.len() != self.w2.nrows() {
            return Err(Error::Dimension(format!(
                "inconsistent shapes: W1 {h}x{d}, b1 {}, W2 {:?}, b2 {}",
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }
}

/// Per-video activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Post-ReLU hidden features, `n_h x T`.
    pub h: Array2<f64>,
    /// Class scores, `|C| x T`.
    pub f: Array2<f64>,
    pub softmax: Array2<f64>,
    pub log_softmax: Array2<f64>,
}

impl ForwardCache {
    pub fn num_frames(&self) -> usize {
        self.f.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.f.nrows()
    }

    /// Builds a cache straight from class scores; `h` is empty.
    pub fn from_scores(f: Array2<f64>) -> Self {
        let (softmax, log_softmax) = column_softmax(&f);
        let h = Array2::zeros((0, f.ncols()));
        ForwardCache {
            h,
            f,
            softmax,
            log_softmax,
        }
    }
}

pub fn forward(params: &NetworkParams, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
    if x.nrows() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "features have {} rows, network expects {}",
            x.nrows(),
            params.input_dim()
        )));
    }
    let mut h = params.w1.dot(&x);
    Zip::from(h.rows_mut())
        .and(&params.b1)
        .for_each(|mut row, &b| {
            row.mapv_inplace(|v| (v + b).max(0.0));
        });
    let mut f = params.w2.dot(&h);
    Zip::from(f.rows_mut())
        .and(&params.b2)
        .for_each(|mut row, &b| row += b);
    let (softmax, log_softmax) = column_softmax(&f);
    Ok(ForwardCache {
        h,
        f,
        softmax,
        log_softmax,
    })
}

fn column_softmax(f: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut log_softmax = f.clone();
    for mut col in log_softmax.columns_mut() {
        let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + col.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        col.mapv_inplace(|v| v - lse);
    }
    let softmax = log_softmax.mapv(f64::exp);
    (softmax, log_softmax)
}

/// Frame-summed cross-entropy against pseudo labels and its gradient with
/// respect to `f` (`softmax - onehot` per column).
pub fn ce_loss_and_grad(cache: &ForwardCache, labels: &[ClassId]) -> Result<(f64, Array2<f64>)> {
    if labels.len() != cache.num_frames() {
        return Err(Error::Dimension(format!(
            "{} labels for {} frames",
            labels.len(),
            cache.num_frames()
        )));
    }
    let mut grad = cache.softmax.clone();
    let mut loss = 0.0;
    for (t, &c) in labels.iter().enumerate() {
        if c >= cache.num_classes() {
            return Err(Error::UnknownClass(c));
        }
        loss -= cache.log_softmax[[c, t]];
        grad[[c, t]] -= 1.0;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFeature {
    pub class: ClassId,
    pub vector: Array1<f64>,
    pub mode: FeatureMode,
}

/// Average hidden feature per class.
///
/// Hard mode averages the columns labelled with each class present in
/// `labels`; soft mode weights every column by its softmax score and yields
/// one feature per vocabulary class.
pub fn class_features(
    cache: &ForwardCache,
    labels: Option<&[ClassId]>,
    mode: FeatureMode,
) -> Result<Vec<ClassFeature>> {
    let t_len = cache.num_frames();
    match mode {
        FeatureMode::Hard => {
            let labels = labels
                .ok_or_else(|| Error::InvalidArgument("hard class features need labels".into()))?;
            if labels.len() != t_len {
                return Err(Error::Dimension(format!(
                    "{} labels for {t_len} frames",
                    labels.len()
                )));
            }
            let k = cache.num_classes();
            let mut sums = Array2::<f64>::zeros((k, cache.h.nrows()));
            let mut counts = vec![0usize; k];
            for (t, &c) in labels.iter().enumerate() {
                if c >= k {
                    return Err(Error::UnknownClass(c));
                }
                counts[c] += 1;
                let mut row = sums.row_mut(c);
                row += &cache.h.column(t);
            }
            Ok((0..k)
                .filter(|&c| counts[c] > 0)
                .map(|c| ClassFeature {
                    class: c,
                    vector: sums.row(c).mapv(|v| v / counts[c] as f64),
                    mode,
                })
                .collect())
        }
        FeatureMode::Soft => {
            // n_h x |C|
            let weighted = cache.h.dot(&cache.softmax.t());
            Ok(weighted
                .columns()
                .into_iter()
                .enumerate()
                .map(|(c, v)| ClassFeature {
                    class: c,
                    vector: v.to_owned(),
                    mode,
                })
                .collect())
        }
    }
}

/// `1 - cos(u, w)`. A zero vector on either side is treated as orthogonal.
pub fn cosine_distance(u: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>) -> f64 {
    cosine_distance_and_grad(u, w).0
}

fn cosine_distance_and_grad(
    u: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
) -> (f64, Array1<f64>, Array1<f64>) {
    let nu = u.dot(&u).sqrt();
    let nw = w.dot(&w).sqrt();
    if nu == 0.0 || nw == 0.0 {
        log::debug!("zero class feature in cosine distance; using distance 1");
        return (1.0, Array1::zeros(u.len()), Array1::zeros(w.len()));
    }
    let dot = u.dot(&w);
    let cos = dot / (nu * nw);
    // d(1 - cos)/du = -(w/(|u||w|) - cos * u/|u|^2)
    let gu = (&u * (cos / (nu * nu))) - &(&w / (nu * nw));
    let gw = (&w * (cos / (nw * nw))) - &(&u / (nu * nw));
    (1.0 - cos, gu, gw)
}

/// Which margin loss regularizes hidden features across a video pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    None,
    /// Only pulls shared-class features together (non-shared distances fixed at 0).
    Base,
    #[default]
    Npair,
}

/// Gradients of a pair loss with respect to each video's activations.
#[derive(Debug, Clone)]
pub struct PairGrads {
    pub h: [Array2<f64>; 2],
    /// Nonzero only in soft mode.
    pub f: [Array2<f64>; 2],
}

/// Inputs describing one video of a regularized pair.
#[derive(Debug, Clone, Copy)]
pub struct PairSide<'a> {
    pub cache: &'a ForwardCache,
    pub set: &'a ActionSet,
    pub labels: &'a [ClassId],
}

/// Exp term of one non-shared class, with which side it came from, the class
/// and gradients with respect to both features; `None` for a constant term.
type PairTerm = (f64, Option<(bool, ClassId, Array1<f64>, Array1<f64>)>);

/// n-pair loss between the class features of two videos.
///
/// For each shared class `c` with features on both sides,
/// `log(1 + sum_a exp(d_cc - d_ac) + sum_b exp(d_cc - d_cb))` where `a`
/// ranges over classes only in the first video and `b` over classes only in
/// the second; the result is averaged over contributing shared classes. With
/// [`Regularizer::Base`] the non-shared distances are held at zero.
pub fn npair_loss_and_grad(
    v: PairSide<'_>,
    w: PairSide<'_>,
    mode: FeatureMode,
    kind: Regularizer,
) -> Result<(f64, PairGrads)> {
    let zero_grads = || PairGrads {
        h: [
            Array2::zeros(v.cache.h.raw_dim()),
            Array2::zeros(w.cache.h.raw_dim()),
        ],
        f: [
            Array2::zeros(v.cache.f.raw_dim()),
            Array2::zeros(w.cache.f.raw_dim()),
        ],
    };
    if v.cache.h.nrows() != w.cache.h.nrows() || v.cache.num_classes() != w.cache.num_classes() {
        return Err(Error::Dimension(
            "pair caches come from different networks".into(),
        ));
    }
    let shared = v.set.intersection(w.set);
    if kind == Regularizer::None || shared.is_empty() {
        return Ok((0.0, zero_grads()));
    }
    let only_v = v.set.difference(&shared);
    let only_w = w.set.difference(&shared);

    let k = v.cache.num_classes();
    let lookup = |side: PairSide<'_>| -> Result<Vec<Option<Array1<f64>>>> {
        let mut table = vec![None; k];
        for feat in class_features(side.cache, Some(side.labels), mode)? {
            table[feat.class] = Some(feat.vector);
        }
        Ok(table)
    };
    let feats_v = lookup(v)?;
    let feats_w = lookup(w)?;
    let n_h = v.cache.h.nrows();
    let mut grad_feat_v = vec![Array1::<f64>::zeros(n_h); k];
    let mut grad_feat_w = vec![Array1::<f64>::zeros(n_h); k];

    let contributing: Vec<ClassId> = shared
        .iter()
        .filter(|&c| feats_v[c].is_some() && feats_w[c].is_some())
        .collect();
    if contributing.is_empty() {
        return Ok((0.0, zero_grads()));
    }
    let scale = 1.0 / contributing.len() as f64;
    let mut loss = 0.0;

    for &c in &contributing {
        let hv_c = feats_v[c].as_ref().unwrap();
        let hw_c = feats_w[c].as_ref().unwrap();
        let (d_cc, g_cc_v, g_cc_w) = cosine_distance_and_grad(hv_c.view(), hw_c.view());
        let mut terms: Vec<PairTerm> = Vec::new();
        for a in only_v.iter() {
            let Some(hv_a) = feats_v[a].as_ref() else {
                continue;
            };
            match kind {
                Regularizer::Base => terms.push((d_cc.exp(), None)),
                _ => {
                    let (d, ga, gc) = cosine_distance_and_grad(hv_a.view(), hw_c.view());
                    terms.push(((d_cc - d).exp(), Some((true, a, ga, gc))));
                }
            }
        }
        for b in only_w.iter() {
            let Some(hw_b) = feats_w[b].as_ref() else {
                continue;
            };
            match kind {
                Regularizer::Base => terms.push((d_cc.exp(), None)),
                _ => {
                    let (d, gc, gb) = cosine_distance_and_grad(hv_c.view(), hw_b.view());
                    terms.push(((d_cc - d).exp(), Some((false, b, gc, gb))));
                }
            }
        }
        let z: f64 = 1.0 + terms.iter().map(|(e, _)| e).sum::<f64>();
        loss += scale * z.ln();

        // dL/dd_cc = scale * (z - 1)/z ; dL/dd_other = -scale * e/z
        let dcc = scale * (z - 1.0) / z;
        grad_feat_v[c].scaled_add(dcc, &g_cc_v);
        grad_feat_w[c].scaled_add(dcc, &g_cc_w);
        for (e, detail) in terms {
            let Some((from_v, other, g_first, g_second)) = detail else {
                continue;
            };
            let coef = -scale * e / z;
            if from_v {
                // distance(h_v^a, h_w^c)
                grad_feat_v[other].scaled_add(coef, &g_first);
                grad_feat_w[c].scaled_add(coef, &g_second);
            } else {
                // distance(h_v^c, h_w^b)
                grad_feat_v[c].scaled_add(coef, &g_first);
                grad_feat_w[other].scaled_add(coef, &g_second);
            }
        }
    }

    let (gh_v, gf_v) = feature_grads_to_activations(v, &grad_feat_v, mode);
    let (gh_w, gf_w) = feature_grads_to_activations(w, &grad_feat_w, mode);
    Ok((
        loss,
        PairGrads {
            h: [gh_v, gh_w],
            f: [gf_v, gf_w],
        },
    ))
}

fn feature_grads_to_activations(
    side: PairSide<'_>,
    grad_feat: &[Array1<f64>],
    mode: FeatureMode,
) -> (Array2<f64>, Array2<f64>) {
    let cache = side.cache;
    let k = cache.num_classes();
    let mut grad_h = Array2::<f64>::zeros(cache.h.raw_dim());
    let mut grad_f = Array2::<f64>::zeros(cache.f.raw_dim());
    match mode {
        FeatureMode::Hard => {
            let mut counts = vec![0usize; k];
            for &c in side.labels {
                counts[c] += 1;
            }
            for (t, &c) in side.labels.iter().enumerate() {
                let mut col = grad_h.column_mut(t);
                col.scaled_add(1.0 / counts[c] as f64, &grad_feat[c]);
            }
        }
        FeatureMode::Soft => {
            // feature_c = sum_t h_t s[c,t]
            let g = Array2::from_shape_fn((cache.h.nrows(), k), |(i, c)| grad_feat[c][i]);
            grad_h = g.dot(&cache.softmax);
            let grad_s = g.t().dot(&cache.h); // |C| x T
            for t in 0..cache.num_frames() {
                let s = cache.softmax.column(t);
                let gs = grad_s.column(t);
                let inner = s.dot(&gs);
                let mut out = grad_f.column_mut(t);
                Zip::from(&mut out)
                    .and(&s)
                    .and(&gs)
                    .for_each(|o, &si, &gi| *o = si * (gi - inner));
            }
        }
    }
    (grad_h, grad_f)
}

pub fn total_loss(ce: f64, np: f64, weight: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidArgument(format!(
            "loss weight {weight} outside [0, 1]"
        )));
    }
    Ok(weight * ce + (1.0 - weight) * np)
}

/// Parameter gradients, same shapes as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            w1: Array2::zeros(params.w1.raw_dim()),
            b1: Array1::zeros(params.b1.raw_dim()),
            w2: Array2::zeros(params.w2.raw_dim()),
            b2: Array1::zeros(params.b2.raw_dim()),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }
}

/// Backpropagates loss gradients on `f` and (optionally) directly on `h`
/// into the weights. The ReLU passes gradient only where `h > 0`.
pub fn backward(
    params: &NetworkParams,
    x: ArrayView2<'_, f64>,
    cache: &ForwardCache,
    grad_f: &Array2<f64>,
    grad_h: Option<&Array2<f64>>,
) -> Result<Gradients> {
    if grad_f.dim() != cache.f.dim() {
        return Err(Error::Dimension("grad_f shape differs from f".into()));
    }
    let w2 = grad_f.dot(&cache.h.t());
    let b2 = grad_f.sum_axis(Axis(1));
    let mut dh = params.w2.t().dot(grad_f);
    if let Some(gh) = grad_h {
        if gh.dim() != dh.dim() {
            return Err(Error::Dimension("grad_h shape differs from h".into()));
        }
        dh += gh;
    }
    Zip::from(&mut dh).and(&cache.h).for_each(|g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    let w1 = dh.dot(&x.t());
    let b1 = dh.sum_axis(Axis(1));
    Ok(Gradients { w1, b1, w2, b2 })
}

pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} must be positive"
        )));
    }
    if grads.w1.dim() != params.w1.dim() || grads.w2.dim() != params.w2.dim() {
        return Err(Error::Dimension(
            "gradient shapes differ from parameters".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    params.w1.scaled_add(-lr, &grads.w1);
    params.b1.scaled_add(-lr, &grads.b1);
    params.w2.scaled_add(-lr, &grads.w2);
    params.b2.scaled_add(-lr, &grads.b2);
    Ok(())
}
