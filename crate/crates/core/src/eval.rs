//! Retrieval evaluation: distance matrix, CMC and mAP.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// Gallery items sharing both identity and camera with the query are ignored.
    CrossCamera,
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    pub protocol: Protocol,
    /// L2-normalise features before taking Euclidean distances.
    pub normalize: bool,
    /// Extract each query and gallery set in a single pass instead of image by
    /// image. Only batch attention is affected.
    pub batched: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { protocol: Protocol::CrossCamera, normalize: true, batched: false }
    }
}

/// Features with their identity and camera labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GallerySet {
    pub features: Tensor,
    pub identities: Vec<usize>,
    pub cameras: Vec<usize>,
    pub domain: String,
}

impl GallerySet {
    pub fn new(features: Tensor, identities: Vec<usize>, cameras: Vec<usize>, domain: &str) -> Result<Self> {
        let &[n, _] = features.shape() else {
            return Err(Error::Rank { op: "gallery set", expected: 2, shape: features.shape().to_vec() });
        };
        if identities.len() != n || cameras.len() != n {
            return Err(Error::dim("gallery set", &[n], &[identities.len(), cameras.len()]));
        }
        Ok(Self { features, identities, cameras, domain: domain.into() })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `cmc[k]` is the fraction of queries matched within the top `k + 1`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub config: EvalConfig,
}

impl EvalReport {
    /// CMC at 1-based rank `k`, saturating past the end of the curve.
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[(k.max(1) - 1).min(self.cmc.len() - 1)]
    }
}

fn normalized_rows(t: &Tensor) -> Vec<f64> {
    let d = t.shape()[1];
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(d) {
        let norm = math::sqrt(row.iter().map(|v| v * v).sum());
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Pairwise Euclidean distances `[Nq, Ng]`, optionally between L2-normalised rows.
pub fn pairwise_distances(q: &Tensor, g: &Tensor, normalize: bool) -> Result<Tensor> {
    let (&[nq, d], &[ng, dg]) = (q.shape(), g.shape()) else {
        return Err(Error::dim("distance_matrix", q.shape(), g.shape()));
    };
    if d != dg {
        return Err(Error::dim("distance_matrix", q.shape(), g.shape()));
    }
    let (qd, gd) =
        if normalize { (normalized_rows(q), normalized_rows(g)) } else { (q.data().to_vec(), g.data().to_vec()) };
    let mut out = vec![0.0; nq * ng];
    for i in 0..nq {
        let a = &qd[i * d..(i + 1) * d];
        for j in 0..ng {
            let b = &gd[j * d..(j + 1) * d];
            out[i * ng + j] = math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
        }
    }
    Tensor::new(&[nq, ng], out)
}

/// Euclidean distances between L2-normalised rows.
pub fn distance_matrix(q: &Tensor, g: &Tensor) -> Result<Tensor> {
    pairwise_distances(q, g, true)
}

/// Scores every query against the gallery.
pub fn evaluate(q: &GallerySet, g: &GallerySet, cfg: EvalConfig) -> Result<EvalReport> {
    if q.is_empty() || g.is_empty() {
        return Err(Error::Contract("evaluation needs non-empty query and gallery sets".into()));
    }
    let dist = pairwise_distances(&q.features, &g.features, cfg.normalize)?;
    let ng = g.len();
    let mut cmc = vec![0.0; ng];
    let mut aps = Vec::with_capacity(q.len());
    let mut order: Vec<usize> = Vec::with_capacity(ng);
    for qi in 0..q.len() {
        let row = &dist.data()[qi * ng..(qi + 1) * ng];
        order.clear();
        order.extend(0..ng);
        // stable sort: equal distances keep ascending gallery index
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        let (id, cam) = (q.identities[qi], q.cameras[qi]);
        let mut rank = 0;
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first_hit = None;
        for &gi in &order {
            let same_id = g.identities[gi] == id;
            if cfg.protocol == Protocol::CrossCamera && same_id && g.cameras[gi] == cam {
                continue;
            }
            rank += 1;
            if same_id {
                hits += 1;
                precision_sum += hits as f64 / rank as f64;
                first_hit.get_or_insert(rank - 1);
            }
        }
        let Some(first) = first_hit else {
            return Err(Error::Protocol { query: qi });
        };
        cmc[first..].iter_mut().for_each(|c| *c += 1.0);
        aps.push(precision_sum / hits as f64);
    }
    let nq = q.len() as f64;
    cmc.iter_mut().for_each(|c| *c /= nq);
    let map = aps.iter().sum::<f64>() / nq;
    Ok(EvalReport { cmc, map, per_query_ap: aps, config: cfg })
}

/// Images with labels; the labels are only used for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    /// `[N, 3, H, W]`
    pub images: Tensor,
    pub identities: Vec<usize>,
    pub cameras: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestSplit {
    pub domain: String,
    pub query: ImageSet,
    pub gallery: ImageSet,
}

/// Extracts flip-averaged features of a test split and scores them.
pub fn evaluate_split(model: &Model, split: &TestSplit, cfg: EvalConfig) -> Result<EvalReport> {
    // Only pixels reach the model; labels join the features afterwards.
    let set = |s: &ImageSet| -> Result<GallerySet> {
        let f = if cfg.batched { model.extract_batched(&s.images)? } else { model.extract_all(&s.images)? };
        GallerySet::new(f, s.identities.clone(), s.cameras.clone(), &split.domain)
    };
    evaluate(&set(&split.query)?, &set(&split.gallery)?, cfg)
}

/// Scores one frozen model on a source-domain and a target-domain split with
/// the same protocol.
pub fn cross_domain_evaluate(
    model: &Model,
    source: &TestSplit,
    target: &TestSplit,
    cfg: EvalConfig,
) -> Result<(EvalReport, EvalReport)> {
    Ok((evaluate_split(model, source, cfg)?, evaluate_split(model, target, cfg)?))
}
