//! Within-class and between-class spread of embedded features.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::analysis::pca::{reduce_dims, Embedding};
use crate::data::SampleBundle;
use crate::error::{Error, Result};
use crate::model::{InputBatch, NetKind, Network};

fn class_members(emb: &Embedding) -> BTreeMap<u16, Vec<usize>> {
    let mut map: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &l) in emb.labels.iter().enumerate() {
        map.entry(l).or_default().push(i);
    }
    map
}

fn centroid(emb: &Embedding, idx: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; emb.dims];
    for &i in idx {
        for (a, v) in c.iter_mut().zip(emb.point(i)) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= idx.len() as f64);
    c
}

/// `V_w,l`: per-dimension sample variance of class `l`, summed over
/// dimensions.
pub fn intra_class_variance(emb: &Embedding, label: u16) -> Result<f64> {
    let members = class_members(emb);
    let idx = members
        .get(&label)
        .ok_or(Error::EmptyClass { class: label })?;
    if idx.len() < 2 {
        return Err(Error::SingletonClass(label));
    }
    let mu = centroid(emb, idx);
    let ss: f64 = idx
        .iter()
        .map(|&i| {
            emb.point(i)
                .iter()
                .zip(&mu)
                .map(|(u, m)| (u - m) * (u - m))
                .sum::<f64>()
        })
        .sum();
    Ok(ss / (idx.len() - 1) as f64)
}

/// Per-class `V_w,l` for every present class and their mean.
pub fn average_intra_class_variance(emb: &Embedding) -> Result<(Vec<(u16, f64)>, f64)> {
    let per: Vec<(u16, f64)> = class_members(emb)
        .keys()
        .map(|&l| intra_class_variance(emb, l).map(|v| (l, v)))
        .collect::<Result<_>>()?;
    if per.is_empty() {
        return Err(Error::InvalidArgument("empty embedding".into()));
    }
    let mean = per.iter().map(|(_, v)| v).sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}

/// `V_b`: spread of class centroids around the global centroid of all
/// points, `1 / (L - 1)` normalized and summed over dimensions.
pub fn inter_class_variance(emb: &Embedding) -> Result<f64> {
    let members = class_members(emb);
    if members.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "between-class variance needs two classes, found {}",
            members.len()
        )));
    }
    let all: Vec<usize> = (0..emb.len()).collect();
    let mu = centroid(emb, &all);
    let ss: f64 = members
        .values()
        .map(|idx| {
            centroid(emb, idx)
                .iter()
                .zip(&mu)
                .map(|(c, m)| (c - m) * (c - m))
                .sum::<f64>()
        })
        .sum();
    Ok(ss / (members.len() - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceRow {
    pub avg_intra: f64,
    pub inter: f64,
}

/// Spread of the plain concatenated features and of the RSSI-weighted
/// features after projection to `dims` components.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpaceReport {
    pub original: VarianceRow,
    pub weighted: VarianceRow,
    pub dims: usize,
    pub samples: usize,
}

fn variance_row(
    features: &[f64],
    m: usize,
    d_in: usize,
    labels: &[u16],
    dims: usize,
) -> Result<VarianceRow> {
    let emb = reduce_dims(features, m, d_in, labels, dims)?;
    Ok(VarianceRow {
        avg_intra: average_intra_class_variance(&emb)?.1,
        inter: inter_class_variance(&emb)?,
    })
}

/// Extracts fused features of a proposed network on `test` with unit weights
/// (plain concatenation) and with its learned weights, then compares their
/// class spread.
pub fn compare_feature_spaces(
    net: &Network,
    test: &[SampleBundle],
    dims: usize,
    batch_size: usize,
) -> Result<FeatureSpaceReport> {
    if net.kind() != NetKind::Proposed {
        return Err(Error::InvalidArgument(
            "feature-space comparison needs a proposed network".into(),
        ));
    }
    let mut original = Vec::new();
    let mut weighted = Vec::new();
    let mut labels = Vec::new();
    let mut width = 0;
    for chunk in test.chunks(batch_size.max(1)) {
        let refs: Vec<&SampleBundle> = chunk.iter().collect();
        let batch = InputBatch::from_bundles(&refs)?;
        let mut csi = Vec::new();
        let mut rssi = Vec::new();
        for r in 0..batch.n_receivers() {
            let (f, i) = net.extract(&batch.csi[r], &batch.rssi[r])?;
            csi.push(f);
            rssi.push(i.expect("proposed network"));
        }
        let q = net.fusion_weights(&rssi)?;
        let shape = csi[0].shape().to_vec();
        let (b, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        width = csi.len() * c * plane;
        for bi in 0..b {
            for ch in 0..c {
                for (f, qn) in csi.iter().zip(&q) {
                    let w = f64::from(qn.data()[bi * c + ch]);
                    let src = &f.data()[(bi * c + ch) * plane..][..plane];
                    original.extend(src.iter().map(|&v| f64::from(v)));
                    weighted.extend(src.iter().map(|&v| f64::from(v) * w));
                }
            }
            labels.push(batch.labels[bi] as u16);
        }
    }
    let m = labels.len();
    Ok(FeatureSpaceReport {
        original: variance_row(&original, m, width, &labels, dims)?,
        weighted: variance_row(&weighted, m, width, &labels, dims)?,
        dims,
        samples: m,
    })
}
