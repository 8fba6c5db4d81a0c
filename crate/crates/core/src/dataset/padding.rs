use crate::error::{Error, Result};

/// Right-padding rule for fixed-length batch rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddingPolicy {
    pub list_size: usize,
    /// One past the largest valid document index of the corpus.
    pub pad_doc_id: usize,
}

impl PaddingPolicy {
    pub const PAD_LABEL: f64 = 0.0;

    pub fn new(list_size: usize, num_documents: usize) -> Result<Self> {
        if list_size == 0 {
            return Err(Error::InvalidValue("list_size must be positive".into()));
        }
        Ok(Self {
            list_size,
            pad_doc_id: num_documents,
        })
    }

    pub fn is_padding(&self, doc_id: usize) -> bool {
        doc_id >= self.pad_doc_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub doc_ids: Vec<Vec<usize>>,
    pub labels: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

pub fn pad_batch(rows: &[(Vec<usize>, Vec<f64>)], policy: &PaddingPolicy) -> Result<PaddedBatch> {
    let mut batch = PaddedBatch {
        doc_ids: Vec::with_capacity(rows.len()),
        labels: Vec::with_capacity(rows.len()),
        mask: Vec::with_capacity(rows.len()),
    };
    for (ids, labels) in rows {
        if ids.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                actual: labels.len(),
            });
        }
        if ids.len() > policy.list_size {
            return Err(Error::Contract(format!(
                "row of length {} exceeds list_size {}",
                ids.len(),
                policy.list_size
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| policy.is_padding(id)) {
            return Err(Error::Contract(format!("document id {bad} collides with the padding sentinel")));
        }
        let pad = policy.list_size - ids.len();
        let mut padded_ids = ids.clone();
        padded_ids.extend(std::iter::repeat_n(policy.pad_doc_id, pad));
        let mut padded_labels = labels.clone();
        padded_labels.extend(std::iter::repeat_n(PaddingPolicy::PAD_LABEL, pad));
        let mut mask = vec![true; ids.len()];
        mask.extend(std::iter::repeat_n(false, pad));
        batch.doc_ids.push(padded_ids);
        batch.labels.push(padded_labels);
        batch.mask.push(mask);
    }
    Ok(batch)
}
