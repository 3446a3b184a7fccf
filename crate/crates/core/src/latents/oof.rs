use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Latent, TrainLog};
use crate::error::{Error, Result};
use crate::evalharness::FoldPlan;

/// Which subjects one extractor instance was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerRecord {
    pub fold: usize,
    pub producer: String,
    pub train_ids: Vec<String>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OofLatents {
    pub extractor: String,
    pub latents: BTreeMap<String, Latent>,
    pub producers: Vec<ProducerRecord>,
    pub logs: Vec<TrainLog>,
}

pub fn producer_id(extractor: &str, fold: usize) -> String {
    format!("{extractor}/fold{fold}")
}

/// Trains one extractor per fold on the other folds and encodes only the
/// held-out subjects with it.
///
/// `train(fold, train_indices)` builds a model; `encode(model, subject,
/// producer, fold)` produces one latent; `keep(fold, model)` may persist the
/// model and return its checkpoint path.
pub fn out_of_fold_latents<M: Send>(
    plan: &FoldPlan,
    extractor: &str,
    train: impl Fn(usize, &[usize]) -> Result<(M, TrainLog)> + Sync,
    encode: impl Fn(&M, usize, &str, usize) -> Result<Latent> + Sync,
    mut keep: impl FnMut(usize, &M) -> Result<Option<String>>,
) -> Result<OofLatents> {
    plan.validate()?;
    let per_fold: Vec<Result<(M, TrainLog, Vec<(usize, Latent)>)>> = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let tr = plan.train_indices(f);
            let (model, log) = train(f, &tr)?;
            let producer = producer_id(extractor, f);
            let lat = plan
                .val_indices(f)
                .into_iter()
                .map(|i| Ok((i, encode(&model, i, &producer, f)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((model, log, lat))
        })
        .collect();

    let mut out = OofLatents {
        extractor: extractor.to_string(),
        latents: BTreeMap::new(),
        producers: Vec::with_capacity(plan.k),
        logs: Vec::with_capacity(plan.k),
    };
    for (f, r) in per_fold.into_iter().enumerate() {
        let (model, log, lat) = r?;
        let checkpoint = keep(f, &model)?;
        out.producers.push(ProducerRecord {
            fold: f,
            producer: producer_id(extractor, f),
            train_ids: plan.train_indices(f).into_iter().map(|i| plan.ids[i].clone()).collect(),
            checkpoint,
        });
        out.logs.push(log);
        for (i, l) in lat {
            out.latents.insert(plan.ids[i].clone(), l);
        }
    }
    Ok(out)
}

/// Verifies from the bookkeeping alone that every subject has exactly one
/// latent, produced by the instance of its own validation fold, whose
/// training set excluded it.
pub fn audit_oof(latents: &BTreeMap<String, Latent>, producers: &[ProducerRecord], plan: &FoldPlan) -> Result<()> {
    if latents.len() != plan.len() {
        return Err(Error::Leakage(format!(
            "{} latents for {} subjects",
            latents.len(),
            plan.len()
        )));
    }
    let by_name: BTreeMap<&str, &ProducerRecord> = producers.iter().map(|p| (p.producer.as_str(), p)).collect();
    let train_sets: BTreeMap<&str, HashSet<&str>> = producers
        .iter()
        .map(|p| (p.producer.as_str(), p.train_ids.iter().map(String::as_str).collect()))
        .collect();
    for (i, id) in plan.ids.iter().enumerate() {
        let l = latents
            .get(id)
            .ok_or_else(|| Error::Leakage(format!("subject {id} has no latent")))?;
        let p = by_name
            .get(l.producer.as_str())
            .ok_or_else(|| Error::Leakage(format!("latent of {id} names unknown producer {}", l.producer)))?;
        if l.fold != Some(plan.fold[i]) || p.fold != plan.fold[i] {
            return Err(Error::Leakage(format!(
                "latent of {id} comes from fold {:?}, subject is in fold {}",
                l.fold, plan.fold[i]
            )));
        }
        if train_sets[l.producer.as_str()].contains(id.as_str()) {
            return Err(Error::Leakage(format!("{} was trained on {id}", l.producer)));
        }
    }
    Ok(())
}
