//! The victim boundary: a trained model behind its private scaler, exposed
//! identically in-process and over HTTP. The attack side only ever sees
//! raw query rows in and probability vectors out.

pub mod http;

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::data::{encode, validate_row, EncodingMap, FeatureSpec, TabularDataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, MlpModel, Targets, TrainConfig};
use crate::querygen::QueryBatch;
use crate::scaling::{Scaler, ScalerKind};

const DEPLOYMENT_MAGIC: &[u8; 8] = b"TEMPESTD";
const DEPLOYMENT_VERSION: u32 = 1;

/// Hidden width shared by every model in the lab.
pub const HIDDEN_DIM: usize = 90;

/// Whether the victim returns probability vectors or argmax one-hots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMode {
    Soft,
    Hard,
}

/// A trained model plus its private normalization and encoding. The scaler
/// is deliberately unreachable from outside this module.
#[derive(Debug, Clone)]
pub struct VictimDeployment {
    model: MlpModel,
    scaler: Scaler,
    map: EncodingMap,
    class_names: Vec<String>,
    response_mode: ResponseMode,
    /// Legacy prior-work mode: rows flagged pre-normalized skip the private
    /// scaler. Off by default, so such rows pass the boundary like any other.
    allow_pre_normalized: bool,
}

impl VictimDeployment {
    /// Bundles a model with a scaler and schema. Used for substitute
    /// artifacts as well; the format is the same.
    pub fn assemble(
        model: MlpModel,
        scaler: Scaler,
        schema: &[FeatureSpec],
        class_names: Vec<String>,
    ) -> Result<VictimDeployment> {
        let map = EncodingMap::from_schema(schema);
        if map.width() != model.in_dim() || map.width() != scaler.arity() {
            return Err(Error::invalid(
                "model, scaler, and schema disagree on encoded width",
            ));
        }
        if class_names.len() != model.out_dim() {
            return Err(Error::invalid(
                "class name count does not match model output width",
            ));
        }
        Ok(VictimDeployment {
            model,
            scaler,
            map,
            class_names,
            response_mode: ResponseMode::Soft,
            allow_pre_normalized: false,
        })
    }

    /// The model and adversary scaler of a substitute bundle; used by the
    /// evaluation tooling.
    pub fn into_parts(self) -> (MlpModel, Scaler, Vec<FeatureSpec>, Vec<String>) {
        (
            self.model,
            self.scaler,
            self.map.schema().to_vec(),
            self.class_names,
        )
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        self.map.schema()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn encoded_width(&self) -> usize {
        self.map.width()
    }

    pub fn response_mode(&self) -> ResponseMode {
        self.response_mode
    }

    pub fn set_response_mode(&mut self, mode: ResponseMode) {
        self.response_mode = mode;
    }

    pub fn set_allow_pre_normalized(&mut self, allow: bool) {
        self.allow_pre_normalized = allow;
    }

    /// Runs a raw query batch through the boundary: validate, encode,
    /// normalize with the private scaler, forward. Soft responses are
    /// probability vectors; hard responses are argmax one-hots.
    pub fn predict(&self, batch: &QueryBatch) -> Result<Vec<Vec<f64>>> {
        let mut outputs = Vec::with_capacity(batch.rows.len());
        let skip_scaler = batch.pre_normalized && self.allow_pre_normalized;
        for (i, row) in batch.rows.iter().enumerate() {
            validate_row(self.map.schema(), row)
                .map_err(|e| Error::RejectedQuery(format!("row {i}: {e}")))?;
            let encoded = self
                .map
                .encode_row(row)
                .map_err(|e| Error::RejectedQuery(format!("row {i}: {e}")))?;
            let normalized = if skip_scaler {
                encoded
            } else {
                self.scaler.transform_row(&encoded)?
            };
            let mut probs = self.model.forward(&normalized)?;
            if self.response_mode == ResponseMode::Hard {
                let winner = argmax(&probs);
                probs = vec![0.0; probs.len()];
                probs[winner] = 1.0;
            }
            outputs.push(probs);
        }
        Ok(outputs)
    }

    /// Victim accuracy on a labeled dataset, evaluated through its own
    /// boundary.
    pub fn accuracy_on(&self, dataset: &TabularDataset) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::invalid("evaluation dataset is empty"));
        }
        let mut correct = 0usize;
        for (row, &label) in dataset.rows.iter().zip(&dataset.labels) {
            let encoded = self.map.encode_row(row)?;
            let normalized = self.scaler.transform_row(&encoded)?;
            if self.model.predict_class(&normalized)? == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }

    /// Versioned deployment file: model, scaler, schema, class names, flags.
    /// Identical deployments serialize to identical bytes.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(DEPLOYMENT_MAGIC)?;
        w.write_all(&DEPLOYMENT_VERSION.to_le_bytes())?;
        self.model.write_to(w)?;
        let kind_tag: u8 = match self.scaler.kind() {
            ScalerKind::Standard => 0,
            ScalerKind::MinMax => 1,
        };
        w.write_all(&[kind_tag])?;
        w.write_all(&(self.scaler.arity() as u64).to_le_bytes())?;
        for &(p, q) in self.scaler.params() {
            w.write_all(&p.to_le_bytes())?;
            w.write_all(&q.to_le_bytes())?;
        }
        let schema_json = serde_json::to_vec(self.map.schema()).expect("schema serializes");
        w.write_all(&(schema_json.len() as u64).to_le_bytes())?;
        w.write_all(&schema_json)?;
        let classes_json = serde_json::to_vec(&self.class_names).expect("classes serialize");
        w.write_all(&(classes_json.len() as u64).to_le_bytes())?;
        w.write_all(&classes_json)?;
        let mode_tag: u8 = match self.response_mode {
            ResponseMode::Soft => 0,
            ResponseMode::Hard => 1,
        };
        w.write_all(&[mode_tag, u8::from(self.allow_pre_normalized)])?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<VictimDeployment> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DEPLOYMENT_MAGIC {
            return Err(Error::Format("not a deployment file".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != DEPLOYMENT_VERSION {
            return Err(Error::Format(format!(
                "unsupported deployment version {version}"
            )));
        }
        let model = MlpModel::read_from(r)?;
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        let kind = match byte[0] {
            0 => ScalerKind::Standard,
            1 => ScalerKind::MinMax,
            other => return Err(Error::Format(format!("unknown scaler tag {other}"))),
        };
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let arity = u64::from_le_bytes(buf8) as usize;
        let mut params = Vec::with_capacity(arity);
        for _ in 0..arity {
            r.read_exact(&mut buf8)?;
            let p = f64::from_le_bytes(buf8);
            r.read_exact(&mut buf8)?;
            let q = f64::from_le_bytes(buf8);
            params.push((p, q));
        }
        let scaler = Scaler::from_parts(kind, params);
        let read_json = |r: &mut dyn Read| -> Result<Vec<u8>> {
            let mut len_buf = [0u8; 8];
            r.read_exact(&mut len_buf)?;
            let len = u64::from_le_bytes(len_buf) as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            Ok(bytes)
        };
        let schema: Vec<FeatureSpec> = serde_json::from_slice(&read_json(r)?)
            .map_err(|e| Error::Format(format!("bad schema section: {e}")))?;
        let class_names: Vec<String> = serde_json::from_slice(&read_json(r)?)
            .map_err(|e| Error::Format(format!("bad class section: {e}")))?;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let response_mode = match flags[0] {
            0 => ResponseMode::Soft,
            1 => ResponseMode::Hard,
            other => return Err(Error::Format(format!("unknown response mode {other}"))),
        };
        let map = EncodingMap::from_schema(&schema);
        if map.width() != model.in_dim() || map.width() != scaler.arity() {
            return Err(Error::Format(
                "deployment sections disagree on feature width".into(),
            ));
        }
        Ok(VictimDeployment {
            model,
            scaler,
            map,
            class_names,
            response_mode,
            allow_pre_normalized: flags[1] != 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        self.write_to(&mut file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<VictimDeployment> {
        let mut file = std::fs::File::open(path.as_ref()).map_err(|e| Error::MissingFile {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        VictimDeployment::read_from(&mut file)
    }
}

/// Fits the private scaler on the victim's training split, trains the model
/// on the normalized encodings, and wraps both into a deployment.
pub fn train_victim(
    dataset: &TabularDataset,
    scaler_kind: ScalerKind,
    config: &TrainConfig,
) -> Result<VictimDeployment> {
    if dataset.is_empty() {
        return Err(Error::invalid("victim training set is empty"));
    }
    let (matrix, map) = encode(dataset)?;
    let scaler = Scaler::fit_with_map(scaler_kind, &matrix, &map)?;
    let normalized = scaler.transform(&matrix)?;
    let mut model = MlpModel::init(map.width(), HIDDEN_DIM, dataset.n_classes(), config.seed)?;
    model.train(&normalized, &Targets::Hard(dataset.labels.clone()), config)?;
    Ok(VictimDeployment {
        model,
        scaler,
        map,
        class_names: dataset.class_names.clone(),
        response_mode: ResponseMode::Soft,
        allow_pre_normalized: false,
    })
}

/// Handle the attack uses to reach a victim, either in-process or remote.
/// Carries the monotonically increasing count of rows sent as attack queries.
#[derive(Debug)]
pub enum VictimAccess {
    InProcess {
        deployment: Arc<VictimDeployment>,
        counter: AtomicU64,
    },
    Remote {
        client: http::RemoteVictim,
        counter: AtomicU64,
    },
}

impl VictimAccess {
    pub fn in_process(deployment: VictimDeployment) -> VictimAccess {
        VictimAccess::InProcess {
            deployment: Arc::new(deployment),
            counter: AtomicU64::new(0),
        }
    }

    pub fn in_process_shared(deployment: Arc<VictimDeployment>) -> VictimAccess {
        VictimAccess::InProcess {
            deployment,
            counter: AtomicU64::new(0),
        }
    }

    /// Connects to a remote victim service and fetches its schema.
    pub fn remote(base_url: &str) -> Result<VictimAccess> {
        Ok(VictimAccess::Remote {
            client: http::RemoteVictim::connect(base_url)?,
            counter: AtomicU64::new(0),
        })
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        match self {
            VictimAccess::InProcess { deployment, .. } => deployment.schema(),
            VictimAccess::Remote { client, .. } => client.schema(),
        }
    }

    pub fn class_names(&self) -> &[String] {
        match self {
            VictimAccess::InProcess { deployment, .. } => deployment.class_names(),
            VictimAccess::Remote { client, .. } => client.class_names(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names().len()
    }

    /// Sends an attack query batch; the counter grows by the batch size.
    pub fn query(&self, batch: &QueryBatch) -> Result<Vec<Vec<f64>>> {
        let result = self.send(batch)?;
        self.counter().fetch_add(batch.len() as u64, Ordering::SeqCst);
        Ok(result)
    }

    /// Evaluation traffic: same path, excluded from the attack budget.
    pub fn query_eval(&self, batch: &QueryBatch) -> Result<Vec<Vec<f64>>> {
        self.send(batch)
    }

    fn send(&self, batch: &QueryBatch) -> Result<Vec<Vec<f64>>> {
        match self {
            VictimAccess::InProcess { deployment, .. } => deployment.predict(batch),
            VictimAccess::Remote { client, .. } => client.predict(batch),
        }
    }

    fn counter(&self) -> &AtomicU64 {
        match self {
            VictimAccess::InProcess { counter, .. } => counter,
            VictimAccess::Remote { counter, .. } => counter,
        }
    }

    /// Total rows sent as attack queries so far.
    pub fn query_count(&self) -> u64 {
        self.counter().load(Ordering::SeqCst)
    }
}
