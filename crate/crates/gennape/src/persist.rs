//! Persistence for trained pipeline artifacts (encoder, clustering,
//! predictors) on top of the tensor container format. Saving and loading
//! are bit-stable: a round trip reproduces identical predictions.

use crate::container::{Container, ContainerError};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::fcm::{FcmModel, FeatureReducer};
use crate::linalg::Matrix;
use crate::predictor::{
    BaselineConfig, BaselineGnn, EnsembleModel, HeadConfig, PairwiseModel, TransformStats,
};
use std::path::Path;

fn matrix_entry(c: &mut Container, name: &str, m: &Matrix) {
    c.push(name, vec![m.rows, m.cols], m.data.clone());
}

fn matrix_from(c: &Container, name: &str) -> Result<Matrix, ContainerError> {
    let e = c.require(name)?;
    match e.dims.as_slice() {
        [r, cols] => Ok(Matrix { rows: *r, cols: *cols, data: e.data.clone() }),
        _ => Err(ContainerError::Missing(format!("{name} is not rank 2"))),
    }
}

// -----------------------------------------------------------------------
// encoder

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderArtifact {
    pub params: EncoderParams,
    pub config: EncoderConfig,
}

impl EncoderArtifact {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let cfg = &self.config;
        c.push_vec(
            "enc.cfg",
            &[
                cfg.embed_dim as f64,
                cfg.branch_dim as f64,
                cfg.proj_dim as f64,
                cfg.gnn_layers as f64,
                cfg.attn_heads as f64,
                cfg.dropout_rate,
                cfg.temperature,
                cfg.batch_size as f64,
                cfg.q as f64,
                cfg.alpha_sign,
                cfg.aux_flops_weight,
                cfg.epochs as f64,
                cfg.learning_rate,
                cfg.seed as f64,
            ],
        );
        c.push_scalar("enc.aux_mean", self.params.aux_mean);
        c.push_scalar("enc.aux_std", self.params.aux_std);
        c.push_param_set("enc", &self.params.params);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, ContainerError> {
        let v = &c.require("enc.cfg")?.data;
        if v.len() != 14 {
            return Err(ContainerError::Missing("enc.cfg has wrong length".into()));
        }
        let config = EncoderConfig {
            embed_dim: v[0] as usize,
            branch_dim: v[1] as usize,
            proj_dim: v[2] as usize,
            gnn_layers: v[3] as usize,
            attn_heads: v[4] as usize,
            dropout_rate: v[5],
            temperature: v[6],
            batch_size: v[7] as usize,
            q: v[8] as usize,
            alpha_sign: v[9],
            aux_flops_weight: v[10],
            epochs: v[11] as usize,
            learning_rate: v[12],
            seed: v[13] as u64,
        };
        Ok(EncoderArtifact {
            params: EncoderParams {
                params: c.param_set("enc")?,
                aux_mean: c.scalar("enc.aux_mean")?,
                aux_std: c.scalar("enc.aux_std")?,
            },
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_container(&Container::read(path)?)
    }
}

// -----------------------------------------------------------------------
// feature reducer + fcm

fn push_reducer(c: &mut Container, r: &FeatureReducer) {
    c.push_vec("red.emb_mean", &r.emb_mean);
    c.push_vec("red.emb_std", &r.emb_std);
    c.push_vec("red.dropped", &r.dropped_dims.iter().map(|&d| d as f64).collect::<Vec<_>>());
    matrix_entry(c, "red.basis", &r.basis);
    c.push_scalar("red.flops_mean", r.flops_mean);
    c.push_scalar("red.flops_std", r.flops_std);
}

fn reducer_from(c: &Container) -> Result<FeatureReducer, ContainerError> {
    Ok(FeatureReducer {
        emb_mean: c.require("red.emb_mean")?.data.clone(),
        emb_std: c.require("red.emb_std")?.data.clone(),
        dropped_dims: c.require("red.dropped")?.data.iter().map(|&v| v as usize).collect(),
        basis: matrix_from(c, "red.basis")?,
        flops_mean: c.scalar("red.flops_mean")?,
        flops_std: c.scalar("red.flops_std")?,
    })
}

fn push_fcm(c: &mut Container, fcm: &Option<FcmModel>) {
    match fcm {
        None => c.push_scalar("fcm.present", 0.0),
        Some(f) => {
            c.push_scalar("fcm.present", 1.0);
            c.push_scalar("fcm.m", f.m);
            matrix_entry(c, "fcm.centroids", &Matrix::from_rows(&f.centroids));
        }
    }
}

fn fcm_from(c: &Container) -> Result<Option<FcmModel>, ContainerError> {
    if c.scalar("fcm.present")? == 0.0 {
        return Ok(None);
    }
    let cent = matrix_from(c, "fcm.centroids")?;
    let centroids = (0..cent.rows).map(|i| cent.row(i).to_vec()).collect();
    Ok(Some(FcmModel { centroids, m: c.scalar("fcm.m")? }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterArtifact {
    pub reducer: FeatureReducer,
    pub fcm: Option<FcmModel>,
}

impl ClusterArtifact {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        push_reducer(&mut c, &self.reducer);
        push_fcm(&mut c, &self.fcm);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, ContainerError> {
        Ok(ClusterArtifact { reducer: reducer_from(c)?, fcm: fcm_from(c)? })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_container(&Container::read(path)?)
    }
}

// -----------------------------------------------------------------------
// predictors

/// A trained predictor with everything needed to score new graphs:
/// feature reduction for the embedding-based predictors, and the model
/// weights themselves.
#[derive(Debug, Clone)]
pub enum PredictorArtifact {
    Ensemble { reducer: FeatureReducer, model: EnsembleModel },
    Pairwise { reducer: FeatureReducer, model: PairwiseModel },
    Baseline { model: BaselineGnn },
}

impl PredictorArtifact {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        match self {
            PredictorArtifact::Ensemble { reducer, model } => {
                c.push_scalar("pred.kind", 0.0);
                push_reducer(&mut c, reducer);
                push_fcm(&mut c, &model.fcm);
                let cfg = &model.config;
                c.push_vec(
                    "pred.cfg",
                    &[
                        model.in_dim as f64,
                        cfg.hidden as f64,
                        cfg.hidden_layers as f64,
                        cfg.epochs as f64,
                        cfg.learning_rate,
                        cfg.batch_size as f64,
                        if cfg.use_transform { 1.0 } else { 0.0 },
                        cfg.seed as f64,
                    ],
                );
                c.push_vec("pred.stats", &[model.stats.mean, model.stats.std]);
                c.push_param_set("pred", &model.params);
            }
            PredictorArtifact::Pairwise { reducer, model } => {
                c.push_scalar("pred.kind", 1.0);
                push_reducer(&mut c, reducer);
                push_fcm(&mut c, &model.fcm);
                c.push_vec(
                    "pred.cfg",
                    &[
                        model.in_dim as f64,
                        model.latent_dim as f64,
                        model.hidden as f64,
                        model.seed as f64,
                    ],
                );
                c.push_param_set("pred", &model.params);
            }
            PredictorArtifact::Baseline { model } => {
                c.push_scalar("pred.kind", 2.0);
                let cfg = &model.config;
                c.push_vec(
                    "pred.cfg",
                    &[
                        cfg.node_dim as f64,
                        cfg.layers as f64,
                        cfg.head_hidden as f64,
                        cfg.head_layers as f64,
                        cfg.epochs as f64,
                        cfg.learning_rate,
                        cfg.batch_size as f64,
                        cfg.seed as f64,
                    ],
                );
                c.push_vec("pred.stats", &[model.stats.mean, model.stats.std]);
                c.push_param_set("pred", &model.params);
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, ContainerError> {
        let kind = c.scalar("pred.kind")? as u32;
        let v = c.require("pred.cfg")?.data.clone();
        match kind {
            0 => {
                let stats = c.require("pred.stats")?.data.clone();
                Ok(PredictorArtifact::Ensemble {
                    reducer: reducer_from(c)?,
                    model: EnsembleModel {
                        params: c.param_set("pred")?,
                        fcm: fcm_from(c)?,
                        in_dim: v[0] as usize,
                        config: HeadConfig {
                            hidden: v[1] as usize,
                            hidden_layers: v[2] as usize,
                            epochs: v[3] as usize,
                            learning_rate: v[4],
                            batch_size: v[5] as usize,
                            use_transform: v[6] != 0.0,
                            seed: v[7] as u64,
                        },
                        stats: TransformStats { mean: stats[0], std: stats[1] },
                    },
                })
            }
            1 => Ok(PredictorArtifact::Pairwise {
                reducer: reducer_from(c)?,
                model: PairwiseModel {
                    params: c.param_set("pred")?,
                    fcm: fcm_from(c)?,
                    in_dim: v[0] as usize,
                    latent_dim: v[1] as usize,
                    hidden: v[2] as usize,
                    seed: v[3] as u64,
                },
            }),
            2 => {
                let stats = c.require("pred.stats")?.data.clone();
                Ok(PredictorArtifact::Baseline {
                    model: BaselineGnn {
                        params: c.param_set("pred")?,
                        config: BaselineConfig {
                            node_dim: v[0] as usize,
                            layers: v[1] as usize,
                            head_hidden: v[2] as usize,
                            head_layers: v[3] as usize,
                            epochs: v[4] as usize,
                            learning_rate: v[5],
                            batch_size: v[6] as usize,
                            seed: v[7] as u64,
                        },
                        stats: TransformStats { mean: stats[0], std: stats[1] },
                    },
                })
            }
            other => Err(ContainerError::Missing(format!("unknown predictor kind {other}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_container(&Container::read(path)?)
    }
}
