//! Staged self/cross linear attention over the two pillar sets.

use crate::error::Result;
use crate::model::{AttentionParams, LinearParams, Network, StageParams};
use crate::pillars::PillarVars;
use diffcore::{Graph, Tensor, Var};

/// Everything the losses and tests need from one forward pass.
#[derive(Debug, Clone)]
pub struct NetworkOutputs {
    /// Template features after each stage.
    pub template_per_stage: Vec<Var>,
    /// Search features after each stage (the cross-attention outputs).
    pub search_per_stage: Vec<Var>,
    /// Search input of each stage, as fed to self-attention.
    pub search_stage_inputs: Vec<Var>,
    pub search_initial: Var,
    /// Input to the localization network.
    pub search_loc_input: Var,
}

fn linear(g: &mut Graph, x: Var, p: &LinearParams) -> Result<Var> {
    let (w, b) = (g.param(p.weight), g.param(p.bias));
    Ok(g.linear(x, w, b)?)
}

/// Two linear layers with a ReLU between, applied to `(cx, cy, z_mid)` rows.
pub fn positional_encoding(g: &mut Graph, centers: &Tensor, stage: &StageParams) -> Result<Var> {
    let x = g.constant(centers.clone());
    let h = linear(g, x, &stage.pos1)?;
    let h = g.relu(h)?;
    linear(g, h, &stage.pos2)
}

/// Linear attention with bias-free projections of separate query and
/// key/value sources.
pub fn attend(g: &mut Graph, query_src: Var, kv_src: Var, p: &AttentionParams) -> Result<Var> {
    let (wq, wk, wv) = (g.param(p.wq), g.param(p.wk), g.param(p.wv));
    let q = g.matmul(query_src, wq)?;
    let k = g.matmul(kv_src, wk)?;
    let v = g.matmul(kv_src, wv)?;
    Ok(g.linear_attention(q, k, v)?)
}

pub fn self_attend(g: &mut Graph, f: Var, e: Var, sa: &AttentionParams) -> Result<Var> {
    let x = g.add(f, e)?;
    attend(g, x, x, sa)
}

/// Search queries carry their positional encoding; template keys and values
/// are the plain self-attended template features.
pub fn cross_attend(g: &mut Graph, fs_hat: Var, es: Var, ft_hat: Var, ca: &AttentionParams) -> Result<Var> {
    let q = g.add(fs_hat, es)?;
    attend(g, q, ft_hat, ca)
}

pub fn forward(g: &mut Graph, net: &Network, template: &PillarVars, search: &PillarVars) -> Result<NetworkOutputs> {
    let cfg = &net.config;
    let mut template_per_stage = Vec::with_capacity(cfg.stages);
    let mut search_per_stage: Vec<Var> = Vec::with_capacity(cfg.stages);
    let mut search_stage_inputs = Vec::with_capacity(cfg.stages);
    let mut ft = template.features;
    for stage in &net.stages {
        let fs = if cfg.dense_stages {
            let mut terms = vec![search.features];
            terms.extend_from_slice(&search_per_stage);
            g.sum_n(&terms)?
        } else {
            search_per_stage.last().copied().unwrap_or(search.features)
        };
        search_stage_inputs.push(fs);
        let et = positional_encoding(g, &template.centers, stage)?;
        let es = positional_encoding(g, &search.centers, stage)?;
        let ft_hat = self_attend(g, ft, et, &stage.sa)?;
        let fs_hat = self_attend(g, fs, es, &stage.sa)?;
        // With bidirectional fusion the template is updated from the search
        // branch first, and the search cross-attention reads the updated one.
        let ft_next = match &stage.ca_template {
            Some(ca_t) => cross_attend(g, ft_hat, et, fs_hat, ca_t)?,
            None => ft_hat,
        };
        let fs_tilde = match &stage.ca {
            Some(ca) => cross_attend(g, fs_hat, es, ft_next, ca)?,
            None => fs_hat,
        };
        template_per_stage.push(ft_next);
        search_per_stage.push(fs_tilde);
        ft = ft_next;
    }
    let search_loc_input = if cfg.dense_stages {
        let mut terms = vec![search.features];
        terms.extend_from_slice(&search_per_stage);
        g.sum_n(&terms)?
    } else {
        *search_per_stage.last().expect("at least one stage")
    };
    Ok(NetworkOutputs {
        template_per_stage,
        search_per_stage,
        search_stage_inputs,
        search_initial: search.features,
        search_loc_input,
    })
}
