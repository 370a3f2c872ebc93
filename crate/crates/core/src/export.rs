//! Network persistence and inference-code generation.
//!
//! Two binary formats live here: a single-network weights file (the
//! deployable artifact) and a training checkpoint bundling all six
//! networks plus optimizer state. Both carry a trailing SHA-256 so
//! corruption is caught before any parameter is trusted. The code
//! generator emits a dependency-free C99 routine with every weight
//! embedded as a constant, matching the reference forward pass exactly
//! at f64 and to fused-arithmetic tolerance at f32.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::{Activation, AdamState, GradientSet, Layer, LayerGrads, Mlp, NnError};
use crate::td3::Td3Agent;

const WEIGHTS_MAGIC: &[u8; 8] = b"QPOLWTS\0";
const CHECKPOINT_MAGIC: &[u8; 8] = b"QPCKPT\0\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated")]
    Truncated,
    #[error("checksum mismatch, file corrupt")]
    ChecksumMismatch,
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("code generation needs an actor-shaped net (4 outputs), got {0}")]
    NotActorShaped(usize),
    #[error("network: {0}")]
    Nn(#[from] NnError),
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Tanh => 0,
        Activation::Linear => 1,
    }
}

fn tag_activation(t: u8) -> Result<Activation, ExportError> {
    match t {
        0 => Ok(Activation::Tanh),
        1 => Ok(Activation::Linear),
        _ => Err(ExportError::Malformed("unknown activation tag")),
    }
}

/// Byte cursor with explicit truncation errors.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ExportError> {
        if self.pos + n > self.bytes.len() {
            return Err(ExportError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ExportError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ExportError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ExportError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ExportError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, ExportError> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64_slice(out: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        push_f64(out, v);
    }
}

/// Network payload: layer count, sizes, activation tags, then per layer
/// the row-major weight block followed by the bias block.
fn encode_net(out: &mut Vec<u8>, net: &Mlp) {
    push_u32(out, net.layers.len() as u32);
    push_u32(out, net.input_dim() as u32);
    for l in &net.layers {
        push_u32(out, l.out_dim as u32);
    }
    for l in &net.layers {
        out.push(activation_tag(l.activation));
    }
    for l in &net.layers {
        push_f64_slice(out, &l.weights);
        push_f64_slice(out, &l.biases);
    }
}

fn decode_net(r: &mut Reader) -> Result<Mlp, ExportError> {
    let layer_count = r.u32()? as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(ExportError::Malformed("implausible layer count"));
    }
    let mut sizes = Vec::with_capacity(layer_count + 1);
    for _ in 0..=layer_count {
        let s = r.u32()? as usize;
        if s == 0 || s > 1 << 20 {
            return Err(ExportError::Malformed("implausible layer size"));
        }
        sizes.push(s);
    }
    let mut activations = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        activations.push(tag_activation(r.u8()?)?);
    }
    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let (ni, no) = (sizes[i], sizes[i + 1]);
        let weights = r.f64_vec(ni * no)?;
        let biases = r.f64_vec(no)?;
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(ExportError::Malformed("non-finite parameter"));
        }
        layers.push(Layer {
            weights,
            biases,
            in_dim: ni,
            out_dim: no,
            activation: activations[i],
        });
    }
    Ok(Mlp { layers })
}

/// Gradient-shaped payload (optimizer moments): per layer the weight
/// block then the bias block, shapes taken from `shape`.
fn encode_grads(out: &mut Vec<u8>, g: &GradientSet) {
    for l in &g.layers {
        push_f64_slice(out, &l.weights);
        push_f64_slice(out, &l.biases);
    }
}

fn decode_grads(r: &mut Reader, shape: &Mlp) -> Result<GradientSet, ExportError> {
    let mut layers = Vec::with_capacity(shape.layers.len());
    for l in &shape.layers {
        layers.push(LayerGrads {
            weights: r.f64_vec(l.weights.len())?,
            biases: r.f64_vec(l.biases.len())?,
        });
    }
    Ok(GradientSet { layers })
}

fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    body
}

/// Splits off and verifies the trailing checksum, returning the body.
fn unseal(bytes: &[u8]) -> Result<&[u8], ExportError> {
    if bytes.len() < 32 {
        return Err(ExportError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != tail {
        return Err(ExportError::ChecksumMismatch);
    }
    Ok(body)
}

fn check_header(r: &mut Reader, magic: &[u8; 8]) -> Result<(), ExportError> {
    if r.take(8)? != magic {
        return Err(ExportError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ExportError::UnsupportedVersion(version));
    }
    Ok(())
}

/// Serializes one network to the weights format.
pub fn encode_weights(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    encode_net(&mut out, net);
    seal(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<Mlp, ExportError> {
    let body = unseal(bytes)?;
    let mut r = Reader::new(body);
    check_header(&mut r, WEIGHTS_MAGIC)?;
    let net = decode_net(&mut r)?;
    if !r.done() {
        return Err(ExportError::Malformed("trailing bytes after payload"));
    }
    Ok(net)
}

pub fn save_weights(net: &Mlp, path: impl AsRef<Path>) -> Result<(), ExportError> {
    fs::write(path, encode_weights(net))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Mlp, ExportError> {
    decode_weights(&fs::read(path)?)
}

/// Hex SHA-256 of the weights-file body; also embedded in generated
/// source headers so an artifact can be traced back to its weights.
pub fn weights_checksum(net: &Mlp) -> String {
    let sealed = encode_weights(net);
    let tail = &sealed[sealed.len() - 32..];
    let mut s = String::with_capacity(64);
    for b in tail {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Everything needed to restart or inspect a training run, minus the
/// replay buffer.
pub struct Checkpoint {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic1_target: Mlp,
    pub critic2: Mlp,
    pub critic2_target: Mlp,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    /// Environment steps completed when the checkpoint was taken.
    pub env_steps: u64,
    pub update_calls: u64,
}

fn encode_opt(out: &mut Vec<u8>, opt: &AdamState) {
    push_f64(out, opt.lr);
    push_f64(out, opt.beta1);
    push_f64(out, opt.beta2);
    push_f64(out, opt.epsilon);
    push_u64(out, opt.steps);
    let (m, v) = opt.moments();
    encode_grads(out, m);
    encode_grads(out, v);
}

fn decode_opt(r: &mut Reader, shape: &Mlp) -> Result<AdamState, ExportError> {
    let lr = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let epsilon = r.f64()?;
    let steps = r.u64()?;
    let m = decode_grads(r, shape)?;
    let v = decode_grads(r, shape)?;
    Ok(AdamState::from_parts(lr, beta1, beta2, epsilon, steps, m, v))
}

pub fn save_checkpoint(
    agent: &Td3Agent,
    env_steps: u64,
    path: impl AsRef<Path>,
) -> Result<(), ExportError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u64(&mut out, env_steps);
    push_u64(&mut out, agent.update_calls());
    for net in [
        &agent.actor,
        &agent.actor_target,
        &agent.critic1,
        &agent.critic1_target,
        &agent.critic2,
        &agent.critic2_target,
    ] {
        encode_net(&mut out, net);
    }
    encode_opt(&mut out, &agent.actor_opt);
    encode_opt(&mut out, &agent.critic1_opt);
    encode_opt(&mut out, &agent.critic2_opt);
    fs::write(path, seal(out))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ExportError> {
    let bytes = fs::read(path)?;
    let body = unseal(&bytes)?;
    let mut r = Reader::new(body);
    check_header(&mut r, CHECKPOINT_MAGIC)?;
    let env_steps = r.u64()?;
    let update_calls = r.u64()?;
    let actor = decode_net(&mut r)?;
    let actor_target = decode_net(&mut r)?;
    let critic1 = decode_net(&mut r)?;
    let critic1_target = decode_net(&mut r)?;
    let critic2 = decode_net(&mut r)?;
    let critic2_target = decode_net(&mut r)?;
    let actor_opt = decode_opt(&mut r, &actor)?;
    let critic1_opt = decode_opt(&mut r, &critic1)?;
    let critic2_opt = decode_opt(&mut r, &critic2)?;
    if !r.done() {
        return Err(ExportError::Malformed("trailing bytes after payload"));
    }
    Ok(Checkpoint {
        actor,
        actor_target,
        critic1,
        critic1_target,
        critic2,
        critic2_target,
        actor_opt,
        critic1_opt,
        critic2_opt,
        env_steps,
        update_calls,
    })
}

/// Numeric precision of generated inference code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

/// Decimal literal with enough digits to round-trip the value exactly
/// (glibc and gcc convert correctly rounded).
fn c_literal(v: f64, precision: Precision) -> String {
    match precision {
        Precision::F64 => format!("{:.17e}", v),
        Precision::F32 => format!("{:.8e}f", v as f32),
    }
}

/// Emits a self-contained C99 translation unit defining
/// `policy_forward(input, output)` for the given network. No heap, no
/// libraries beyond the tanh primitive, weights embedded as constants.
/// Output is deterministic for a given net (no timestamps).
pub fn generate_inference_source(
    net: &Mlp,
    precision: Precision,
) -> Result<String, ExportError> {
    if net.output_dim() != 4 {
        return Err(ExportError::NotActorShaped(net.output_dim()));
    }
    let (ty, tanh_fn) = match precision {
        Precision::F64 => ("double", "tanh"),
        Precision::F32 => ("float", "tanhf"),
    };
    let sizes = net.sizes();
    let sizes_str = sizes
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(" -> ");
    let acts_str = net
        .layers
        .iter()
        .map(|l| match l.activation {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        })
        .collect::<Vec<_>>()
        .join(", ");

    let mut src = String::new();
    src.push_str("/* Generated flight-policy inference routine. Do not edit.\n");
    src.push_str(&format!(" * format version: {FORMAT_VERSION}\n"));
    src.push_str(&format!(" * layers: {sizes_str} ({acts_str})\n"));
    src.push_str(&format!(" * weights sha256: {}\n", weights_checksum(net)));
    src.push_str(&format!(" * multiply-adds: {}\n", net.param_count()));
    src.push_str(" */\n#include <math.h>\n\n");

    for (li, layer) in net.layers.iter().enumerate() {
        let n = li + 1;
        src.push_str(&format!(
            "static const {ty} W{n}[{}][{}] = {{\n",
            layer.out_dim, layer.in_dim
        ));
        for o in 0..layer.out_dim {
            src.push_str("    {");
            for i in 0..layer.in_dim {
                if i > 0 {
                    src.push_str(", ");
                }
                src.push_str(&c_literal(layer.weights[o * layer.in_dim + i], precision));
            }
            src.push_str("},\n");
        }
        src.push_str("};\n");
        src.push_str(&format!("static const {ty} B{n}[{}] = {{", layer.out_dim));
        for (o, b) in layer.biases.iter().enumerate() {
            if o > 0 {
                src.push_str(", ");
            }
            src.push_str(&c_literal(*b, precision));
        }
        src.push_str("};\n\n");
    }

    src.push_str(&format!(
        "void policy_forward(const {ty} input[{}], {ty} output[{}]) {{\n",
        net.input_dim(),
        net.output_dim()
    ));
    let last = net.layers.len() - 1;
    for (li, layer) in net.layers.iter().enumerate() {
        let n = li + 1;
        let src_name = if li == 0 {
            "input".to_string()
        } else {
            format!("h{li}")
        };
        let dst_name = if li == last {
            "output".to_string()
        } else {
            format!("h{n}")
        };
        if li != last {
            src.push_str(&format!("    {ty} {dst_name}[{}];\n", layer.out_dim));
        }
        src.push_str(&format!(
            "    for (int o = 0; o < {}; ++o) {{\n",
            layer.out_dim
        ));
        src.push_str(&format!("        {ty} acc = B{n}[o];\n"));
        src.push_str(&format!(
            "        for (int i = 0; i < {}; ++i) {{\n",
            layer.in_dim
        ));
        src.push_str(&format!("            acc += W{n}[o][i] * {src_name}[i];\n"));
        src.push_str("        }\n");
        match layer.activation {
            Activation::Tanh => {
                src.push_str(&format!("        {dst_name}[o] = {tanh_fn}(acc);\n"))
            }
            Activation::Linear => src.push_str(&format!("        {dst_name}[o] = acc;\n")),
        }
        src.push_str("    }\n");
    }
    src.push_str("}\n");
    Ok(src)
}
