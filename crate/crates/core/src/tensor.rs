//! Dense f64 tensors with optional gradient buffers, named parameters,
//! the Adam optimizer, and the binary parameter checkpoint format.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"N2SC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Flat row-major value array with a shape and an optional gradient buffer
/// of identical length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![0.0; numel], grad: None }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::dimension(format!(
                "shape {shape:?} needs {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), values, grad: None })
    }

    pub fn scalar_fill(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![value; numel], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Allocate (or keep) the gradient buffer, zero-filled.
    pub fn alloc_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.fill(0.0),
            None => self.grad = Some(vec![0.0; self.values.len()]),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    /// Add `delta` into the gradient buffer (allocating on first use).
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.values.len()]);
        }
        let g = self.grad.as_mut().unwrap();
        debug_assert_eq!(g.len(), delta.len());
        for (gi, &di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A named learnable tensor; the gradient buffer is always allocated.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, mut tensor: Tensor) -> Self {
        tensor.alloc_grad();
        Parameter { name: name.into(), tensor }
    }
}

/// Adam with first/second moment buffers per parameter. Weight decay is
/// applied as a gradient addition `lambda * w` before the moment updates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Parameter], learning_rate: f64, weight_decay: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One deterministic Adam update over all parameters, consuming the current
/// gradient buffers (which are left untouched; callers zero them per batch).
pub fn adam_step(params: &mut [Parameter], state: &mut AdamState) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(Error::dimension("optimizer state does not match parameter list"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for (idx, p) in params.iter_mut().enumerate() {
        let m = &mut state.first_moment[idx];
        let v = &mut state.second_moment[idx];
        let grad = p.tensor.grad().expect("parameter gradient always allocated").to_vec();
        let w = p.tensor.values_mut();
        for i in 0..w.len() {
            let g = grad[i] + state.weight_decay * w[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            w[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Serialize parameters: magic, version, count, then per parameter the
/// name, shape and f64 payload. Little-endian throughout.
pub fn write_parameters(w: &mut impl Write, params: &[Parameter]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name)?;
        w.write_u32::<LittleEndian>(p.tensor.shape().len() as u32)?;
        for &dim in p.tensor.shape() {
            w.write_u32::<LittleEndian>(dim as u32)?;
        }
        for &v in p.tensor.values() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_parameters(r: &mut impl Read) -> Result<Vec<Parameter>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("checkpoint too short for header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(format!(
            "checkpoint magic mismatch: got {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut params = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf).map_err(|_| Error::format("truncated checkpoint"))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::format("parameter name is not UTF-8"))?;
        if !seen.insert(name.clone()) {
            return Err(Error::format(format!("duplicate parameter name '{name}'")));
        }
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = vec![0.0f64; numel];
        crate::data::read_f64_exact(r, &mut values, numel)?;
        params.push(Parameter::new(name, Tensor::from_values(&shape, values)?));
    }
    Ok(params)
}
