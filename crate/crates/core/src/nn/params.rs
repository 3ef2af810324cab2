//! Parameter layout for the two-layer (B)LSTM with a dense head.
//!
//! All weights live in one flat vector. Blocks are laid out in a fixed order
//! so gradients, optimizer moments and checkpoints share the same indexing.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::targets::TargetKind;

pub const FULL_HIDDEN: [usize; 2] = [256, 128];
pub const DESK_HIDDEN: [usize; 2] = [32, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub num_channels: usize,
    pub target: TargetKind,
    pub bidirectional: bool,
    pub hidden: [usize; 2],
}

impl Arch {
    pub fn new(num_channels: usize, target: TargetKind, bidirectional: bool, hidden: [usize; 2]) -> Self {
        Self { num_channels, target, bidirectional, hidden }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_channels == 0 {
            return invalid("architecture needs at least one channel");
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return invalid("hidden sizes must be positive");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.num_channels
    }

    pub fn output_dim(&self) -> usize {
        self.target.output_dim(self.num_channels)
    }

    pub fn num_directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Input width of recurrent layer `layer` (0-based).
    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim()
        } else {
            self.hidden[layer - 1] * self.num_directions()
        }
    }

    pub fn dense_input_dim(&self) -> usize {
        self.hidden[1] * self.num_directions()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn tag(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }

    pub fn of_index(d: usize) -> Self {
        if d == 0 {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
}

impl BlockInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Blocks per recurrent direction, in storage order.
const LSTM_BLOCKS: usize = 3;

pub fn layout(arch: &Arch) -> Vec<BlockInfo> {
    let mut blocks = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let b = BlockInfo { name, shape, offset };
        offset += b.len();
        blocks.push(b);
    };
    for layer in 0..2 {
        let h = arch.hidden[layer];
        let d = arch.layer_input_dim(layer);
        for dir in 0..arch.num_directions() {
            let prefix = format!("lstm{}.{}", layer + 1, Direction::of_index(dir).tag());
            push(format!("{prefix}.w_input"), vec![4 * h, d]);
            push(format!("{prefix}.w_recurrent"), vec![4 * h, h]);
            push(format!("{prefix}.bias"), vec![4 * h]);
        }
    }
    push("dense.weight".into(), vec![arch.output_dim(), arch.dense_input_dim()]);
    push("dense.bias".into(), vec![arch.output_dim()]);
    blocks
}

/// Parameter count: `4 (in + hidden + 1) hidden` per direction per layer plus
/// `(dense_in + 1) out` for the head.
pub fn count_parameters(arch: &Arch) -> usize {
    let dirs = arch.num_directions();
    let mut n = 0;
    for layer in 0..2 {
        let h = arch.hidden[layer];
        n += dirs * 4 * (arch.layer_input_dim(layer) + h + 1) * h;
    }
    n + (arch.dense_input_dim() + 1) * arch.output_dim()
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Borrowed view of one recurrent direction's weights. Gate rows are ordered
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayerParams<'a, T> {
    pub w_input: &'a [T],
    pub w_recurrent: &'a [T],
    pub bias: &'a [T],
    pub input_dim: usize,
    pub hidden: usize,
}

/// Weights of the whole network. A single instance serves every frequency
/// bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    arch: Arch,
    blocks: Vec<BlockInfo>,
    data: Vec<T>,
    generation: u64,
}

impl<T: Scalar> ModelParameters<T> {
    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let blocks = layout(&arch);
        let n = count_parameters(&arch);
        debug_assert_eq!(blocks.iter().map(BlockInfo::len).sum::<usize>(), n);
        Ok(Self { arch, blocks, data: vec![T::zero(); n], generation: next_generation() })
    }

    /// Glorot-uniform weights (per gate matrix), zero biases, forget-gate
    /// biases 1.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in p.blocks.clone() {
            let vals = &mut p.data[b.range()];
            if b.shape.len() == 2 {
                let (rows, cols) = (b.shape[0], b.shape[1]);
                let fan_out = if b.name.starts_with("lstm") { rows / 4 } else { rows };
                let limit = (6.0 / (cols + fan_out) as f64).sqrt();
                for v in vals.iter_mut() {
                    *v = T::of(rng.gen_range(-limit..limit));
                }
            } else if b.name.starts_with("lstm") {
                let h = b.shape[0] / 4;
                for v in &mut vals[h..2 * h] {
                    *v = T::one();
                }
            }
        }
        Ok(p)
    }

    pub fn from_data(arch: Arch, data: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if data.len() != p.data.len() {
            return invalid(format!(
                "parameter vector has {} values, architecture needs {}",
                data.len(),
                p.data.len()
            ));
        }
        p.data = data;
        Ok(p)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&BlockInfo> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn block_values(&self, name: &str) -> Option<&[T]> {
        self.block(name).map(|b| &self.data[b.range()])
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access invalidates forward caches taken earlier.
    pub fn data_mut(&mut self) -> &mut [T] {
        self.generation = next_generation();
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Block index of the first block of `layer`/`dir`.
    pub(crate) fn lstm_block_index(&self, layer: usize, dir: usize) -> usize {
        let dirs = self.arch.num_directions();
        (layer * dirs + dir) * LSTM_BLOCKS
    }

    pub fn lstm(&self, layer: usize, dir: usize) -> LstmLayerParams<'_, T> {
        let i = self.lstm_block_index(layer, dir);
        LstmLayerParams {
            w_input: &self.data[self.blocks[i].range()],
            w_recurrent: &self.data[self.blocks[i + 1].range()],
            bias: &self.data[self.blocks[i + 2].range()],
            input_dim: self.arch.layer_input_dim(layer),
            hidden: self.arch.hidden[layer],
        }
    }

    pub(crate) fn dense_index(&self) -> usize {
        self.blocks.len() - 2
    }

    pub fn dense(&self) -> (&[T], &[T]) {
        let i = self.dense_index();
        (&self.data[self.blocks[i].range()], &self.data[self.blocks[i + 1].range()])
    }

    /// Name of the block containing flat index `idx`.
    pub fn block_of(&self, idx: usize) -> Option<&BlockInfo> {
        self.blocks.iter().find(|b| b.range().contains(&idx))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        ModelParameters {
            arch: self.arch,
            blocks: self.blocks.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            generation: next_generation(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_counts() {
        let uni = Arch::new(4, TargetKind::Sf, false, FULL_HIDDEN);
        let bi = Arch::new(4, TargetKind::Sf, true, FULL_HIDDEN);
        let bi_mrm = Arch::new(4, TargetKind::Mrm, true, FULL_HIDDEN);
        assert_eq!(count_parameters(&uni), 469_512);
        assert_eq!(count_parameters(&bi), 1_201_160);
        assert_eq!(count_parameters(&bi_mrm), 1_199_361);
    }

    #[test]
    fn layout_matches_count() {
        for bi in [false, true] {
            for kind in TargetKind::ALL {
                let a = Arch::new(3, kind, bi, [7, 5]);
                let total: usize = layout(&a).iter().map(BlockInfo::len).sum();
                assert_eq!(total, count_parameters(&a));
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Arch::new(2, TargetKind::Sf, true, [16, 8]);
        let p1 = ModelParameters::<f32>::init(a, 7).unwrap();
        let p2 = ModelParameters::<f32>::init(a, 7).unwrap();
        assert_eq!(p1.data(), p2.data());
        let p3 = ModelParameters::<f32>::init(a, 8).unwrap();
        assert_ne!(p1.data(), p3.data());

        for b in p1.blocks() {
            let v = p1.block_values(&b.name).unwrap();
            if b.name.ends_with("bias") && b.name.starts_with("lstm") {
                let h = b.shape[0] / 4;
                assert!(v[h..2 * h].iter().all(|x| *x == 1.0), "{}", b.name);
                assert!(v[..h].iter().chain(&v[2 * h..]).all(|x| *x == 0.0));
            } else if b.name == "dense.bias" {
                assert!(v.iter().all(|x| *x == 0.0));
            } else {
                let fan_out = if b.name.starts_with("lstm") { b.shape[0] / 4 } else { b.shape[0] };
                let limit = (6.0 / (b.shape[1] + fan_out) as f64).sqrt() as f32;
                assert!(v.iter().all(|x| x.abs() < limit), "{}", b.name);
            }
        }
    }

    #[test]
    fn mutation_bumps_generation() {
        let a = Arch::new(1, TargetKind::Mrm, false, [2, 2]);
        let mut p = ModelParameters::<f64>::zeros(a).unwrap();
        let g = p.generation();
        p.data_mut()[0] = 1.0;
        assert_ne!(g, p.generation());
    }
}
