//! Full network pass: two stacked recurrent layers (optionally
//! bidirectional, directions concatenated), a dense head and the target's
//! output activation.

use crate::error::{invalid, Error, Result};
use crate::scalar::{axpy, dot, Scalar};

use super::lstm::{backprop_direction, run_direction, DirectionCache, DirectionGrads};
use super::params::ModelParameters;

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Vec<T>,
    dirs: Vec<DirectionCache<T>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    generation: u64,
    steps: usize,
    layers: Vec<LayerCache<T>>,
    dense_input: Vec<T>,
    output: Vec<T>,
}

impl<T> ForwardCache<T> {
    /// Per-frame network output after the activation, `steps x out_dim`.
    pub fn output(&self) -> &[T] {
        &self.output
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn into_output(self) -> Vec<T> {
        self.output
    }
}

/// Interleave per-direction hidden states into `[fwd | bwd]` frames.
fn concat_directions<T: Scalar>(dirs: &[DirectionCache<T>], hidden: usize, steps: usize) -> Vec<T> {
    let n = dirs.len();
    let mut out = vec![T::zero(); steps * hidden * n];
    for t in 0..steps {
        for (k, d) in dirs.iter().enumerate() {
            let dst = t * hidden * n + k * hidden;
            out[dst..dst + hidden].copy_from_slice(&d.hidden[t * hidden..(t + 1) * hidden]);
        }
    }
    out
}

/// Run the network over the first `steps` frames of `input`.
pub fn model_forward<T: Scalar>(
    params: &ModelParameters<T>,
    input: &[T],
    steps: usize,
) -> Result<ForwardCache<T>> {
    let arch = *params.arch();
    let d_in = arch.input_dim();
    if input.len() < steps * d_in || (steps > 0 && input.len() % d_in != 0) {
        return invalid(format!(
            "input of {} values does not hold {steps} frames of dimension {d_in}",
            input.len()
        ));
    }
    let mut layers = Vec::with_capacity(2);
    let mut x = input[..steps * d_in].to_vec();
    for layer in 0..2 {
        let dirs: Vec<DirectionCache<T>> = (0..arch.num_directions())
            .map(|dir| run_direction(&params.lstm(layer, dir), &x, steps, dir == 1))
            .collect();
        let next = concat_directions(&dirs, arch.hidden[layer], steps);
        layers.push(LayerCache { input: x, dirs });
        x = next;
    }
    let (w, b) = params.dense();
    let (din, dout) = (arch.dense_input_dim(), arch.output_dim());
    let act = arch.target.activation();
    let mut output = vec![T::zero(); steps * dout];
    for t in 0..steps {
        let h = &x[t * din..(t + 1) * din];
        for j in 0..dout {
            output[t * dout + j] = act.apply(b[j] + dot(&w[j * din..(j + 1) * din], h));
        }
    }
    Ok(ForwardCache { generation: params.generation(), steps, layers, dense_input: x, output })
}

/// Accumulate into `grads` the parameter gradients of a scalar loss whose
/// gradient with respect to the network output is `d_output`.
pub fn model_backward_into<T: Scalar>(
    params: &ModelParameters<T>,
    cache: &ForwardCache<T>,
    d_output: &[T],
    grads: &mut [T],
) -> Result<()> {
    if cache.generation != params.generation() {
        return Err(Error::InvalidState(
            "forward cache was produced with different parameters".into(),
        ));
    }
    let arch = *params.arch();
    let steps = cache.steps;
    let (din, dout) = (arch.dense_input_dim(), arch.output_dim());
    if d_output.len() != steps * dout {
        return invalid(format!(
            "output gradient has {} values, expected {}",
            d_output.len(),
            steps * dout
        ));
    }
    if grads.len() != params.len() {
        return invalid("gradient buffer does not match parameter count");
    }
    let blocks = params.blocks();
    let act = arch.target.activation();

    // Dense head.
    let di = params.dense_index();
    let (w, _) = params.dense();
    let mut d_hidden = vec![T::zero(); steps * din];
    {
        let (gw, gb) = split_two(grads, blocks[di].range(), blocks[di + 1].range());
        for t in 0..steps {
            let h = &cache.dense_input[t * din..(t + 1) * din];
            let dh = &mut d_hidden[t * din..(t + 1) * din];
            for j in 0..dout {
                let y = cache.output[t * dout + j];
                let dz = d_output[t * dout + j] * act.derivative_from_output(y);
                gb[j] += dz;
                axpy(dz, h, &mut gw[j * din..(j + 1) * din]);
                axpy(dz, &w[j * din..(j + 1) * din], dh);
            }
        }
    }

    // Recurrent layers, top down.
    let ndir = arch.num_directions();
    for layer in (0..2).rev() {
        let hsz = arch.hidden[layer];
        let lc = &cache.layers[layer];
        let d_in_layer = arch.layer_input_dim(layer);
        let mut d_input = if layer > 0 { Some(vec![T::zero(); steps * d_in_layer]) } else { None };
        for dir in 0..ndir {
            let mut dh_dir = vec![T::zero(); steps * hsz];
            for t in 0..steps {
                let src = t * hsz * ndir + dir * hsz;
                dh_dir[t * hsz..(t + 1) * hsz].copy_from_slice(&d_hidden[src..src + hsz]);
            }
            let bi = params.lstm_block_index(layer, dir);
            let (gwx, gwh, gb) =
                split_three(grads, blocks[bi].range(), blocks[bi + 1].range(), blocks[bi + 2].range());
            backprop_direction(
                &params.lstm(layer, dir),
                &lc.dirs[dir],
                &lc.input,
                &dh_dir,
                steps,
                DirectionGrads { w_input: gwx, w_recurrent: gwh, bias: gb },
                d_input.as_deref_mut(),
            );
        }
        if let Some(d) = d_input {
            d_hidden = d;
        }
    }
    Ok(())
}

/// Parameter gradients of a scalar loss with output gradient `d_output`.
pub fn model_backward<T: Scalar>(
    params: &ModelParameters<T>,
    cache: &ForwardCache<T>,
    d_output: &[T],
) -> Result<Vec<T>> {
    let mut g = vec![T::zero(); params.len()];
    model_backward_into(params, cache, d_output, &mut g)?;
    Ok(g)
}

fn split_two<T>(
    buf: &mut [T],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [T], &mut [T]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

fn split_three<T>(
    buf: &mut [T],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
    c: std::ops::Range<usize>,
) -> (&mut [T], &mut [T], &mut [T]) {
    debug_assert!(b.end <= c.start);
    let (lo, hi) = buf.split_at_mut(c.start);
    let (x, y) = split_two(lo, a, b);
    (x, y, &mut hi[..c.end - c.start])
}
