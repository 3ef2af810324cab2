//! LSTM recurrences: a single cell step, a full pass over a sequence in
//! either direction, and the matching backpropagation through time.

use crate::error::{invalid, Result};
use crate::scalar::{axpy, dot, Scalar};

use super::params::LstmLayerParams;

/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c = f c_prev + i g`,
/// `h = o tanh(c)`.
pub fn lstm_cell_step<T: Scalar>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    p: &LstmLayerParams<'_, T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let (d, h) = (p.input_dim, p.hidden);
    if x.len() != d || h_prev.len() != h || c_prev.len() != h {
        return invalid(format!(
            "cell step shapes: x {} (want {d}), h {} and c {} (want {h})",
            x.len(),
            h_prev.len(),
            c_prev.len()
        ));
    }
    let mut z = vec![T::zero(); 4 * h];
    for (j, zj) in z.iter_mut().enumerate() {
        *zj = p.bias[j]
            + dot(&p.w_input[j * d..(j + 1) * d], x)
            + dot(&p.w_recurrent[j * h..(j + 1) * h], h_prev);
    }
    let mut h_out = vec![T::zero(); h];
    let mut c_out = vec![T::zero(); h];
    for k in 0..h {
        let i = z[k].sigmoid();
        let f = z[h + k].sigmoid();
        let g = z[2 * h + k].tanh();
        let o = z[3 * h + k].sigmoid();
        c_out[k] = f * c_prev[k] + i * g;
        h_out[k] = o * c_out[k].tanh();
    }
    Ok((h_out, c_out))
}

/// Activations of one direction over a sequence, indexed by original frame.
#[derive(Debug, Clone)]
pub struct DirectionCache<T> {
    /// Post-activation gates `(i, f, g, o)` per frame, `steps x 4H`.
    pub gates: Vec<T>,
    pub cells: Vec<T>,
    pub tanh_cells: Vec<T>,
    pub hidden: Vec<T>,
    pub reverse: bool,
}

impl<T: Scalar> DirectionCache<T> {
    fn frame_order(steps: usize, reverse: bool) -> impl DoubleEndedIterator<Item = usize> {
        (0..steps).map(move |s| if reverse { steps - 1 - s } else { s })
    }

    /// Frame processed immediately before `t`, if any.
    fn previous(t: usize, steps: usize, reverse: bool) -> Option<usize> {
        if reverse {
            (t + 1 < steps).then_some(t + 1)
        } else {
            t.checked_sub(1)
        }
    }
}

/// Run one direction over `steps` frames of `input` (frame-major, width
/// `p.input_dim`). State starts at zero.
pub fn run_direction<T: Scalar>(
    p: &LstmLayerParams<'_, T>,
    input: &[T],
    steps: usize,
    reverse: bool,
) -> DirectionCache<T> {
    let (d, h) = (p.input_dim, p.hidden);
    let g4 = 4 * h;
    // Input projections for every frame up front.
    let mut gates = vec![T::zero(); steps * g4];
    for t in 0..steps {
        let x = &input[t * d..(t + 1) * d];
        let z = &mut gates[t * g4..(t + 1) * g4];
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = p.bias[j] + dot(&p.w_input[j * d..(j + 1) * d], x);
        }
    }
    let mut cells = vec![T::zero(); steps * h];
    let mut tanh_cells = vec![T::zero(); steps * h];
    let mut hidden = vec![T::zero(); steps * h];
    let zeros = vec![T::zero(); h];
    let mut c_new = vec![T::zero(); h];
    for t in DirectionCache::<T>::frame_order(steps, reverse) {
        let prev = DirectionCache::<T>::previous(t, steps, reverse);
        let (h_prev, c_prev): (&[T], &[T]) = match prev {
            Some(q) => (&hidden[q * h..(q + 1) * h], &cells[q * h..(q + 1) * h]),
            None => (&zeros, &zeros),
        };
        let z = &mut gates[t * g4..(t + 1) * g4];
        for (j, zj) in z.iter_mut().enumerate() {
            *zj += dot(&p.w_recurrent[j * h..(j + 1) * h], h_prev);
        }
        for k in 0..h {
            let i = z[k].sigmoid();
            let f = z[h + k].sigmoid();
            let g = z[2 * h + k].tanh();
            let o = z[3 * h + k].sigmoid();
            z[k] = i;
            z[h + k] = f;
            z[2 * h + k] = g;
            z[3 * h + k] = o;
            c_new[k] = f * c_prev[k] + i * g;
        }
        for k in 0..h {
            let c = c_new[k];
            let tc = c.tanh();
            cells[t * h + k] = c;
            tanh_cells[t * h + k] = tc;
            hidden[t * h + k] = z[3 * h + k] * tc;
        }
    }
    DirectionCache { gates, cells, tanh_cells, hidden, reverse }
}

/// Gradient slices for one direction's three parameter blocks.
pub struct DirectionGrads<'a, T> {
    pub w_input: &'a mut [T],
    pub w_recurrent: &'a mut [T],
    pub bias: &'a mut [T],
}

/// Backpropagation through time for one direction. `d_hidden` is the loss
/// gradient with respect to this direction's hidden outputs (`steps x H`).
/// Parameter gradients are accumulated into `grads`; the gradient with
/// respect to the input is accumulated into `d_input` when given.
pub fn backprop_direction<T: Scalar>(
    p: &LstmLayerParams<'_, T>,
    cache: &DirectionCache<T>,
    input: &[T],
    d_hidden: &[T],
    steps: usize,
    grads: DirectionGrads<'_, T>,
    mut d_input: Option<&mut [T]>,
) {
    let (d, h) = (p.input_dim, p.hidden);
    let g4 = 4 * h;
    let reverse = cache.reverse;
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let mut dz = vec![T::zero(); g4];
    let one = T::one();
    for t in DirectionCache::<T>::frame_order(steps, reverse).rev() {
        let prev = DirectionCache::<T>::previous(t, steps, reverse);
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let tc = cache.tanh_cells[t * h + k];
            let c_prev = prev.map_or(T::zero(), |q| cache.cells[q * h + k]);
            let dh = d_hidden[t * h + k] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (one - tc * tc) + dc_next[k];
            dz[k] = dc * g * i * (one - i);
            dz[h + k] = dc * c_prev * f * (one - f);
            dz[2 * h + k] = dc * i * (one - g * g);
            dz[3 * h + k] = d_o * o * (one - o);
            dc_next[k] = dc * f;
        }
        let x = &input[t * d..(t + 1) * d];
        for (b, v) in grads.bias.iter_mut().zip(&dz) {
            *b += *v;
        }
        for j in 0..g4 {
            axpy(dz[j], x, &mut grads.w_input[j * d..(j + 1) * d]);
        }
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        if let Some(q) = prev {
            let h_prev = &cache.hidden[q * h..(q + 1) * h];
            for j in 0..g4 {
                axpy(dz[j], h_prev, &mut grads.w_recurrent[j * h..(j + 1) * h]);
                axpy(dz[j], &p.w_recurrent[j * h..(j + 1) * h], &mut dh_next);
            }
        }
        if let Some(dx) = d_input.as_deref_mut() {
            let dx = &mut dx[t * d..(t + 1) * d];
            for j in 0..g4 {
                axpy(dz[j], &p.w_input[j * d..(j + 1) * d], dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect()
    }

    /// Scalar-loop LSTM cell written straight from the gate equations.
    fn oracle_step(
        x: &[f64],
        hp: &[f64],
        cp: &[f64],
        wx: &[f64],
        wh: &[f64],
        b: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let h = hp.len();
        let d = x.len();
        let pre = |gate: usize, k: usize| -> f64 {
            let row = gate * h + k;
            let mut s = b[row];
            for m in 0..d {
                s += wx[row * d + m] * x[m];
            }
            for m in 0..h {
                s += wh[row * h + m] * hp[m];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hn = vec![0.0; h];
        let mut cn = vec![0.0; h];
        for k in 0..h {
            let i = sig(pre(0, k));
            let f = sig(pre(1, k));
            let g = pre(2, k).tanh();
            let o = sig(pre(3, k));
            cn[k] = f * cp[k] + i * g;
            hn[k] = o * cn[k].tanh();
        }
        (hn, cn)
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, h) = (3, 4);
        let wx = rand_vec(&mut rng, 4 * h * d);
        let wh = rand_vec(&mut rng, 4 * h * h);
        let b = rand_vec(&mut rng, 4 * h);
        let p = LstmLayerParams { w_input: &wx, w_recurrent: &wh, bias: &b, input_dim: d, hidden: h };
        let x = rand_vec(&mut rng, d);
        let hp = rand_vec(&mut rng, h);
        let cp = rand_vec(&mut rng, h);
        let (h1, c1) = lstm_cell_step(&x, &hp, &cp, &p).unwrap();
        let (h2, c2) = oracle_step(&x, &hp, &cp, &wx, &wh, &b);
        for k in 0..h {
            assert!((h1[k] - h2[k]).abs() < 1e-12);
            assert!((c1[k] - c2[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let (d, h) = (2, 3);
        let wx = vec![0.0; 4 * h * d];
        let wh = vec![0.0; 4 * h * h];
        let b = vec![0.0; 4 * h];
        let p = LstmLayerParams { w_input: &wx, w_recurrent: &wh, bias: &b, input_dim: d, hidden: h };
        let (hn, cn) = lstm_cell_step(&[1.0, -2.0], &[0.0; 3], &[0.0; 3], &p).unwrap();
        assert!(hn.iter().chain(&cn).all(|v| *v == 0.0));
    }

    #[test]
    fn cell_state_growth_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d, h) = (2, 5);
        let wx: Vec<f64> = (0..4 * h * d).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let wh: Vec<f64> = (0..4 * h * h).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let b: Vec<f64> = (0..4 * h).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let p = LstmLayerParams { w_input: &wx, w_recurrent: &wh, bias: &b, input_dim: d, hidden: h };
        for _ in 0..50 {
            let m = rng.gen_range(0.0..10.0);
            let cp: Vec<f64> = (0..h).map(|_| rng.gen_range(-m..=m)).collect();
            let hp = rand_vec(&mut rng, h);
            let x = rand_vec(&mut rng, d);
            let (hn, cn) = lstm_cell_step(&x, &hp, &cp, &p).unwrap();
            for k in 0..h {
                assert!(cn[k].abs() <= m + 1.0);
                assert!(hn[k].is_finite() && hn[k].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn cell_rejects_bad_shapes() {
        let wx = vec![0.0; 8];
        let wh = vec![0.0; 4];
        let b = vec![0.0; 4];
        let p = LstmLayerParams { w_input: &wx, w_recurrent: &wh, bias: &b, input_dim: 2, hidden: 1 };
        assert!(lstm_cell_step(&[0.0], &[0.0], &[0.0], &p).is_err());
    }

    #[test]
    fn sequence_pass_agrees_with_repeated_cell_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (d, h, steps) = (3, 4, 6);
        let wx = rand_vec(&mut rng, 4 * h * d);
        let wh = rand_vec(&mut rng, 4 * h * h);
        let b = rand_vec(&mut rng, 4 * h);
        let p = LstmLayerParams { w_input: &wx, w_recurrent: &wh, bias: &b, input_dim: d, hidden: h };
        let input = rand_vec(&mut rng, steps * d);
        for reverse in [false, true] {
            let cache = run_direction(&p, &input, steps, reverse);
            let mut hs = vec![0.0; h];
            let mut cs = vec![0.0; h];
            let order: Vec<usize> =
                if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
            for t in order {
                let (hn, cn) = lstm_cell_step(&input[t * d..(t + 1) * d], &hs, &cs, &p).unwrap();
                for k in 0..h {
                    assert!((cache.hidden[t * h + k] - hn[k]).abs() < 1e-14);
                }
                hs = hn;
                cs = cn;
            }
        }
    }
}
