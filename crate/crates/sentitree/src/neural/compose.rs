//! The gate pre-activation kernel: a bilinear form `S T^k S^T` over the
//! concatenated pair `S = [A, B]` plus one matrix term `W^k_{I,J} S^T`, where
//! `(I, J)` are the entity bits of the left and right child. Exactly one of
//! the four matrices contributes to any given call.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{GateParams, TreeLstmParams};
use super::NeuralError;

pub(crate) fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    &a2 * &b2
}

fn tensor_as_2d(gate: &GateParams, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    gate.tensor
        .view()
        .into_shape_with_order((rows, cols))
        .expect("tensor is contiguous")
}

/// One gate computation over two half inputs of width `d + 7`. `a_entity`
/// and `b_entity` are the entity bits of the children the two halves stand
/// for; they select which of the four gate matrices applies.
pub fn compose(
    k: usize,
    a: ArrayView1<f64>,
    a_entity: bool,
    b: ArrayView1<f64>,
    b_entity: bool,
    params: &TreeLstmParams,
) -> Result<Array1<f64>, NeuralError> {
    let half = params.hyper.half_dim();
    if k >= super::NUM_GATES {
        return Err(NeuralError::ShapeMismatch {
            what: "gate index",
            expected: super::NUM_GATES,
            found: k,
        });
    }
    for (what, len) in [("left compose input", a.len()), ("right compose input", b.len())] {
        if len != half {
            return Err(NeuralError::ShapeMismatch { what, expected: half, found: len });
        }
    }
    let mut s = Array1::zeros(params.hyper.pair_dim());
    s.slice_mut(ndarray::s![..half]).assign(&a);
    s.slice_mut(ndarray::s![half..]).assign(&b);
    Ok(compose_pair(k, &s, (a_entity, b_entity), params))
}

/// Forward kernel over an already-concatenated pair vector.
pub(crate) fn compose_pair(
    k: usize,
    s: &Array1<f64>,
    ij: (bool, bool),
    params: &TreeLstmParams,
) -> Array1<f64> {
    let gate = &params.gates[k];
    let pair = params.hyper.pair_dim();
    let d = params.hyper.d;

    // out[m] = sum_ab s[a] T[a,b,m] s[b], contracted as two mat-vec products.
    let first = s.dot(&tensor_as_2d(gate, pair, pair * d));
    let second = first
        .view()
        .into_shape_with_order((pair, d))
        .expect("contiguous");
    let mut out = s.dot(&second);

    let w = &gate.w[ij.0 as usize][ij.1 as usize];
    out += &w.dot(s);
    out
}

/// Backward kernel: accumulates tensor and matrix gradients for gate `k` and
/// returns the gradient with respect to the pair vector.
pub(crate) fn compose_pair_backward(
    k: usize,
    s: &Array1<f64>,
    ij: (bool, bool),
    grad_out: &Array1<f64>,
    params: &TreeLstmParams,
    grad_gate: &mut GateParams,
) -> Array1<f64> {
    let gate = &params.gates[k];
    let pair = params.hyper.pair_dim();
    let d = params.hyper.d;

    // dW_{I,J} += g (x) s; the unselected matrices stay untouched.
    let gw = &mut grad_gate.w[ij.0 as usize][ij.1 as usize];
    *gw += &outer(grad_out.view(), s.view());

    // dT[a,b,m] += s[a] s[b] g[m].
    let sg = outer(s.view(), grad_out.view());
    for a in 0..pair {
        grad_gate
            .tensor
            .index_axis_mut(Axis(0), a)
            .scaled_add(s[a], &sg);
    }

    // dS = (M + M^T) s + W^T g with M[a,b] = sum_m T[a,b,m] g[m].
    let contracted = tensor_as_2d(gate, pair * pair, d).dot(grad_out);
    let m = contracted
        .view()
        .into_shape_with_order((pair, pair))
        .expect("contiguous");
    let mut ds = m.dot(s);
    ds += &m.t().dot(s);
    let w = &gate.w[ij.0 as usize][ij.1 as usize];
    ds += &w.t().dot(grad_out);
    ds
}
