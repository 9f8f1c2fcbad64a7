use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Matrix, Tape, TapeMatrix};

/// Per-node recurrent state of one layer.
#[derive(Clone, Debug)]
pub struct LayerState {
    pub h: TapeMatrix,
    pub c: TapeMatrix,
}

impl LayerState {
    pub fn zeros(num_nodes: usize, hidden: usize) -> Self {
        LayerState {
            h: TapeMatrix::constant(Matrix::zeros(num_nodes, hidden)),
            c: TapeMatrix::constant(Matrix::zeros(num_nodes, hidden)),
        }
    }

    pub fn from_values(h: Matrix, c: Matrix) -> Result<Self> {
        if h.shape() != c.shape() {
            return Err(Error::shape("LayerState", h.shape(), c.shape()));
        }
        Ok(LayerState {
            h: TapeMatrix::constant(h),
            c: TapeMatrix::constant(c),
        })
    }

    pub fn detach(&self) -> LayerState {
        LayerState {
            h: self.h.detach(),
            c: self.c.detach(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.h.rows()
    }

    pub fn permute(&self, perm: &[usize]) -> LayerState {
        LayerState {
            h: TapeMatrix::constant(self.h.value().permute_rows(perm)),
            c: TapeMatrix::constant(self.c.value().permute_rows(perm)),
        }
    }
}

/// Cuts every state from the tape; values are untouched.
pub fn detach_states(states: &[LayerState]) -> Vec<LayerState> {
    states.iter().map(LayerState::detach).collect()
}

/// LSTM cell shared by all nodes, gate order `(i, f, g, o)`.
///
/// `w_ih: [d_in x 4d_h]`, `w_hh: [d_h x 4d_h]`, `b: [1 x 4d_h]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let g = 4 * hidden_dim;
        let w_ih = store.add(format!("{prefix}.w_ih"), Matrix::xavier(input_dim, g, rng));
        let w_hh = store.add(format!("{prefix}.w_hh"), Matrix::xavier(hidden_dim, g, rng));
        let mut b = Matrix::zeros(1, g);
        for j in hidden_dim..2 * hidden_dim {
            b.set(0, j, 1.0);
        }
        let bias = store.add(format!("{prefix}.bias"), b);
        LstmCell {
            input_dim,
            hidden_dim,
            w_ih,
            w_hh,
            bias,
        }
    }

    /// One step for all rows: `C' = f*C + i*g`, `H' = o*tanh(C')`.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: &TapeMatrix,
        state: &LayerState,
    ) -> Result<LayerState> {
        let d = self.hidden_dim;
        if x.cols() != self.input_dim || x.rows() != state.num_nodes() {
            return Err(Error::shape(
                "lstm_step",
                x.shape(),
                (state.num_nodes(), self.input_dim),
            ));
        }
        if state.h.cols() != d || state.c.shape() != state.h.shape() {
            return Err(Error::shape(
                "lstm_step state",
                state.h.shape(),
                state.c.shape(),
            ));
        }
        let xi = tape.matmul(x, &p[self.w_ih])?;
        let hh = tape.matmul(&state.h, &p[self.w_hh])?;
        let pre = tape.add(&xi, &hh)?;
        let pre = tape.add_row(&pre, &p[self.bias])?;

        let i = tape.slice_cols(&pre, 0, d)?;
        let i = tape.sigmoid(&i);
        let f = tape.slice_cols(&pre, d, 2 * d)?;
        let f = tape.sigmoid(&f);
        let g = tape.slice_cols(&pre, 2 * d, 3 * d)?;
        let g = tape.tanh(&g);
        let o = tape.slice_cols(&pre, 3 * d, 4 * d)?;
        let o = tape.sigmoid(&o);

        let keep = tape.mul(&f, &state.c)?;
        let write = tape.mul(&i, &g)?;
        let c = tape.add(&keep, &write)?;
        let tc = tape.tanh(&c);
        let h = tape.mul(&o, &tc)?;
        Ok(LayerState { h, c })
    }
}
