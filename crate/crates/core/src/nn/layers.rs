use rand::Rng;

use super::{ParamId, ParamStore, Tape, Var};

/// Affine map x·W (+ b).
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.glorot(&format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = bias.then(|| store.zeros(&format!("{name}.bias"), &[fan_out]));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// GRU cell with reset gate applied to the recurrent candidate term:
/// r = σ(xWr + hUr + b), u = σ(xWu + hUu + b), c = tanh(xWc + r⊙(hUc + b)),
/// h' = u⊙h + (1 − u)⊙c.
#[derive(Clone, Debug)]
pub struct GruCell {
    input: Linear,
    hidden: Linear,
    dim: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input_dim: usize, dim: usize, rng: &mut R) -> Self {
        GruCell {
            input: Linear::new(store, &format!("{name}.input"), input_dim, 3 * dim, true, rng),
            hidden: Linear::new(store, &format!("{name}.hidden"), dim, 3 * dim, true, rng),
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, x: Var) -> Var {
        let d = self.dim;
        let gx = self.input.forward(tape, store, x);
        let gh = self.hidden.forward(tape, store, h);
        let (xr, xu, xc) = (tape.slice_cols(gx, 0, d), tape.slice_cols(gx, d, d), tape.slice_cols(gx, 2 * d, d));
        let (hr, hu, hc) = (tape.slice_cols(gh, 0, d), tape.slice_cols(gh, d, d), tape.slice_cols(gh, 2 * d, d));
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let u = tape.add(xu, hu);
        let u = tape.sigmoid(u);
        let rc = tape.mul(r, hc);
        let c = tape.add(xc, rc);
        let c = tape.tanh(c);
        let keep = tape.mul(u, h);
        let fresh = tape.one_minus(u);
        let fresh = tape.mul(fresh, c);
        tape.add(keep, fresh)
    }
}

/// Graph readout Σᵥ σ(gate(hᵥ)) ⊙ value(hᵥ), summed per graph.
#[derive(Clone, Debug)]
pub struct GatedReadout {
    gate: Linear,
    value: Linear,
}

impl GatedReadout {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        GatedReadout {
            gate: Linear::new(store, &format!("{name}.gate"), input_dim, out_dim, true, rng),
            value: Linear::new(store, &format!("{name}.value"), input_dim, out_dim, true, rng),
        }
    }

    /// `graph_of_node[v]` names the graph (row of the result) node v belongs to.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, graph_of_node: Vec<usize>, graphs: usize) -> Var {
        let g = self.gate.forward(tape, store, h);
        let g = tape.sigmoid(g);
        let v = self.value.forward(tape, store, h);
        let gv = tape.mul(g, v);
        tape.scatter_add_rows(gv, graph_of_node, graphs)
    }
}
