//! Minimal reverse-mode autodiff over dense f64 matrices, covering exactly
//! the operations the point predictor needs.

use ndarray::{concatenate, Array2, Axis};

enum Op {
    Leaf,
    /// a (n x k) * b (k x m)
    MatMul(usize, usize),
    /// a (n x k) * b (m x k)^T
    MatMulT(usize, usize),
    /// x (n x m) + bias (1 x m), broadcast over rows
    AddRowBias(usize, usize),
    Relu(usize),
    /// Softmax over rows within each column (axis 0).
    SoftmaxCols(usize),
    /// Elementwise product of equal shapes.
    Mul(usize, usize),
    /// Sum over rows: (n x m) -> (1 x m).
    SumRows(usize),
    /// Tile (1 x m) to (rows x m).
    BroadcastRows(usize),
    /// Horizontal concatenation of equal-row matrices.
    ConcatCols(usize, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Computation tape. Nodes are appended by the builder methods; `backward`
/// walks them in reverse and returns one gradient per node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: usize) -> &Array2<f64> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> usize {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> usize {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: usize, b: usize) -> usize {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: usize, b: usize) -> usize {
        let v = self.nodes[a].value.dot(&self.nodes[b].value.t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add_row_bias(&mut self, x: usize, bias: usize) -> usize {
        debug_assert_eq!(self.nodes[bias].value.nrows(), 1);
        let v = &self.nodes[x].value + &self.nodes[bias].value;
        self.push(v, Op::AddRowBias(x, bias))
    }

    pub fn relu(&mut self, x: usize) -> usize {
        let v = self.nodes[x].value.mapv(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn softmax_cols(&mut self, x: usize) -> usize {
        let mut v = self.nodes[x].value.clone();
        for mut col in v.axis_iter_mut(Axis(1)) {
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            col.mapv_inplace(|a| (a - max).exp());
            let sum: f64 = col.sum();
            col.mapv_inplace(|a| a / sum);
        }
        self.push(v, Op::SoftmaxCols(x))
    }

    pub fn mul(&mut self, a: usize, b: usize) -> usize {
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn sum_rows(&mut self, x: usize) -> usize {
        let v = self.nodes[x].value.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(x))
    }

    pub fn broadcast_rows(&mut self, x: usize, rows: usize) -> usize {
        debug_assert_eq!(self.nodes[x].value.nrows(), 1);
        let src = &self.nodes[x].value;
        let v = src.broadcast((rows, src.ncols())).unwrap().to_owned();
        self.push(v, Op::BroadcastRows(x))
    }

    pub fn concat_cols(&mut self, a: usize, b: usize) -> usize {
        let v = concatenate![Axis(1), self.nodes[a].value, self.nodes[b].value];
        self.push(v, Op::ConcatCols(a, b))
    }

    /// Reverse sweep from the given seed gradients; returns the gradient of
    /// the seeded scalar objective with respect to every node (zeros where a
    /// node does not influence it).
    pub fn backward(&self, seeds: &[(usize, Array2<f64>)]) -> Vec<Array2<f64>> {
        let mut grads: Vec<Array2<f64>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        for (id, seed) in seeds {
            debug_assert_eq!(seed.dim(), self.nodes[*id].value.dim());
            grads[*id] += seed;
        }
        for id in (0..self.nodes.len()).rev() {
            let g = grads[id].clone();
            match self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b].value.t());
                    let gb = self.nodes[a].value.t().dot(&g);
                    grads[a] += &ga;
                    grads[b] += &gb;
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&self.nodes[b].value);
                    let gb = g.t().dot(&self.nodes[a].value);
                    grads[a] += &ga;
                    grads[b] += &gb;
                }
                Op::AddRowBias(x, bias) => {
                    grads[x] += &g;
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    grads[bias] += &gb;
                }
                Op::Relu(x) => {
                    let gx = &g * &self.nodes[x].value.mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
                    grads[x] += &gx;
                }
                Op::SoftmaxCols(x) => {
                    let s = &self.nodes[id].value;
                    let mut gx = Array2::zeros(g.dim());
                    for j in 0..s.ncols() {
                        let sc = s.column(j);
                        let gc = g.column(j);
                        let dot: f64 = sc.iter().zip(gc.iter()).map(|(a, b)| a * b).sum();
                        for i in 0..s.nrows() {
                            gx[[i, j]] = sc[i] * (gc[i] - dot);
                        }
                    }
                    grads[x] += &gx;
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    grads[a] += &ga;
                    grads[b] += &gb;
                }
                Op::SumRows(x) => {
                    let rows = self.nodes[x].value.nrows();
                    let gx = g.broadcast((rows, g.ncols())).unwrap().to_owned();
                    grads[x] += &gx;
                }
                Op::BroadcastRows(x) => {
                    let gx = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    grads[x] += &gx;
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a].value.ncols();
                    grads[a] += &g.slice(ndarray::s![.., ..ca]);
                    grads[b] += &g.slice(ndarray::s![.., ca..]);
                }
            }
        }
        grads
    }
}
