use lbanp_tensor::Tensor;

use crate::error::{contract, Result};

/// A batch of tasks sharing context size `N` and target size `M`.
///
/// Shapes: `x_c [B, N, x_dim]`, `y_c [B, N, y_dim]`, `x_t [B, M, x_dim]`,
/// `y_t [B, M, y_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskBatch {
    pub x_c: Tensor,
    pub y_c: Tensor,
    pub x_t: Tensor,
    pub y_t: Tensor,
}

impl TaskBatch {
    pub fn new(x_c: Tensor, y_c: Tensor, x_t: Tensor, y_t: Tensor) -> Result<Self> {
        let all = [&x_c, &y_c, &x_t, &y_t];
        if all.iter().any(|t| t.rank() != 3) {
            return contract("task tensors must be rank 3");
        }
        let b = x_c.shape()[0];
        let ok = all.iter().all(|t| t.shape()[0] == b)
            && x_c.shape()[1] == y_c.shape()[1]
            && x_t.shape()[1] == y_t.shape()[1]
            && x_c.shape()[2] == x_t.shape()[2]
            && y_c.shape()[2] == y_t.shape()[2];
        if !ok {
            return contract(format!(
                "inconsistent task shapes {:?} {:?} {:?} {:?}",
                x_c.shape(),
                y_c.shape(),
                x_t.shape(),
                y_t.shape()
            ));
        }
        Ok(TaskBatch { x_c, y_c, x_t, y_t })
    }

    /// Single task from flat row-major points.
    pub fn single(
        x_c: Vec<f64>,
        y_c: Vec<f64>,
        x_t: Vec<f64>,
        y_t: Vec<f64>,
        x_dim: usize,
        y_dim: usize,
    ) -> Result<Self> {
        let n = x_c.len() / x_dim;
        let m = x_t.len() / x_dim;
        Self::new(
            Tensor::new([1, n, x_dim], x_c)?,
            Tensor::new([1, n, y_dim], y_c)?,
            Tensor::new([1, m, x_dim], x_t)?,
            Tensor::new([1, m, y_dim], y_t)?,
        )
    }

    pub fn batch_size(&self) -> usize {
        self.x_c.shape()[0]
    }

    pub fn n_context(&self) -> usize {
        self.x_c.shape()[1]
    }

    pub fn n_target(&self) -> usize {
        self.x_t.shape()[1]
    }

    pub fn x_dim(&self) -> usize {
        self.x_c.shape()[2]
    }

    pub fn y_dim(&self) -> usize {
        self.y_c.shape()[2]
    }

    /// Task `i` as a batch of one.
    pub fn task(&self, i: usize) -> TaskBatch {
        let pick = |t: &Tensor| {
            let s = t.shape();
            let per = s[1] * s[2];
            Tensor::new([1, s[1], s[2]], t.data()[i * per..(i + 1) * per].to_vec()).expect("task slice")
        };
        TaskBatch {
            x_c: pick(&self.x_c),
            y_c: pick(&self.y_c),
            x_t: pick(&self.x_t),
            y_t: pick(&self.y_t),
        }
    }

    /// The first `k` tasks.
    pub fn take_tasks(&self, k: usize) -> Result<TaskBatch> {
        if k == 0 || k > self.batch_size() {
            return contract(format!("cannot take {k} of {} tasks", self.batch_size()));
        }
        let head = |t: &Tensor| {
            let s = t.shape();
            Tensor::new([k, s[1], s[2]], t.data()[..k * s[1] * s[2]].to_vec())
        };
        TaskBatch::new(head(&self.x_c)?, head(&self.y_c)?, head(&self.x_t)?, head(&self.y_t)?)
    }

    /// Context rows reordered so that new row `j` is old row `perm[j]`,
    /// identically for every task.
    pub fn permute_context(&self, perm: &[usize]) -> Result<TaskBatch> {
        Ok(TaskBatch {
            x_c: gather_rows(&self.x_c, perm)?,
            y_c: gather_rows(&self.y_c, perm)?,
            ..self.clone()
        })
    }

    /// Keep only the listed target rows.
    pub fn select_targets(&self, rows: &[usize]) -> Result<TaskBatch> {
        Ok(TaskBatch {
            x_t: gather_rows(&self.x_t, rows)?,
            y_t: gather_rows(&self.y_t, rows)?,
            ..self.clone()
        })
    }

    /// Context duplicated: every task's context set appears twice.
    pub fn duplicate_context(&self) -> Result<TaskBatch> {
        let n = self.n_context();
        let rows: Vec<usize> = (0..n).chain(0..n).collect();
        Ok(TaskBatch {
            x_c: gather_rows(&self.x_c, &rows)?,
            y_c: gather_rows(&self.y_c, &rows)?,
            ..self.clone()
        })
    }
}

/// Rows of axis 1 of a rank-3 tensor picked by index.
pub fn gather_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let s = t.shape();
    let (b, n, d) = (s[0], s[1], s[2]);
    if rows.is_empty() || rows.iter().any(|&r| r >= n) {
        return contract(format!("row selection {rows:?} out of range for {n} rows"));
    }
    let mut out = Vec::with_capacity(b * rows.len() * d);
    for bi in 0..b {
        for &r in rows {
            out.extend_from_slice(&t.data()[(bi * n + r) * d..(bi * n + r + 1) * d]);
        }
    }
    Ok(Tensor::new([b, rows.len(), d], out)?)
}
