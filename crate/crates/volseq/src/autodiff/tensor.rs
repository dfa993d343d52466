use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::{Error, Result};

pub(crate) struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub grad: Option<Vec<f32>>,
    pub requires_grad: bool,
}

/// A float32 array participating in reverse-mode gradient computation.
///
/// Cheap to clone: clones share the underlying buffer, so a parameter held
/// by a model and by an optimizer is one value. Mutation happens through
/// `set_data` / gradient accumulation only; forward ops always allocate a
/// fresh output tensor.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<TensorData>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.inner.borrow();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            d.shape, d.requires_grad
        )
    }
}

fn check_len(values: &[f32], shape: &[usize]) -> Result<()> {
    let n: usize = shape.iter().product();
    if values.len() != n {
        return Err(Error::Dim(format!(
            "data length {} does not match shape {:?} (expected {})",
            values.len(),
            shape,
            n
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn from_vec(values: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        check_len(&values, shape)?;
        Ok(Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape: shape.to_vec(),
                values,
                grad: None,
                requires_grad: false,
            })),
        })
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn param(values: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(vec![0.0; n], shape).expect("consistent by construction")
    }

    pub fn full(shape: &[usize], v: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(vec![v; n], shape).expect("consistent by construction")
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::from_vec(vec![v], &[1]).expect("consistent by construction")
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn data(&self) -> Vec<f32> {
        self.inner.borrow().values.clone()
    }

    /// Run `f` against the raw values without cloning.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f32]) -> R) -> R {
        f(&self.inner.borrow().values)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        let d = self.inner.borrow();
        if d.values.len() != 1 {
            return Err(Error::Dim(format!(
                "item() on tensor of shape {:?}",
                d.shape
            )));
        }
        Ok(d.values[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.inner.borrow_mut().requires_grad = v;
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the values in place (same length required).
    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        let mut d = self.inner.borrow_mut();
        if values.len() != d.values.len() {
            return Err(Error::Dim(format!(
                "set_data length {} vs tensor numel {}",
                values.len(),
                d.values.len()
            )));
        }
        d.values.copy_from_slice(values);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.inner.borrow().values.iter().all(|v| v.is_finite())
    }

    /// Same values, cut off from the graph. This is the stop-gradient
    /// operator: forward identity, zero gradient contribution upstream.
    pub fn detach(&self) -> Tensor {
        let d = self.inner.borrow();
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape: d.shape.clone(),
                values: d.values.clone(),
                grad: None,
                requires_grad: false,
            })),
        }
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        let mut d = self.inner.borrow_mut();
        debug_assert_eq!(g.len(), d.values.len());
        match &mut d.grad {
            Some(existing) => {
                for (e, gi) in existing.iter_mut().zip(g) {
                    *e += gi;
                }
            }
            None => d.grad = Some(g.to_vec()),
        }
    }
}

// ---------------------------------------------------------------------------
// Thread-local tape
// ---------------------------------------------------------------------------

struct TapeEntry {
    output: Tensor,
    backward: Box<dyn FnOnce(&[f32])>,
}

thread_local! {
    static TAPE: RefCell<Vec<TapeEntry>> = const { RefCell::new(Vec::new()) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` with gradient recording disabled (restored on exit or panic).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Guard(bool);
    impl Drop for Guard {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _guard = Guard(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// Number of operations currently recorded on this thread's tape.
pub fn tape_len() -> usize {
    TAPE.with(|t| t.borrow().len())
}

/// Drop all recorded operations without running backward.
pub fn clear_tape() {
    TAPE.with(|t| t.borrow_mut().clear());
}

/// Whether an op over these operands should record a backward closure.
pub(crate) fn should_record(parents: &[&Tensor]) -> bool {
    is_grad_enabled() && parents.iter().any(|p| p.requires_grad())
}

pub(crate) fn push_entry(output: &Tensor, backward: Box<dyn FnOnce(&[f32])>) {
    TAPE.with(|t| {
        t.borrow_mut().push(TapeEntry {
            output: output.clone(),
            backward,
        })
    });
}

/// Reverse-mode pass from a scalar: seeds d(loss)/d(loss) = 1, replays the
/// recorded operations in reverse (each visited exactly once), accumulates
/// into `.grad` of every reachable tensor that requires gradients, and
/// clears the tape.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Precondition(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Precondition(
            "backward on a tensor that does not require gradients".into(),
        ));
    }
    loss.accumulate_grad(&[1.0]);
    let entries = TAPE.with(|t| std::mem::take(&mut *t.borrow_mut()));
    for entry in entries.into_iter().rev() {
        let g = entry.output.inner.borrow().grad.clone();
        if let Some(g) = g {
            (entry.backward)(&g);
        }
    }
    Ok(())
}
