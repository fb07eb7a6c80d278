//! The differentiable-component contract shared by every pipeline stage.
//!
//! Components exchange flat `f64` buffers. A [`Port`] describes how a
//! buffer is shaped: fields are flattened in grid layout order, vector
//! fields node-major (`[ux, uy, uz]` per node), channel stacks
//! channel-major.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    /// Plain vector of `n` reals.
    Vector(usize),
    /// One real per node of a grid with the given dims.
    Scalar([usize; 3]),
    /// Three reals per node.
    Vector3([usize; 3]),
    /// `c` stacked scalar channels on a grid.
    Channels(usize, [usize; 3]),
}

impl Port {
    pub fn len(&self) -> usize {
        match *self {
            Port::Vector(n) => n,
            Port::Scalar(d) => d[0] * d[1] * d[2],
            Port::Vector3(d) => 3 * d[0] * d[1] * d[2],
            Port::Channels(c, d) => c * d[0] * d[1] * d[2],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Port::Vector(n) => write!(f, "vector[{n}]"),
            Port::Scalar(d) => write!(f, "scalar[{}x{}x{}]", d[0], d[1], d[2]),
            Port::Vector3(d) => write!(f, "vector3[{}x{}x{}]", d[0], d[1], d[2]),
            Port::Channels(c, d) => write!(f, "channels[{c}; {}x{}x{}]", d[0], d[1], d[2]),
        }
    }
}

/// A stage with a forward map and its vector-Jacobian product.
///
/// `vjp(x, v)` returns `vᵀ J(x)`, where `J` is the Jacobian of `forward` at
/// `x`. Implementations are immutable and must be safe to call from several
/// threads at once.
pub trait DiffComponent: Send + Sync {
    fn name(&self) -> &str;
    fn input_shape(&self) -> Port;
    fn output_shape(&self) -> Port;
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>>;
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>>;

    /// Forward value together with the vjp of `cotangent` at the same input.
    fn value_and_vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.forward(input)?, self.vjp(input, cotangent)?))
    }
}

impl<C: DiffComponent + ?Sized> DiffComponent for Arc<C> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn input_shape(&self) -> Port {
        (**self).input_shape()
    }
    fn output_shape(&self) -> Port {
        (**self).output_shape()
    }
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        (**self).forward(input)
    }
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        (**self).vjp(input, cotangent)
    }
    fn value_and_vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        (**self).value_and_vjp(input, cotangent)
    }
}

pub(crate) fn check_len(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Length {
            context: context.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Left-to-right composition of components; its vjp runs the stage vjps
/// right to left.
pub struct Chain {
    name: String,
    stages: Vec<Box<dyn DiffComponent>>,
}

pub fn chain(stages: Vec<Box<dyn DiffComponent>>) -> Result<Chain> {
    if stages.is_empty() {
        return Err(Error::Config("cannot chain zero components".into()));
    }
    for (link, pair) in stages.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if a.output_shape() != b.input_shape() {
            return Err(Error::ShapeMismatch {
                link,
                left: a.name().to_string(),
                right: b.name().to_string(),
                left_shape: a.output_shape().to_string(),
                right_shape: b.input_shape().to_string(),
            });
        }
    }
    let name = stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(" -> ");
    Ok(Chain { name, stages })
}

impl Chain {
    pub fn stages(&self) -> &[Box<dyn DiffComponent>] {
        &self.stages
    }

    /// Inputs of every stage followed by the final output.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len(&self.name, self.input_shape().len(), input.len())?;
        let mut trace = Vec::with_capacity(self.stages.len() + 1);
        trace.push(input.to_vec());
        for stage in &self.stages {
            let next = stage.forward(trace.last().expect("trace starts non-empty"))?;
            trace.push(next);
        }
        Ok(trace)
    }
}

impl DiffComponent for Chain {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_shape(&self) -> Port {
        self.stages[0].input_shape()
    }

    fn output_shape(&self) -> Port {
        self.stages[self.stages.len() - 1].output_shape()
    }

    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward_trace(input)?;
        Ok(trace.pop().expect("trace has output"))
    }

    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_vjp(input, cotangent)?.1)
    }

    fn value_and_vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(&self.name, self.output_shape().len(), cotangent.len())?;
        let mut trace = self.forward_trace(input)?;
        let output = trace.pop().expect("trace has output");
        let mut cot = cotangent.to_vec();
        for (stage, x) in self.stages.iter().zip(&trace).rev() {
            cot = stage.vjp(x, &cot)?;
        }
        Ok((output, cot))
    }
}

type ForwardFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;
type VjpFn = dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync;

/// Component assembled from a pair of closures.
pub struct FnComponent {
    name: String,
    input: Port,
    output: Port,
    forward: Box<ForwardFn>,
    vjp: Box<VjpFn>,
}

impl FnComponent {
    pub fn new(
        name: impl Into<String>,
        input: Port,
        output: Port,
        forward: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
        vjp: impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        FnComponent {
            name: name.into(),
            input,
            output,
            forward: Box::new(forward),
            vjp: Box::new(vjp),
        }
    }
}

impl DiffComponent for FnComponent {
    fn name(&self) -> &str {
        &self.name
    }
    fn input_shape(&self) -> Port {
        self.input
    }
    fn output_shape(&self) -> Port {
        self.output
    }
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len(&self.name, self.input.len(), input.len())?;
        (self.forward)(input)
    }
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_len(&self.name, self.input.len(), input.len())?;
        check_len(&self.name, self.output.len(), cotangent.len())?;
        (self.vjp)(input, cotangent)
    }
}

/// Mean of the x components of a vector field: the scalar objective.
pub struct MeanUx {
    dims: [usize; 3],
}

impl MeanUx {
    pub fn new(dims: [usize; 3]) -> Self {
        MeanUx { dims }
    }
}

impl DiffComponent for MeanUx {
    fn name(&self) -> &str {
        "qoi"
    }
    fn input_shape(&self) -> Port {
        Port::Vector3(self.dims)
    }
    fn output_shape(&self) -> Port {
        Port::Vector(1)
    }
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("qoi", self.input_shape().len(), input.len())?;
        let n = input.len() / 3;
        Ok(vec![input.iter().step_by(3).sum::<f64>() / n as f64])
    }
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_len("qoi", self.input_shape().len(), input.len())?;
        check_len("qoi", 1, cotangent.len())?;
        let n = input.len() / 3;
        let w = cotangent[0] / n as f64;
        let mut out = vec![0.0; input.len()];
        out.iter_mut().step_by(3).for_each(|v| *v = w);
        Ok(out)
    }
}

/// Wraps a component and scales its vjp; the gradient-check negative control.
pub struct CorruptedVjp<C> {
    inner: C,
    factor: f64,
}

impl<C: DiffComponent> CorruptedVjp<C> {
    pub fn new(inner: C, factor: f64) -> Self {
        CorruptedVjp { inner, factor }
    }
}

impl<C: DiffComponent> DiffComponent for CorruptedVjp<C> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn input_shape(&self) -> Port {
        self.inner.input_shape()
    }
    fn output_shape(&self) -> Port {
        self.inner.output_shape()
    }
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.inner.forward(input)
    }
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.inner.vjp(input, cotangent)?;
        g.iter_mut().for_each(|v| *v *= self.factor);
        Ok(g)
    }
}

/// Finite-difference probe settings.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Relative step: `h = step * max(1, |x_i|)`.
    pub step: f64,
    /// Denominator floor for the relative error, so that two near-zero
    /// derivatives compare as equal.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub component: String,
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares `vjp(x, v)[i]` with a central difference of `⟨v, f(x)⟩` along
/// each probed input coordinate.
pub fn check_vjp(
    component: &dyn DiffComponent,
    input: &[f64],
    cotangent: &[f64],
    probes: &[usize],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = component.vjp(input, cotangent)?;
    let project = |x: &[f64]| -> Result<f64> {
        let y = component.forward(x)?;
        Ok(y.iter().zip(cotangent).map(|(a, b)| a * b).sum())
    };
    let mut out = Vec::with_capacity(probes.len());
    let mut x = input.to_vec();
    for &i in probes {
        let h = opts.step * input[i].abs().max(1.0);
        x[i] = input[i] + h;
        let up = project(&x)?;
        x[i] = input[i] - h;
        let down = project(&x)?;
        x[i] = input[i];
        let numeric = (up - down) / (2.0 * h);
        out.push(Probe {
            index: i,
            analytic: analytic[i],
            numeric,
            rel_err: relative_error(analytic[i], numeric, opts.floor),
        });
    }
    Ok(GradCheckReport {
        component: component.name().to_string(),
        probes: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale(k: f64) -> FnComponent {
        FnComponent::new(
            format!("scale{k}"),
            Port::Vector(1),
            Port::Vector(1),
            move |x| Ok(vec![k * x[0]]),
            move |_, v| Ok(vec![k * v[0]]),
        )
    }

    fn shift(c: f64) -> FnComponent {
        FnComponent::new(
            "shift",
            Port::Vector(1),
            Port::Vector(1),
            move |x| Ok(vec![x[0] + c]),
            |_, v| Ok(vec![v[0]]),
        )
    }

    #[test]
    fn chain_of_one_matches_component() {
        let c = chain(vec![Box::new(scale(3.0))]).unwrap();
        assert_eq!(c.forward(&[2.0]).unwrap(), vec![6.0]);
        assert_eq!(c.vjp(&[2.0], &[1.0]).unwrap(), vec![3.0]);
        assert_eq!(c.name(), "scale3");
    }

    #[test]
    fn chain_rule_on_scalars() {
        let c = chain(vec![Box::new(scale(2.0)), Box::new(shift(1.0))]).unwrap();
        assert_eq!(c.forward(&[3.0]).unwrap(), vec![7.0]);
        assert_eq!(c.vjp(&[3.0], &[1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn chain_vjp_runs_right_to_left() {
        // f(x) = x^2 then g(y) = sin y: d/dx = cos(x^2) 2x
        let sq = FnComponent::new(
            "sq",
            Port::Vector(1),
            Port::Vector(1),
            |x| Ok(vec![x[0] * x[0]]),
            |x, v| Ok(vec![2.0 * x[0] * v[0]]),
        );
        let sin = FnComponent::new(
            "sin",
            Port::Vector(1),
            Port::Vector(1),
            |x| Ok(vec![x[0].sin()]),
            |x, v| Ok(vec![x[0].cos() * v[0]]),
        );
        let c = chain(vec![Box::new(sq), Box::new(sin)]).unwrap();
        let g = c.vjp(&[0.7], &[1.0]).unwrap()[0];
        assert!((g - (0.49f64).cos() * 1.4).abs() < 1e-15);
    }

    #[test]
    fn chain_shape_mismatch_names_both() {
        let wide = FnComponent::new(
            "wide",
            Port::Vector(2),
            Port::Vector(2),
            |x| Ok(x.to_vec()),
            |_, v| Ok(v.to_vec()),
        );
        let err = chain(vec![Box::new(scale(1.0)), Box::new(wide)]).err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("scale1") && msg.contains("wide") && msg.contains("link 0"));
    }

    #[test]
    fn mean_ux_and_its_vjp() {
        let q = MeanUx::new([2, 2, 1]);
        let u = [1.0, 9.0, 9.0, 3.0, 9.0, 9.0, 5.0, 0.0, 0.0, 7.0, 0.0, 0.0];
        assert_eq!(q.forward(&u).unwrap(), vec![4.0]);
        let g = q.vjp(&u, &[2.0]).unwrap();
        assert_eq!(g, vec![0.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn gradcheck_flags_corrupted_vjp() {
        let good = check_vjp(&scale(2.5), &[1.3], &[0.7], &[0], Default::default()).unwrap();
        assert!(good.passes(1e-9), "{good:?}");
        let bad = CorruptedVjp::new(scale(2.5), 1.1);
        let report = check_vjp(&bad, &[1.3], &[0.7], &[0], Default::default()).unwrap();
        assert!(!report.passes(1e-3));
    }
}
