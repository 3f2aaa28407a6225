//! Composable pipeline steps. A [`Composite`] runs its children in order and
//! is itself an [`Action`], so pipelines nest.

pub trait Action<C> {
    type Error;

    fn name(&self) -> &str;

    fn run(&self, ctx: &mut C) -> Result<(), Self::Error>;
}

pub type BoxedAction<'a, C, E> = Box<dyn Action<C, Error = E> + 'a>;

pub struct Composite<'a, C, E> {
    name: String,
    children: Vec<BoxedAction<'a, C, E>>,
}

impl<'a, C, E> Composite<'a, C, E> {
    pub fn new(name: impl Into<String>) -> Self {
        Composite {
            name: name.into(),
            children: Vec::new(),
        }
    }

    pub fn then(mut self, child: impl Action<C, Error = E> + 'a) -> Self {
        self.children.push(Box::new(child));
        self
    }

    pub fn children(&self) -> impl Iterator<Item = &str> {
        self.children.iter().map(|c| c.name())
    }
}

impl<C, E> Action<C> for Composite<'_, C, E> {
    type Error = E;

    fn name(&self) -> &str {
        &self.name
    }

    /// Stops at the first failing child.
    fn run(&self, ctx: &mut C) -> Result<(), E> {
        self.children.iter().try_for_each(|c| c.run(ctx))
    }
}

/// An action from a closure.
pub struct FnAction<F> {
    name: String,
    f: F,
}

impl<F> FnAction<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnAction { name: name.into(), f }
    }
}

impl<C, E, F: Fn(&mut C) -> Result<(), E>> Action<C> for FnAction<F> {
    type Error = E;

    fn name(&self) -> &str {
        &self.name
    }

    fn run(&self, ctx: &mut C) -> Result<(), E> {
        (self.f)(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Debug, Clone, Copy)]
    enum Op {
        Push(u8),
        Double,
        Fail(u8),
    }

    fn apply(op: Op, ctx: &mut Vec<u32>) -> Result<(), u8> {
        match op {
            Op::Push(v) => ctx.push(v as u32),
            Op::Double => ctx.iter_mut().for_each(|x| *x = x.wrapping_mul(2)),
            Op::Fail(code) if ctx.len() % 2 == 0 => return Err(code),
            Op::Fail(_) => ctx.push(0),
        }
        Ok(())
    }

    fn leaf(op: Op) -> FnAction<impl Fn(&mut Vec<u32>) -> Result<(), u8>> {
        FnAction::new(format!("{op:?}"), move |ctx: &mut Vec<u32>| apply(op, ctx))
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![any::<u8>().prop_map(Op::Push), Just(Op::Double), any::<u8>().prop_map(Op::Fail)]
    }

    #[test]
    fn composite_reports_children() {
        let c = Composite::new("outer").then(leaf(Op::Push(1))).then(Composite::new("inner").then(leaf(Op::Double)));
        assert_eq!(c.children().collect::<Vec<_>>(), ["Push(1)", "inner"]);
        let mut ctx = Vec::new();
        c.run(&mut ctx).unwrap();
        assert_eq!(ctx, [2]);
    }

    proptest! {
        /// A composite, nested at an arbitrary split, leaves the context and
        /// result exactly as running its children one by one.
        #[test]
        fn composite_is_transparent(
            ops in prop::collection::vec(op(), 0..12),
            split in 0usize..12,
            start in prop::collection::vec(any::<u32>(), 0..4),
        ) {
            let split = split.min(ops.len());
            let mut expected = start.clone();
            let expected_result = ops.iter().try_for_each(|&o| apply(o, &mut expected));

            let inner = ops[split..].iter().fold(Composite::new("inner"), |c, &o| c.then(leaf(o)));
            let outer = ops[..split].iter().fold(Composite::new("outer"), |c, &o| c.then(leaf(o))).then(inner);
            let mut actual = start;
            let result = outer.run(&mut actual);
            prop_assert_eq!(result, expected_result);
            prop_assert_eq!(actual, expected);
        }
    }
}
