//! Name-keyed registries of interchangeable strategies.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Maps a stable name to a constructor for one family of strategies.
pub struct Registry<A, T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, fn(&A) -> Result<Box<T>>>,
}

impl<A, T: ?Sized> Registry<A, T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, ctor: fn(&A) -> Result<Box<T>>) -> &mut Self {
        self.entries.insert(name, ctor);
        self
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn build(&self, name: &str, args: &A) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(ctor) => ctor(args),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape {
        fn sides(&self) -> u32;
    }
    struct Tri;
    impl Shape for Tri {
        fn sides(&self) -> u32 {
            3
        }
    }

    #[test]
    fn build_by_name_and_reject_unknown() {
        let mut reg: Registry<(), dyn Shape> = Registry::new("shape");
        reg.register("tri", |_| Ok(Box::new(Tri)));
        assert_eq!(reg.build("tri", &()).unwrap().sides(), 3);
        let err = reg.build("square", &()).err().unwrap().to_string();
        assert!(err.contains("square") && err.contains("tri"), "{err}");
    }
}
