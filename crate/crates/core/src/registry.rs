//! Name-keyed constructors for interchangeable strategies.

use crate::error::{Error, Result};

/// Constructors for one family of strategies, looked up by name at runtime.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, fn() -> Box<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register(mut self, name: &'static str, make: fn() -> Box<T>) -> Self {
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "{} `{name}` registered twice",
            self.kind
        );
        self.entries.push((name, make));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn get(&self, name: &str) -> Result<Box<T>> {
        let wanted = name.to_ascii_lowercase();
        self.entries
            .iter()
            .find(|(n, _)| *n == wanted)
            .map(|(_, make)| make())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn hello(&self) -> &'static str;
    }
    struct A;
    impl Greeter for A {
        fn hello(&self) -> &'static str {
            "a"
        }
    }

    #[test]
    fn lookup_by_name_and_unknown_lists_known() {
        let r: Registry<dyn Greeter> = Registry::new("greeter").register("a", || Box::new(A));
        assert_eq!(r.get("A").unwrap().hello(), "a");
        let err = r.get("zz").err().unwrap().to_string();
        assert!(err.contains("unknown greeter `zz`") && err.contains("known: a"), "{err}");
    }

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_names_rejected() {
        let _ = Registry::<dyn Greeter>::new("greeter")
            .register("a", || Box::new(A))
            .register("a", || Box::new(A));
    }
}
