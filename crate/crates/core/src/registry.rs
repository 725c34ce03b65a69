//! Name-keyed registry of strategy trait objects.

use thiserror::Error;

/// Anything that can be looked up by a stable name.
pub trait Named {
    fn name(&self) -> &'static str;

    /// One-line human description shown in `--help` style listings.
    fn describe(&self) -> &'static str {
        ""
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unknown {kind} `{name}` (known: {known})")]
    Unknown {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("{kind} `{name}` registered twice")]
    Duplicate { kind: &'static str, name: String },
}

/// Ordered collection of strategies of one family.
pub struct Registry<T: ?Sized + Named> {
    kind: &'static str,
    entries: Vec<Box<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, entry: Box<T>) -> Result<(), RegistryError> {
        if self.get(entry.name()).is_some() {
            return Err(RegistryError::Duplicate {
                kind: self.kind,
                name: entry.name().to_string(),
            });
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Builder form of [`Registry::register`]; panics on duplicates, which
    /// only happens when a built-in table is miswired.
    pub fn with(mut self, entry: Box<T>) -> Self {
        self.register(entry).expect("duplicate built-in strategy");
        self
    }

    pub fn get(&self, name: &str) -> Option<&T> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .map(|e| e.as_ref())
    }

    pub fn resolve(&self, name: &str) -> Result<&T, RegistryError> {
        self.get(name).ok_or_else(|| RegistryError::Unknown {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().collect::<Vec<_>>().join(", "),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|e| e.name())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter().map(|e| e.as_ref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Named {
        fn greet(&self) -> String;
    }

    struct English;
    impl Named for English {
        fn name(&self) -> &'static str {
            "en"
        }
    }
    impl Greeter for English {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_and_unknown() {
        let reg = Registry::<dyn Greeter>::new("greeter").with(Box::new(English));
        assert_eq!(reg.resolve("en").unwrap().greet(), "hello");
        let err = reg.resolve("fr").err().unwrap();
        assert!(err.to_string().contains("known: en"));
    }

    #[test]
    fn duplicate_rejected() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register(Box::new(English)).unwrap();
        assert!(matches!(
            reg.register(Box::new(English)),
            Err(RegistryError::Duplicate { .. })
        ));
    }
}
