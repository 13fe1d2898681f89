//! Name-keyed factories for interchangeable strategy objects.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

type Factory<T, O> = Box<dyn Fn(&O) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized, O> {
    kind: &'static str,
    factories: BTreeMap<&'static str, Factory<T, O>>,
}

impl<T: ?Sized, O> Registry<T, O> {
    pub fn new(kind: &'static str) -> Self {
        Registry { kind, factories: BTreeMap::new() }
    }

    pub fn register<F>(&mut self, name: &'static str, factory: F)
    where
        F: Fn(&O) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name, Box::new(factory));
    }

    pub fn create(&self, name: &str, options: &O) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(f) => f(options),
            None => Err(Error::Unknown { kind: self.kind, name: name.to_string() }),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }
}

impl<T: ?Sized, O> std::fmt::Debug for Registry<T, O> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("kind", &self.kind).field("names", &self.names()).finish()
    }
}
