//! Registry of named function payloads.
//!
//! Function tasks reference a callable by name; nothing is serialized
//! across processes. Arguments and results are plain strings so the
//! same table serves workflow files, the simulated world, and real
//! worker threads.

use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

pub type TaskFunction = dyn Fn(&[String]) -> Result<String, String> + Send + Sync;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum FunctionError {
    #[error("function {0} already registered")]
    Duplicate(String),
    #[error("unknown function {0}")]
    Unknown(String),
}

/// Name-to-callable table consulted by every launcher.
#[derive(Clone, Default)]
pub struct FunctionRegistry {
    functions: BTreeMap<String, Arc<TaskFunction>>,
}

impl FunctionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the small standard set used by tests
    /// and file-defined workflows: `echo`, `concat`, `add`, `fail`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register("echo", |args| Ok(args.join(" "))).unwrap();
        reg.register("concat", |args| Ok(args.concat())).unwrap();
        reg.register("add", |args| {
            let mut sum: i64 = 0;
            for a in args {
                sum += a
                    .parse::<i64>()
                    .map_err(|_| format!("not an integer: {a:?}"))?;
            }
            Ok(sum.to_string())
        })
        .unwrap();
        reg.register("fail", |args| {
            Err(if args.is_empty() {
                "failed".to_string()
            } else {
                args.join(" ")
            })
        })
        .unwrap();
        reg
    }

    pub fn register<F>(&mut self, name: impl Into<String>, f: F) -> Result<(), FunctionError>
    where
        F: Fn(&[String]) -> Result<String, String> + Send + Sync + 'static,
    {
        let name = name.into();
        if self.functions.contains_key(&name) {
            return Err(FunctionError::Duplicate(name));
        }
        self.functions.insert(name, Arc::new(f));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<TaskFunction>> {
        self.functions.get(name).cloned()
    }

    /// Runs a registered function. An unknown name is an error string,
    /// the same shape a failing function returns.
    pub fn call(&self, name: &str, args: &[String]) -> Result<String, String> {
        match self.get(name) {
            Some(f) => f(args),
            None => Err(format!("unknown function {name:?}")),
        }
    }
}

impl std::fmt::Debug for FunctionRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionRegistry")
            .field("functions", &self.functions.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_work() {
        let reg = FunctionRegistry::with_builtins();
        let args = vec!["2".to_string(), "40".to_string()];
        assert_eq!(reg.call("add", &args), Ok("42".into()));
        assert_eq!(reg.call("echo", &args), Ok("2 40".into()));
        assert!(reg.call("fail", &args).is_err());
        assert!(reg.call("missing", &args).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut reg = FunctionRegistry::with_builtins();
        assert_eq!(
            reg.register("echo", |_| Ok(String::new())),
            Err(FunctionError::Duplicate("echo".into()))
        );
    }
}
