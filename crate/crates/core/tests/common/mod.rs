#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use ecm_core::dataset::{load_mnist, PatternSet, Split};
use ecm_core::experiment::DATA_DIR_ENV;

/// MNIST directory: the environment override, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub struct Mnist {
    pub train: PatternSet,
    pub test: PatternSet,
}

pub fn mnist() -> &'static Mnist {
    static DATA: OnceLock<Mnist> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = mnist_dir();
        let load = |split| {
            load_mnist(&dir, split).unwrap_or_else(|e| {
                panic!("{e}; fetch the IDX files into {} (see README)", dir.display())
            })
        };
        Mnist {
            train: load(Split::Train),
            test: load(Split::Test),
        }
    })
}
