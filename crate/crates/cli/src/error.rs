// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lexalign_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),

    #[error("missing input {0}: {1}")]
    MissingInput(&'static str, PathBuf),

    #[error("no {0} given; set `{0}` in the config or with --set {0}=PATH")]
    Unset(&'static str),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
