use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("newick syntax error at byte {pos}: {msg}")]
    NewickSyntax { pos: usize, msg: String },

    #[error("node with {children} children; only strictly bifurcating trees are supported")]
    Multifurcation { children: usize },

    #[error("tree has {0} tips; at least 2 are required")]
    TooFewTips(usize),

    #[error("duplicate tip name `{0}`")]
    DuplicateTip(String),

    #[error("branch index {index} out of range (tree has {count} branches)")]
    BranchOutOfRange { index: usize, count: usize },

    #[error("branch set is not a subtree (not closed under descendants)")]
    NotDownwardClosed,

    #[error("invalid rate model: {0}")]
    InvalidModel(String),

    #[error("invalid summary label: {0}")]
    InvalidLabel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative entry {value:e} in {what}")]
    NegativeEntry { what: &'static str, value: f64 },

    #[error("data have zero probability under the model")]
    ImpossibleData,

    #[error("negative variance {0:e} (beyond rounding tolerance)")]
    NegativeVariance(f64),

    #[error("site {site}: {source}")]
    Site {
        site: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("posterior sample file, line {line}: {msg}")]
    PosteriorFile { line: usize, msg: String },

    #[error("model config, line {line}: {msg}")]
    ModelFile { line: usize, msg: String },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("degenerate null distribution: {0}")]
    DegenerateNull(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Error {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn at_site(self, site: usize) -> Error {
        Error::Site { site, source: Box::new(self) }
    }
}
