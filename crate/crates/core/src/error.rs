use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("seed must be 32 bytes, got {0}")]
    SeedLength(usize),
    #[error("encoding error: {0}")]
    Encoding(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("encoding error: {0}")]
pub struct EncodingError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IssuerError {
    #[error("issuance cap of {cap} notes reached")]
    IssuanceCapExceeded { cap: u64 },
    #[error("amount must be positive")]
    InvalidAmount,
    #[error("note {0} was not minted by this issuer")]
    UnknownNote(u64),
    #[error("note {0} already has a genesis certificate")]
    DuplicateGenesis(u64),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WalletError {
    #[error("note {0} is not held by this wallet")]
    UnknownHolding(u64),
    #[error("local database does not list this wallet as owner of note {0}")]
    NotOwnerLocally(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("no quiescence by tick {max_ticks}: {pending} events pending")]
    QuiescenceTimeout { max_ticks: u64, pending: usize },
    #[error("adversary script error: {0}")]
    Script(String),
    #[error(transparent)]
    Issuer(#[from] IssuerError),
    #[error(transparent)]
    Wallet(#[from] WalletError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("bad policy override: {0}")]
    BadPolicy(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
