use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("register width {0} outside [1, 64]")]
    WidthOutOfRange(u32),
    #[error("register #{0} is not allocated")]
    UnknownRegister(u32),
    #[error("register `{0}` is nonzero in at least one branch")]
    NonZeroAncilla(String),
    #[error("pop on an empty garbage stack")]
    StackEmpty,
    #[error("garbage stack top has width {stack}, register has width {register}")]
    StackWidthMismatch { stack: u32, register: u32 },
    #[error("register `{0}` must read 0 in every branch before a pop")]
    PopIntoNonZero(String),
    #[error("register `{name}` has type {found}, operation expects {expected}")]
    TypeMismatch {
        name: String,
        found: String,
        expected: &'static str,
    },
    #[error("register widths do not match: {0} vs {1}")]
    WidthMismatch(u32, u32),
    #[error("value {value} does not fit in {width}-bit register `{name}`")]
    ValueOverflow { name: String, width: u32, value: u64 },
    #[error("output register `{0}` also appears as an input")]
    AliasedOutput(String),
    #[error("in-place map is not injective on register `{0}`")]
    NonInjective(String),
    #[error("flag register `{0}` holds a value other than 0 or 1")]
    FlagOutOfRange(String),
    #[error("transform over {0} qubits exceeds the 20-qubit group limit")]
    TransformTooWide(u32),
    #[error("register `{name}` holds {value}, not below 2^{bits}")]
    ValueExceedsTransform { name: String, value: u64, bits: u32 },
    #[error("states do not share a register layout")]
    LayoutMismatch,
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("QRAM window at offset {offset} is not strictly increasing")]
    UnsortedWindow { offset: u64 },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix is singular (min |eigenvalue| {0:e})")]
    Singular(f64),
}
