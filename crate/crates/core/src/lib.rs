//! Spreadsheet-defined continuous queries over timestamped tuple streams.

pub mod engine;
pub mod eval;
pub mod formula;
pub mod io;
pub mod model;
pub mod partition;
pub mod value;
pub mod window;

pub use engine::{build, ApplyError, CellChange, ChangeSet, EngineInstance, Program};
pub use formula::{parse_formula, CellAddr, Expr, FormulaError, RangeAddr};
pub use model::{load_model, validate, Diagnostic, SheetModel};
pub use partition::{Key, Operator, Outcome, RouteError};
pub use value::{ErrorCode, Value, WindowId};
pub use window::WindowStore;
