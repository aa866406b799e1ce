//! Schemas, records, CSV ingestion and toy populations.

mod csv_io;
mod dataset;
mod schema;
mod toy;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv, RangePolicy};
pub use dataset::{derive_metadata, Cell, Dataset, PartialRecord, Record};
pub use schema::{bin_in_range, bin_index, AttributeKind, AttributeSpec, SchemaMetadata, DEFAULT_BINS};
pub use toy::{sample_toy_population, Coupling, MixtureComponent, ToyAttribute, ToyPopulationConfig};
