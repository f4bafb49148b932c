pub mod dsp;
pub mod gateway;
pub mod ingest;
pub mod util;
pub mod record;
pub mod store;
pub mod sync;
