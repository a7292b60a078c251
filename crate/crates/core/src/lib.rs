pub mod apps;
pub mod bridge;
pub mod commitment;
pub mod executor;
pub mod gsc;
pub mod l1vsm;
pub mod model;
pub mod oracle;
pub mod rollup;
pub mod scenario;
pub mod trace;
