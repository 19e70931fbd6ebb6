//! Files: the snapshot binary format, the CIFAR-10 reader, result CSVs and
//! manifests.

pub mod cifar;
pub mod results;
pub mod snapshot;

pub use cifar::{load_cifar10, load_cifar10_split, ChannelStats};
pub use results::{verify_manifest, ManifestEntry, ResultDir, ResultManifest};
pub use snapshot::{load_snapshot, load_snapshot_for, read_snapshot, save_snapshot, write_snapshot, SNAPSHOT_MAGIC};
