//! Agent protocol: envelopes, datagram endpoints and the shared content store.

pub mod channel;
pub mod envelope;
pub mod store;

pub use channel::{Address, Endpoint, Sender};
pub use envelope::{Envelope, MsgType, ENVELOPE_LEN};
pub use store::{ContentStore, StoreOptions, StoreSlice, StoreSliceMut, StoreStats};
