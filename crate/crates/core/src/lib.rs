pub mod acl;
pub mod amm;
pub mod cid;
pub mod events;
pub mod host;
pub mod interaction;
pub mod link;
pub mod node;
pub mod ontology;
pub mod push_transfer;
pub mod registry;
pub mod transport;
