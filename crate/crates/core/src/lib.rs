pub mod aba;
pub mod anon;
pub mod ceremony;
pub mod coin;
pub mod dleq;
pub mod group;
pub mod groupkey;
pub mod invariant;
pub mod mutex;
pub mod notice;
pub mod oracle;
pub mod party;
pub mod scenario;
pub mod sharing;
pub mod sim;
pub mod symmetric;
pub mod trace;
pub mod tsig;
pub mod wire;
pub mod workflow;
