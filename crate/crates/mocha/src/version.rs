/// `git describe`-style build identifier stamped on every artifact.
pub const VERSION: &str = env!("MOCHA_VERSION");
