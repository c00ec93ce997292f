pub mod oracle;
pub mod pltn;
