pub mod catalog;
pub mod derm;
pub mod extract;
pub mod fuzzy;
pub mod llm;
pub mod news;
pub mod pubmed;
pub mod registry;
pub mod session;
