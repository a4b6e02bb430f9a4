pub mod corpus;
pub mod eval;
pub mod g2p;
pub mod par;
pub mod phoneme;
pub mod seq2seq;
pub mod toy;
