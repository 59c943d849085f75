pub mod calibrate;
pub mod greeks;
pub mod oracle_check;
pub mod price;
pub mod sweep;
