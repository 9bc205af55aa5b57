pub mod iat;
pub mod schema;

pub use iat::{
    assess_iats, deduplicate, estimate_mode, label_outliers, m1_regularity, m2_outliers,
    m3_duplicates, modified_z, IatAssessment, ModeError, OutlierLabel, RaeValue, RegularityTerms,
};
pub use schema::{m4_mandatory, m5_unknown, m6_format};
