//! Correction loss, label alignment and integration-quality metrics.
//!
//! Scaled scores lie in `[0, 1]` with higher meaning better.

pub mod align;
pub mod connectivity;
pub mod isolated;
pub mod kbet;
pub mod lisi;
pub mod loss;
pub mod partition;
pub mod report;
pub mod silhouette;

pub use align::{align_labels, LabelAlignment};
pub use connectivity::graph_connectivity;
pub use isolated::isolated_labels_f1;
pub use kbet::{kbet_from_neighbors, KbetResult};
pub use loss::{correction_loss, correction_loss_from_data, ell_loss, misclustering_rate};
pub use partition::{ari, nmi};
pub use report::{full_report, scorecard, MetricsReport, ReportConfig};
pub use silhouette::{asw_batch, asw_label};
