//! Fractal-dimension statistics and the attention gates they drive.

mod attention;
mod fd;

pub use attention::{
    apply, channel_fd, site_fd_map, FrequencyAttention, TemporalAttention, DEFAULT_REDUCTION, FREQUENCY_KERNEL,
};
pub use fd::{box_counts, estimate_fd, ls_slope, FdMode, FdSpec};
