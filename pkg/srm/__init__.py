"""Fixed SRM high-pass filter bank for the residual stream."""

from .filters import FilterBank, SrmKernel, build_filter_bank, extract_residuals, residual_channel_names

__all__ = ['SrmKernel', 'FilterBank', 'build_filter_bank', 'extract_residuals', 'residual_channel_names']
