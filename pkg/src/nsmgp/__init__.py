"""Stationary and nonstationary multivariate Gaussian processes for irregular time series."""
