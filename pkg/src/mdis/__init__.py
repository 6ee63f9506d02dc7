"""Moderate-deviations importance sampling for slow-fast diffusions."""
