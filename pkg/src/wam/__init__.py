"""Wildfire Assessment Model: masked-patch pretraining, transfer regression and assessment maps."""
