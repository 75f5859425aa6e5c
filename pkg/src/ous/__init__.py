"""Scene-guided dynamic facial expression recognition on a numpy autodiff core."""
