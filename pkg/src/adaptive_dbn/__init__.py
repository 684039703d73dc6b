"""Adaptive structural learning of RBMs and deep belief networks."""
