"""Independent reference implementations used to derive and check expected values."""
