"""Outcome-pair estimators: T-learner and shared-representation networks."""
