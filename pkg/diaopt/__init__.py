"""diaopt

Optimal purchase of deferred income annuities over the life cycle.
"""
