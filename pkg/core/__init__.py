"""Core module: partitions, splitting measures, the transition kernel and PD(theta)"""
