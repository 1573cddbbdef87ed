"""Experiment harness: replicated chains, Monte Carlo identity checks and reports"""
