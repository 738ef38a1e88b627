"""
Command-line interface for the Interface Averaging Toolkit
"""
