"""
Test suite for the Interface Averaging Toolkit
"""
