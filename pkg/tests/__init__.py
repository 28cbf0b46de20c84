"""Tests for the EEG SBP validator."""
