# Copyright 2025 sasopt contributors
# SPDX-License-Identifier: Apache-2.0

"""Test suite for sasopt."""
