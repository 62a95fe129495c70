# SPDX-License-Identifier: BSD-3-Clause
# Copyright (c) 2024 Scipp contributors (https://github.com/scipp)

"""Tests of package integrity."""

import stormsim as pkg


def test_has_version():
    assert hasattr(pkg, '__version__')


def test_ships_presets_and_anchors():
    assert pkg.nic.shipped_presets() == ('cx3', 'cx4ib', 'cx4roce', 'cx5')
    assert pkg.nic.load_anchors('ib')
    assert pkg.nic.load_anchors('roce')


# This is for CI package tests. They need to run tests with minimal dependencies,
# that is, without installing pytest. This code does not affect pytest.
if __name__ == '__main__':
    test_has_version()
    test_ships_presets_and_anchors()
