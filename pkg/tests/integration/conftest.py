#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Shared fixtures for end-to-end scenario runs"""

import pytest


@pytest.fixture(scope='session')
def short_scenario():
    """The shipped 60 s scenario with continuous GNSS"""
    from rtfgo.module_utils.config import load_scenario
    return load_scenario('short')


@pytest.fixture(scope='session')
def urban_scenario():
    """The shipped two-loop scenario with roughly 40% GNSS availability"""
    from rtfgo.module_utils.config import load_scenario
    return load_scenario('urban')


@pytest.fixture(scope='session')
def urban_runs(urban_scenario):
    """Ten seeded simulations of the urban scenario"""
    from rtfgo.module_utils.simulation import simulate_scenario
    return [simulate_scenario(urban_scenario, seed=seed) for seed in range(10)]
