"""Desk-scale coarse geometry on finite metric windows."""

from .space import MetricWindow, WindowError, build, load_distance_csv, \
    load_edge_list, load_recipe_json
from .covers import Cover, SetFamily, CoverError, LinearityWitness, mesh, \
    multiplicity, is_r_disjoint, fatten, lebesgue_function, lebesgue_number, \
    linearity_witness

__version__ = "0.1.0"
