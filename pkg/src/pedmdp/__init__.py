"""Pedestrian decision estimation and clever-agent planning on floor-field lattices."""

__version__ = "0.1.0"
