"""HTTP API package for planar-doa"""
