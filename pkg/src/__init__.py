# Intersection Safety Twin - Main Package
