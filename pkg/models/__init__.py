# Distributions, schemas and error types
