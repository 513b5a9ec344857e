# Optimizers
