# Data and series processors
