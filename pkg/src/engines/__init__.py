# Processing Engines