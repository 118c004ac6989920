# Services: persistence, CSV and chart output
