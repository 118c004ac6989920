# tunelab
