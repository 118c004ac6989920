# Routes: command-line surface
