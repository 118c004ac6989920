# Utils: tensor core, codecs, errors and metrics
