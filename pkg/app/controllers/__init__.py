# Controllers: training, sampling, inversion and sweep orchestration
