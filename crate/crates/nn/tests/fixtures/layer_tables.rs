// Output shapes of the reference autoencoders per layer-table row
// (row 0 is the input). Shared with the acceptance runner.

/// (row, layer kind, output shape without batch axis)
const AE_2D_ROWS: &[(usize, &str, &[usize])] = &[
    (1, "conv", &[120, 40, 128]),
    (2, "conv", &[120, 40, 128]),
    (3, "maxpool", &[60, 20, 128]),
    (4, "batchnorm", &[60, 20, 128]),
    (5, "conv", &[60, 20, 64]),
    (6, "conv", &[60, 20, 64]),
    (7, "maxpool", &[30, 10, 64]),
    (8, "batchnorm", &[30, 10, 64]),
    (9, "conv", &[30, 10, 32]),
    (10, "conv", &[30, 10, 32]),
    (11, "maxpool", &[15, 5, 32]),
    (12, "batchnorm", &[15, 5, 32]),
    (13, "conv", &[15, 5, 32]),
    (14, "conv", &[15, 5, 32]),
    (15, "flatten", &[2400]),
    (16, "dense", &[40]),
    (17, "dense", &[2400]),
    (18, "reshape", &[15, 5, 32]),
    (19, "batchnorm", &[15, 5, 32]),
    (20, "conv", &[15, 5, 32]),
    (21, "conv", &[15, 5, 32]),
    (22, "conv_transpose", &[30, 10, 32]),
    (23, "batchnorm", &[30, 10, 32]),
    (24, "conv", &[30, 10, 32]),
    (25, "conv", &[30, 10, 32]),
    (26, "conv_transpose", &[60, 20, 64]),
    (27, "batchnorm", &[60, 20, 64]),
    (28, "conv", &[60, 20, 64]),
    (29, "conv", &[60, 20, 64]),
    (30, "conv_transpose", &[120, 40, 128]),
    (31, "batchnorm", &[120, 40, 128]),
    (32, "conv", &[120, 40, 128]),
    (33, "conv", &[120, 40, 128]),
    (34, "conv", &[120, 40, 1]),
];

const AE_3D_ROWS: &[(usize, &str, &[usize])] = &[
    (1, "conv", &[60, 20, 4, 128]),
    (2, "conv", &[60, 20, 4, 128]),
    (3, "maxpool", &[30, 10, 2, 128]),
    (4, "batchnorm", &[30, 10, 2, 128]),
    (5, "conv", &[30, 10, 2, 64]),
    (6, "conv", &[30, 10, 2, 64]),
    (7, "maxpool", &[15, 5, 1, 64]),
    (8, "batchnorm", &[15, 5, 1, 64]),
    (9, "conv", &[15, 5, 1, 32]),
    (10, "conv", &[15, 5, 1, 32]),
    (11, "maxpool", &[8, 3, 1, 32]),
    (12, "batchnorm", &[8, 3, 1, 32]),
    (13, "conv", &[8, 3, 1, 32]),
    (14, "conv", &[8, 3, 1, 32]),
    (15, "flatten", &[768]),
    (16, "dense", &[40]),
    (17, "dense", &[768]),
    (18, "reshape", &[8, 3, 1, 32]),
    (19, "batchnorm", &[8, 3, 1, 32]),
    (20, "conv", &[8, 3, 1, 32]),
    (21, "conv", &[8, 3, 1, 32]),
    (22, "conv_transpose", &[16, 6, 2, 32]),
    (23, "batchnorm", &[16, 6, 2, 32]),
    (24, "conv", &[16, 6, 2, 32]),
    (25, "conv", &[16, 6, 2, 32]),
    (26, "conv_transpose", &[32, 12, 4, 64]),
    (27, "batchnorm", &[32, 12, 4, 64]),
    (28, "conv", &[32, 12, 4, 64]),
    (29, "conv", &[32, 12, 4, 64]),
    (30, "conv_transpose", &[64, 24, 8, 128]),
    (31, "batchnorm", &[64, 24, 8, 128]),
    (32, "conv", &[64, 24, 8, 128]),
    (33, "conv", &[64, 24, 8, 128]),
    (34, "conv", &[64, 24, 8, 1]),
    (35, "crop", &[60, 20, 4, 1]),
];
