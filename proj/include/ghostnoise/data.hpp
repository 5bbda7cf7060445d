#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ghostnoise/matrix.hpp"
#include "ghostnoise/rng.hpp"

namespace ghostnoise {

struct Dataset {
    std::size_t classes = 0;
    Matrix train_x;
    std::vector<int> train_y;
    Matrix val_x;
    std::vector<int> val_y;
    Matrix test_x;
    std::vector<int> test_y;

    std::size_t dim() const { return train_x.cols; }
};

/// Synthetic classification data: class centers drawn uniformly on a sphere
/// of radius `class_separation`, samples i.i.d. unit-variance Gaussian around
/// their center, and a `label_noise` fraction of labels resampled uniformly.
/// Split 80/10/10 into train/val/test, deterministic in the rng state.
Dataset make_blobs(std::size_t n, std::size_t dim, std::size_t classes,
                   double class_separation, double label_noise,
                   RngStream rng);

struct IdxData {
    Matrix x;  // n x (rows*cols), pixels scaled to [0, 1]
    std::vector<int> y;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

/// Parses the big-endian IDX image/label pair (magics 0x00000803 and
/// 0x00000801, u8 payloads). Pixels are scaled to [0, 1] and images flattened
/// to rows*cols features. Bad magic numbers, truncated files and image/label
/// count mismatches are rejected with distinct errors.
IdxData load_idx(const std::string& images_path,
                 const std::string& labels_path);

/// Expected on-disk size of an IDX image file: 16-byte header + n*rows*cols.
std::uint64_t idx_image_bytes(std::uint64_t n, std::uint64_t rows,
                              std::uint64_t cols);
/// Expected on-disk size of an IDX label file: 8-byte header + n.
std::uint64_t idx_label_bytes(std::uint64_t n);

/// Carves a dataset out of flat (x, y) data: `eval_fraction` each for the
/// validation and test splits, the rest for training. Shuffled
/// deterministically by the rng state.
Dataset split_dataset(const Matrix& x, const std::vector<int>& y,
                      std::size_t classes, double eval_fraction,
                      RngStream rng);

}  // namespace ghostnoise
