#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "galu/tensor.hpp"

namespace galu {

struct Dataset {
    Tensor inputs;             // [n, d_in]
    std::vector<int> labels;   // in [0, classes)
    int classes = 2;
    std::string split = "train";

    int size() const { return inputs.ndim() == 2 ? inputs.dim(0) : 0; }
    int input_dim() const { return inputs.ndim() == 2 ? inputs.dim(1) : 0; }
    Tensor row(int i) const;
    std::uint64_t content_hash() const;
};

enum class SynthKind { GAUSSIAN_BLOBS, TWO_SPIRALS };

/// Deterministic synthetic classification data. Blobs place one Gaussian
/// cloud per class (antipodal centers for two classes); spirals interleave
/// two arms in the first two coordinates.
Dataset gen_synthetic(SynthKind kind, int n, int d_in, int classes, double noise,
                      std::uint64_t seed);

/// Reads the big-endian IDX image/label pair; pixels scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, int n_train);

}  // namespace galu
