#pragma once

#include <string>

#include "dgcn/model.hpp"
#include "dgcn/train.hpp"

namespace dgcn {

// Full run description: model + training + dataset, parsed from a
// sectioned key = value file with CLI overrides. The resolved form
// prints every key so a run directory carries no hidden defaults.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;

    std::string data_kind = "synthetic";  // synthetic | csv_dir | nodelink
    std::size_t data_samples = 64;
    std::size_t data_points = 256;
    std::size_t data_min_parts = 2;
    std::size_t data_max_parts = 4;
    double data_noise = 0.01;
    double data_val_fraction = 0.0;  // 0: evaluate on the training set
    std::string data_path;
    std::uint64_t data_seed = 0;  // 0: follow train.seed
    bool data_block = false;
    double data_block_size = 1.0;
    std::size_t data_block_points = 4096;

    void apply_file(const std::string& path);
    // key in dotted section form, e.g. "model.depth".
    void apply_set(const std::string& key, const std::string& value);
    void finalize();  // resolve derived defaults, validate
    std::string resolved_text() const;

    std::uint64_t effective_data_seed() const { return data_seed ? data_seed : train.seed; }
};

}  // namespace dgcn
