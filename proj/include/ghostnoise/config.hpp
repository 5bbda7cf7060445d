#pragma once

#include <optional>
#include <string>

#include "ghostnoise/data.hpp"
#include "ghostnoise/experiment.hpp"
#include "ghostnoise/mlp.hpp"

namespace ghostnoise {

struct DataConfig {
    enum class Kind { blobs, idx };
    Kind kind = Kind::blobs;
    // blobs
    std::size_t n = 10000;
    std::size_t dim = 64;
    std::size_t classes = 10;
    double separation = 3.0;
    double label_noise = 0.1;
    std::uint64_t seed = 7;
    // idx
    std::string images;
    std::string labels;
    std::size_t subset = 0;  // 0 = use every record
};

struct SweepConfig {
    SweepAxis axis;
    std::vector<std::uint64_t> seeds;
};

struct ExperimentConfig {
    MlpSpec model;
    TrainConfig train;
    DataConfig data;
    std::optional<SweepConfig> sweep;
};

/// Parses the experiment JSON document. Every object is checked against its
/// allowed key set; an unknown key is rejected with an error naming it, so a
/// misspelled field can never silently fall back to a default.
ExperimentConfig parse_experiment_config(const std::string& json_text);

/// Builds the dataset described by the config (blobs are synthesized, idx
/// files are loaded and split using the train config's eval fraction).
Dataset build_dataset(const DataConfig& cfg, double eval_fraction);

/// Fills model input_dim / classes from the dataset when left unset (0).
void resolve_model(MlpSpec& spec, const Dataset& data);

}  // namespace ghostnoise
