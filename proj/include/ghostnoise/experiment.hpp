#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ghostnoise/data.hpp"
#include "ghostnoise/mlp.hpp"
#include "ghostnoise/noise_analytics.hpp"

namespace ghostnoise {

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t epochs = 20;
    std::size_t warmup_epochs = 5;
    std::size_t batch_size = 256;
    std::uint64_t seed = 1;
    double eval_fraction = 0.1;
    std::vector<int> trace_epochs;  // epochs whose ghost-noise draws to record

    void validate(const MlpSpec& spec) const;
};

struct EpochRow {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct Metrics {
    std::vector<EpochRow> epochs;  // row 0 is the pre-training evaluation
    double test_accuracy = 0.0;
    bool diverged = false;
    std::vector<NoiseTrace> traces;
};

/// Trains the network with shuffled mini-batches (fresh permutation per
/// epoch), SGD with momentum and a cosine schedule with linear warmup.
/// Trailing incomplete mini-batches are dropped so batch-statistic layers
/// always see full batches. Running statistics update after every train step.
/// A non-finite loss flags the run as diverged and halts it; the metrics
/// collected so far are returned rather than thrown away.
Metrics run_experiment(const MlpSpec& spec, const TrainConfig& cfg,
                       const Dataset& data);

enum class SweepParam {
    gni_ghost_size,
    agni_ghost_size,
    dropout_p,
    eagn_sigma,
    norm_ghost_size
};

struct SweepAxis {
    SweepParam param = SweepParam::gni_ghost_size;
    std::vector<double> values;
};

struct RunRecord {
    std::string run_id;
    std::string axis_value;
    std::uint64_t seed = 0;
    Metrics metrics;
};

struct SweepSummaryRow {
    std::string axis_value;
    double mean_val_acc = 0.0;
    double std_val_acc = 0.0;
    double mean_test_acc = 0.0;
    double std_test_acc = 0.0;
};

struct SweepResult {
    std::vector<RunRecord> runs;
    std::vector<SweepSummaryRow> summary;
};

/// Returns a copy of the spec with the axis parameter applied to every layer
/// carrying the matching injector (or ghost-batch normalizer). Throws if no
/// layer matches, so a typo cannot silently sweep nothing.
MlpSpec apply_axis(const MlpSpec& base, SweepParam param, double value);

/// Cartesian product of axis values and seeds; each cell is an independent
/// run_experiment. Runs may execute in parallel; results are keyed by
/// (value, seed) so the output is identical for any worker count.
SweepResult sweep(const MlpSpec& base, const TrainConfig& base_cfg,
                  const Dataset& data, const SweepAxis& axis,
                  std::span<const std::uint64_t> seeds, int parallelism = 1);

/// Final validation accuracy of a run (the last recorded epoch row).
double final_val_acc(const Metrics& m);

std::string format_double(double v);  // shortest deterministic form, %.9g
std::string format_double17(double v);  // value-preserving form, %.17g

void write_runs_csv(std::ostream& os, std::span<const RunRecord> runs);
void write_summary_csv(std::ostream& os,
                       std::span<const SweepSummaryRow> rows);
std::string runs_to_json(std::span<const RunRecord> runs);
std::string summary_to_json(std::span<const SweepSummaryRow> rows);

}  // namespace ghostnoise
