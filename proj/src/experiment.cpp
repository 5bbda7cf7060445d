#include "ghostnoise/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace ghostnoise {

namespace {

void shuffle_indices(std::vector<std::size_t>& order, RngStream& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_below(i);
        std::swap(order[i - 1], order[j]);
    }
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& order,
                   std::size_t begin, std::size_t count) {
    Matrix out(count, x.cols);
    for (std::size_t i = 0; i < count; ++i) {
        const double* src = x.row(order[begin + i]);
        std::copy(src, src + x.cols, out.row(i));
    }
    return out;
}

struct EvalResult {
    double loss = 0.0;
    double acc = 0.0;
};

// Evaluates in chunks; falls back to batch statistics when the model's
// running statistics have not been populated yet (pre-training evaluation).
EvalResult evaluate(const MlpModel& model, const Matrix& x,
                    const std::vector<int>& y, std::size_t chunk) {
    bool batch_stats = false;
    for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
        const NormKind k = model.spec.layers[l].norm;
        const bool batchy = k == NormKind::batch_norm ||
                            k == NormKind::ghost_batch_norm ||
                            k == NormKind::exclusive_batch_norm;
        if (batchy && !model.running[l].initialized()) {
            batch_stats = true;
        }
    }
    RngStream unused(0);
    EvalResult res;
    std::size_t done = 0;
    while (done < x.rows) {
        const std::size_t count = std::min(chunk, x.rows - done);
        Matrix xb(count, x.cols);
        std::copy(x.row(done), x.row(done) + count * x.cols, xb.data.begin());
        std::vector<int> yb(y.begin() + static_cast<long>(done),
                            y.begin() + static_cast<long>(done + count));
        const ForwardResult fr =
            mlp_forward(model, xb, Mode::eval, unused, nullptr, batch_stats);
        const double w = static_cast<double>(count);
        res.loss += softmax_cross_entropy(fr.logits, yb) * w;
        res.acc += accuracy(fr.logits, yb) * w;
        done += count;
    }
    res.loss /= static_cast<double>(x.rows);
    res.acc /= static_cast<double>(x.rows);
    return res;
}

}  // namespace

void TrainConfig::validate(const MlpSpec& spec) const {
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
    }
    if (weight_decay < 0.0) {
        throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    }
    if (spec.has_batch_stat_layer() && batch_size < 2) {
        throw std::invalid_argument(
            "TrainConfig: batch_size must be >= 2 with batch-statistic "
            "layers");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    }
    for (const LayerSpec& ls : spec.layers) {
        if ((ls.norm == NormKind::ghost_batch_norm ||
             ls.norm == NormKind::exclusive_batch_norm) &&
            batch_size % ls.ghost_size != 0) {
            throw std::invalid_argument(
                "TrainConfig: batch_size must be divisible by the ghost size "
                "of every ghost/exclusive batch-norm layer");
        }
    }
    if (!(eval_fraction > 0.0 && eval_fraction < 0.5)) {
        throw std::invalid_argument(
            "TrainConfig: eval_fraction must be in (0, 0.5)");
    }
}

Metrics run_experiment(const MlpSpec& spec, const TrainConfig& cfg,
                       const Dataset& data) {
    spec.validate();
    cfg.validate(spec);

    RngStream root(cfg.seed);
    RngStream init_rng = root.fork(1);
    RngStream shuffle_rng = root.fork(2);
    RngStream noise_rng = root.fork(3);

    MlpModel model = make_mlp(spec, init_rng);
    MlpParams velocity = zeros_like(model.params);

    const std::size_t steps_per_epoch = data.train_x.rows / cfg.batch_size;
    if (cfg.epochs > 0 && steps_per_epoch == 0) {
        throw std::invalid_argument(
            "run_experiment: batch size exceeds the training set");
    }
    const std::size_t total_steps = cfg.epochs * steps_per_epoch;
    std::size_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    if (total_steps > 0 && warmup_steps >= total_steps) {
        warmup_steps = total_steps - 1;
    }

    Metrics metrics;
    {
        const EvalResult train_eval =
            evaluate(model, data.train_x, data.train_y, cfg.batch_size);
        const EvalResult val_eval =
            evaluate(model, data.val_x, data.val_y, cfg.batch_size);
        EpochRow row;
        row.epoch = 0;
        row.lr = total_steps > 0
                     ? cosine_lr(0, total_steps, warmup_steps,
                                 cfg.learning_rate)
                     : 0.0;
        row.train_loss = train_eval.loss;
        row.train_acc = train_eval.acc;
        row.val_acc = val_eval.acc;
        metrics.epochs.push_back(row);
    }

    std::vector<std::size_t> order(data.train_x.rows);
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }

    std::size_t global_step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !metrics.diverged;
         ++epoch) {
        shuffle_indices(order, shuffle_rng);

        const bool tracing =
            std::find(cfg.trace_epochs.begin(), cfg.trace_epochs.end(),
                      static_cast<int>(epoch)) != cfg.trace_epochs.end();
        std::vector<NoiseTrace> epoch_traces;
        std::vector<std::size_t> traced_layers;
        if (tracing) {
            for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
                if (std::holds_alternative<GniInjector>(
                        model.spec.layers[l].injector)) {
                    epoch_traces.emplace_back(
                        "layer" + std::to_string(l + 1),
                        static_cast<int>(epoch),
                        cfg.seed + epoch * 1000003 + l);
                    traced_layers.push_back(l);
                }
            }
        }

        double loss_sum = 0.0;
        double acc_sum = 0.0;
        double last_lr = 0.0;
        std::size_t steps_done = 0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const Matrix xb =
                gather_rows(data.train_x, order, s * cfg.batch_size,
                            cfg.batch_size);
            std::vector<int> yb(cfg.batch_size);
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                yb[i] = data.train_y[order[s * cfg.batch_size + i]];
            }

            last_lr = cosine_lr(global_step, total_steps, warmup_steps,
                                cfg.learning_rate);
            const ForwardResult fr =
                mlp_forward(model, xb, Mode::train, noise_rng);
            const BackwardResult bw = backward(model, fr.cache, yb);

            loss_sum += bw.loss;
            ++steps_done;
            if (!std::isfinite(bw.loss)) {
                metrics.diverged = true;
                break;
            }
            acc_sum += accuracy(fr.logits, yb);

            sgd_step(model.params, bw.grads, velocity, last_lr, cfg.momentum,
                     cfg.weight_decay);
            ++global_step;

            for (std::size_t l = 0; l < model.spec.layers.size(); ++l) {
                if (fr.cache.layers[l].has_batch_stats) {
                    model.running[l] = update_running(
                        std::move(model.running[l]),
                        fr.cache.layers[l].batch_stats, spec.ema_decay);
                }
            }

            for (std::size_t t = 0; t < traced_layers.size(); ++t) {
                const LayerDraw& draw =
                    fr.cache.layers[traced_layers[t]].draw;
                if (const auto* ad = std::get_if<AffineDraw>(&draw)) {
                    epoch_traces[t].add(ad->shift, ad->scale);
                }
            }
        }

        const EvalResult val_eval =
            evaluate(model, data.val_x, data.val_y, cfg.batch_size);
        EpochRow row;
        row.epoch = static_cast<int>(epoch);
        row.lr = last_lr;
        row.train_loss =
            steps_done > 0 ? loss_sum / static_cast<double>(steps_done) : 0.0;
        row.train_acc =
            steps_done > 0 ? acc_sum / static_cast<double>(steps_done) : 0.0;
        row.val_acc = val_eval.acc;
        metrics.epochs.push_back(row);

        for (NoiseTrace& t : epoch_traces) {
            metrics.traces.push_back(std::move(t));
        }
    }

    metrics.test_accuracy =
        evaluate(model, data.test_x, data.test_y, cfg.batch_size).acc;
    return metrics;
}

MlpSpec apply_axis(const MlpSpec& base, SweepParam param, double value) {
    MlpSpec spec = base;
    bool matched = false;
    for (LayerSpec& ls : spec.layers) {
        switch (param) {
            case SweepParam::gni_ghost_size:
                if (auto* inj = std::get_if<GniInjector>(&ls.injector)) {
                    inj->cfg.ghost_size = static_cast<std::size_t>(value);
                    matched = true;
                }
                break;
            case SweepParam::agni_ghost_size:
                if (auto* inj = std::get_if<AgniInjector>(&ls.injector)) {
                    inj->ghost_size = static_cast<std::size_t>(value);
                    matched = true;
                }
                break;
            case SweepParam::dropout_p:
                if (auto* g =
                        std::get_if<GaussianDropoutInjector>(&ls.injector)) {
                    g->p = value;
                    matched = true;
                }
                if (auto* b =
                        std::get_if<BernoulliDropoutInjector>(&ls.injector)) {
                    b->p = value;
                    matched = true;
                }
                break;
            case SweepParam::eagn_sigma:
                if (auto* inj = std::get_if<EagnInjector>(&ls.injector)) {
                    inj->sigma = value;
                    matched = true;
                }
                break;
            case SweepParam::norm_ghost_size:
                if (ls.norm == NormKind::ghost_batch_norm ||
                    ls.norm == NormKind::exclusive_batch_norm) {
                    ls.ghost_size = static_cast<std::size_t>(value);
                    matched = true;
                }
                break;
        }
    }
    if (!matched) {
        throw std::invalid_argument(
            "apply_axis: the axis parameter matches no layer of the model");
    }
    return spec;
}

double final_val_acc(const Metrics& m) {
    return m.epochs.empty() ? 0.0 : m.epochs.back().val_acc;
}

SweepResult sweep(const MlpSpec& base, const TrainConfig& base_cfg,
                  const Dataset& data, const SweepAxis& axis,
                  std::span<const std::uint64_t> seeds, int parallelism) {
    if (axis.values.empty() || seeds.empty()) {
        throw std::invalid_argument("sweep: axis values and seeds required");
    }

    struct Cell {
        std::size_t value_idx;
        std::size_t seed_idx;
    };
    std::vector<Cell> cells;
    for (std::size_t v = 0; v < axis.values.size(); ++v) {
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            cells.push_back({v, s});
        }
    }

    SweepResult result;
    result.runs.resize(cells.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) {
                return;
            }
            const Cell cell = cells[i];
            const MlpSpec spec =
                apply_axis(base, axis.param, axis.values[cell.value_idx]);
            TrainConfig cfg = base_cfg;
            cfg.seed = seeds[cell.seed_idx];
            RunRecord rec;
            rec.run_id = "r" + std::to_string(i);
            rec.axis_value = format_double(axis.values[cell.value_idx]);
            rec.seed = cfg.seed;
            rec.metrics = run_experiment(spec, cfg, data);
            result.runs[i] = std::move(rec);
        }
    };

    const int workers = std::max(1, parallelism);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) {
            pool.emplace_back(worker);
        }
        for (std::thread& t : pool) {
            t.join();
        }
    }

    // Population mean/std over seeds, two-pass so identical runs give an
    // exact zero spread.
    auto mean_std = [](const std::vector<double>& xs) {
        double m = 0.0;
        for (double x : xs) {
            m += x;
        }
        m /= static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) {
            ss += (x - m) * (x - m);
        }
        return std::pair<double, double>(
            m, std::sqrt(ss / static_cast<double>(xs.size())));
    };
    for (std::size_t v = 0; v < axis.values.size(); ++v) {
        std::vector<double> val_accs, test_accs;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const Metrics& m = result.runs[v * seeds.size() + s].metrics;
            val_accs.push_back(final_val_acc(m));
            test_accs.push_back(m.test_accuracy);
        }
        SweepSummaryRow row;
        row.axis_value = format_double(axis.values[v]);
        std::tie(row.mean_val_acc, row.std_val_acc) = mean_std(val_accs);
        std::tie(row.mean_test_acc, row.std_test_acc) = mean_std(test_accs);
        result.summary.push_back(std::move(row));
    }
    return result;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string format_double17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_runs_csv(std::ostream& os, std::span<const RunRecord> runs) {
    os << "run_id,axis_value,seed,epoch,lr,train_loss,train_acc,val_acc,"
          "diverged\n";
    for (const RunRecord& r : runs) {
        for (const EpochRow& e : r.metrics.epochs) {
            os << r.run_id << ',' << r.axis_value << ',' << r.seed << ','
               << e.epoch << ',' << format_double(e.lr) << ','
               << format_double(e.train_loss) << ','
               << format_double(e.train_acc) << ','
               << format_double(e.val_acc) << ','
               << (r.metrics.diverged ? 1 : 0) << '\n';
        }
    }
}

void write_summary_csv(std::ostream& os,
                       std::span<const SweepSummaryRow> rows) {
    os << "axis_value,mean_val_acc,std_val_acc,mean_test_acc,std_test_acc\n";
    for (const SweepSummaryRow& r : rows) {
        os << r.axis_value << ',' << format_double(r.mean_val_acc) << ','
           << format_double(r.std_val_acc) << ','
           << format_double(r.mean_test_acc) << ','
           << format_double(r.std_test_acc) << '\n';
    }
}

std::string runs_to_json(std::span<const RunRecord> runs) {
    nlohmann::json out = nlohmann::json::array();
    for (const RunRecord& r : runs) {
        nlohmann::json jr;
        jr["run_id"] = r.run_id;
        jr["axis_value"] = r.axis_value;
        jr["seed"] = r.seed;
        jr["diverged"] = r.metrics.diverged;
        jr["test_accuracy"] = r.metrics.test_accuracy;
        nlohmann::json epochs = nlohmann::json::array();
        for (const EpochRow& e : r.metrics.epochs) {
            epochs.push_back({{"epoch", e.epoch},
                              {"lr", e.lr},
                              {"train_loss", e.train_loss},
                              {"train_acc", e.train_acc},
                              {"val_acc", e.val_acc}});
        }
        jr["epochs"] = std::move(epochs);
        out.push_back(std::move(jr));
    }
    return nlohmann::json{{"runs", std::move(out)}}.dump(2);
}

std::string summary_to_json(std::span<const SweepSummaryRow> rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const SweepSummaryRow& r : rows) {
        out.push_back({{"axis_value", r.axis_value},
                       {"mean_val_acc", r.mean_val_acc},
                       {"std_val_acc", r.std_val_acc},
                       {"mean_test_acc", r.mean_test_acc},
                       {"std_test_acc", r.std_test_acc}});
    }
    return nlohmann::json{{"summary", std::move(out)}}.dump(2);
}

}  // namespace ghostnoise
