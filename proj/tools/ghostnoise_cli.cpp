#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "ghostnoise/config.hpp"
#include "ghostnoise/dist.hpp"
#include "ghostnoise/experiment.hpp"
#include "ghostnoise/verify.hpp"
#include "json.hpp"

namespace gn = ghostnoise;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("cannot open config file: " + path);
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) {
        throw std::runtime_error("cannot write " + path.string());
    }
    f << text;
}

void expect_keys(const nlohmann::json& obj, const std::string& path,
                 std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* key : allowed) {
            if (item.key() == key) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw std::runtime_error("config: unknown key '" + path + "." +
                                     item.key() + "'");
        }
    }
}

gn::DistConfig parse_dist_config(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    expect_keys(j, "$", {"model", "draws", "batch", "bins", "seed",
                         "thresholds"});
    gn::DistConfig cfg;
    const nlohmann::json& m = j.at("model");
    expect_keys(m, "model",
                {"kind", "ghost_size", "spatial_size", "sigma_b2", "sigma_i2"});
    const std::string kind =
        m.contains("kind") ? m.at("kind").get<std::string>() : "conv";
    cfg.model.ghost_size = m.at("ghost_size").get<std::size_t>();
    if (kind == "1d") {
        cfg.model.spatial_size = 1;
        cfg.model.inter_sample_var = 1.0;
        cfg.model.intra_sample_var = 0.0;
    } else if (kind == "conv") {
        cfg.model.spatial_size = m.at("spatial_size").get<std::size_t>();
        cfg.model.inter_sample_var = m.at("sigma_b2").get<double>();
        cfg.model.intra_sample_var = m.at("sigma_i2").get<double>();
    } else {
        throw std::runtime_error("config: unknown model kind '" + kind + "'");
    }
    if (j.contains("draws")) cfg.draws = j.at("draws").get<std::size_t>();
    if (j.contains("batch")) cfg.batch = j.at("batch").get<std::size_t>();
    if (j.contains("bins")) cfg.bins = j.at("bins").get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("thresholds")) {
        const nlohmann::json& t = j.at("thresholds");
        expect_keys(t, "thresholds",
                    {"shift_var_rtol", "s2_mean_rtol", "s2_var_rtol",
                     "ks_max"});
        if (t.contains("shift_var_rtol")) {
            cfg.thresholds.shift_var_rtol =
                t.at("shift_var_rtol").get<double>();
        }
        if (t.contains("s2_mean_rtol")) {
            cfg.thresholds.s2_mean_rtol = t.at("s2_mean_rtol").get<double>();
        }
        if (t.contains("s2_var_rtol")) {
            cfg.thresholds.s2_var_rtol = t.at("s2_var_rtol").get<double>();
        }
        if (t.contains("ks_max")) {
            cfg.thresholds.ks_max = t.at("ks_max").get<double>();
        }
    }
    return cfg;
}

void write_traces(const std::vector<gn::NoiseTrace>& traces,
                  const fs::path& out, const std::string& format) {
    for (const gn::NoiseTrace& t : traces) {
        for (const gn::NoiseKind kind :
             {gn::NoiseKind::shift, gn::NoiseKind::scale}) {
            const gn::TraceDocument doc = gn::trace_document(t, kind);
            const std::string stem =
                "trace_" + doc.layer + "_epoch" + std::to_string(doc.epoch) +
                (kind == gn::NoiseKind::shift ? "_shift" : "_scale");
            if (format == "json") {
                write_file(out / (stem + ".json"),
                           gn::trace_document_to_json(doc));
            } else {
                std::ofstream f(out / (stem + ".csv"));
                gn::write_trace_csv(f, doc);
            }
        }
    }
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::string format = "csv";
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
    auto* c = cmd->add_option("--config", opts.config_path,
                              "JSON configuration file");
    if (config_required) {
        c->required();
    }
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--format", opts.format, "report format")
        ->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--seed", opts.seed, "root seed override");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Ghost batch normalization, exclusive batch normalization and ghost "
        "noise injection: verification suites, distribution probes, training "
        "runs and sweeps."};
    app.require_subcommand(1);

    CommonOpts verify_opts, dist_opts, train_opts, sweep_opts, noise_opts;
    std::size_t trials = 1000;
    std::string fault;
    int parallel = 1;

    CLI::App* verify_cmd =
        app.add_subcommand("verify", "run the algebraic invariant suite");
    add_common(verify_cmd, verify_opts, false);
    verify_cmd->add_option("--trials", trials, "trials per invariant");
    verify_cmd->add_option(
        "--inject-fault", fault,
        "testing aid: 'eps-misplacement' corrupts the double-normalization "
        "route; the equivalence invariant must then fail");

    CLI::App* dist_cmd = app.add_subcommand(
        "dist", "compare empirical ghost noise with the analytical laws");
    add_common(dist_cmd, dist_opts, true);

    CLI::App* train_cmd = app.add_subcommand("train", "train one model");
    add_common(train_cmd, train_opts, true);

    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "run a hyperparameter sweep");
    add_common(sweep_cmd, sweep_opts, true);
    sweep_cmd->add_option("--parallel", parallel, "worker threads");

    CLI::App* noise_cmd = app.add_subcommand(
        "noise-stats", "train while recording ghost-noise traces");
    add_common(noise_cmd, noise_opts, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify_cmd->parsed()) {
            const CommonOpts& o = verify_opts;
            fs::create_directories(o.out_dir);
            gn::VerifyOptions vo;
            vo.trials = trials;
            if (o.seed) {
                vo.seed = *o.seed;
            }
            if (!fault.empty()) {
                if (fault != "eps-misplacement") {
                    throw std::runtime_error("unknown fault mode: " + fault);
                }
                vo.inject_eps_fault = true;
            }
            std::cout << "seed: " << vo.seed << "\n";
            const auto results = gn::run_verification(vo);
            for (const gn::InvariantResult& r : results) {
                std::cout << (r.pass ? "PASS" : "FAIL") << ' ' << r.name
                          << " trials=" << r.trials
                          << " worst=" << gn::format_double(r.worst)
                          << " threshold=" << gn::format_double(r.threshold)
                          << "\n";
            }
            if (o.format == "json") {
                write_file(fs::path(o.out_dir) / "verify_report.json",
                           gn::verify_to_json(results, vo.seed));
            } else {
                std::ofstream f(fs::path(o.out_dir) / "verify_report.csv");
                gn::write_verify_csv(f, results);
            }
            return gn::all_pass(results) ? 0 : 1;
        }

        if (dist_cmd->parsed()) {
            const CommonOpts& o = dist_opts;
            fs::create_directories(o.out_dir);
            gn::DistConfig cfg = parse_dist_config(read_file(o.config_path));
            if (o.seed) {
                cfg.seed = *o.seed;
            }
            std::cout << "seed: " << cfg.seed << "\n";
            const gn::DistReport report = gn::run_dist_check(cfg);
            for (const gn::DistRow& r : report.rows) {
                std::cout << (r.pass ? "PASS" : "FAIL") << ' ' << r.quantity
                          << " analytical=" << gn::format_double(r.analytical)
                          << " empirical=" << gn::format_double(r.empirical)
                          << " rel_error=" << gn::format_double(r.rel_error)
                          << " ks=" << gn::format_double(r.ks) << "\n";
            }
            if (o.format == "json") {
                write_file(fs::path(o.out_dir) / "dist_report.json",
                           gn::dist_to_json(report));
            } else {
                std::ofstream f(fs::path(o.out_dir) / "dist_report.csv");
                gn::write_dist_csv(f, report);
                std::ofstream h(fs::path(o.out_dir) / "dist_histograms.csv");
                gn::write_histograms_csv(h, report);
            }
            return report.pass ? 0 : 1;
        }

        const bool is_train = train_cmd->parsed();
        const bool is_sweep = sweep_cmd->parsed();
        const bool is_noise = noise_cmd->parsed();
        const CommonOpts& o =
            is_train ? train_opts : (is_sweep ? sweep_opts : noise_opts);
        fs::create_directories(o.out_dir);
        gn::ExperimentConfig cfg =
            gn::parse_experiment_config(read_file(o.config_path));
        if (o.seed) {
            cfg.train.seed = *o.seed;
        }
        const gn::Dataset data =
            gn::build_dataset(cfg.data, cfg.train.eval_fraction);
        gn::resolve_model(cfg.model, data);
        const fs::path out(o.out_dir);

        if (is_sweep) {
            if (!cfg.sweep) {
                throw std::runtime_error(
                    "config: sweep command needs a 'sweep' section");
            }
            std::cout << "seed: " << cfg.train.seed << "\n";
            const gn::SweepResult result =
                gn::sweep(cfg.model, cfg.train, data, cfg.sweep->axis,
                          cfg.sweep->seeds, parallel);
            {
                std::ofstream f(out / "sweep_runs.csv");
                gn::write_runs_csv(f, result.runs);
                std::ofstream s(out / "sweep_summary.csv");
                gn::write_summary_csv(s, result.summary);
            }
            write_file(out / "sweep_runs.json",
                       gn::runs_to_json(result.runs));
            write_file(out / "sweep_summary.json",
                       gn::summary_to_json(result.summary));
            for (const gn::SweepSummaryRow& r : result.summary) {
                std::cout << "axis=" << r.axis_value << " mean_val_acc="
                          << gn::format_double(r.mean_val_acc)
                          << " std_val_acc="
                          << gn::format_double(r.std_val_acc) << "\n";
            }
            return 0;
        }

        if (is_noise && cfg.train.trace_epochs.empty()) {
            throw std::runtime_error(
                "config: noise-stats needs train.trace_epochs");
        }

        std::cout << "seed: " << cfg.train.seed << "\n";
        gn::RunRecord rec;
        rec.run_id = "r0";
        rec.seed = cfg.train.seed;
        rec.metrics = gn::run_experiment(cfg.model, cfg.train, data);

        if (is_noise && rec.metrics.traces.empty()) {
            throw std::runtime_error(
                "config: noise-stats collected no traces; the model needs at "
                "least one gni injector");
        }

        const std::vector<gn::RunRecord> runs{rec};
        {
            std::ofstream f(out / "metrics.csv");
            gn::write_runs_csv(f, runs);
        }
        write_file(out / "metrics.json", gn::runs_to_json(runs));
        write_traces(rec.metrics.traces, out, o.format);

        if (is_noise) {
            // Effective ghost-batch-size fit per trace, one row per kind.
            std::ostringstream fit;
            fit << "layer,epoch,kind,effective_n\n";
            const std::size_t grid_data[] = {2,  4,  8,   16,  24, 32,
                                             48, 64, 128, 256, 512};
            const std::span<const std::size_t> grid(grid_data);
            for (const gn::NoiseTrace& t : rec.metrics.traces) {
                fit << t.layer() << ',' << t.epoch() << ",shift,"
                    << gn::fit_effective_n(t.shift_samples(), grid,
                                           gn::NoiseKind::shift)
                    << "\n";
                fit << t.layer() << ',' << t.epoch() << ",scale,"
                    << gn::fit_effective_n(t.scale_samples(), grid,
                                           gn::NoiseKind::scale)
                    << "\n";
            }
            write_file(out / "effective_n.csv", fit.str());
        }

        std::cout << "final_val_acc="
                  << gn::format_double(gn::final_val_acc(rec.metrics))
                  << " test_acc="
                  << gn::format_double(rec.metrics.test_accuracy)
                  << (rec.metrics.diverged ? " diverged=1" : " diverged=0")
                  << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
